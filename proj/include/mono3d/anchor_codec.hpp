#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "mono3d/geometry.hpp"

namespace mono3d {

/// Mean 3D parameters attached to a 2D anchor template. z is the projected
/// depth Z_p; alpha is the observation angle.
struct AnchorStats3D {
  double z = 0.0;
  double w = 0.0;
  double h = 0.0;
  double l = 0.0;
  double alpha = 0.0;
};

struct AnchorTemplate {
  double w = 0.0;
  double h = 0.0;
  AnchorStats3D stats;
  /// Objects that contributed to stats; 0 means the global-mean fallback.
  std::size_t matched = 0;
};

/// Template placed at a grid cell.
struct Anchor {
  double x = 0.0;  // pixel center
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  AnchorStats3D stats;
  std::size_t template_index = 0;
};

/// Network regression outputs for one anchor.
struct BoxDeltas {
  std::array<double, 4> t2d{};  // tx, ty, tw, th
  std::array<double, 7> t3d{};  // tx, ty, tz, tw, th, tl, talpha
};

/// Projected 3D box: image position of the 3D center, projected depth,
/// dimensions and observation angle.
struct ProjectedBox3D {
  double xp = 0.0;
  double yp = 0.0;
  double zp = 0.0;
  double w = 0.0;
  double h = 0.0;
  double l = 0.0;
  double alpha = 0.0;
};

/// Training target / decoded prediction for one object.
struct BoxPair {
  Box2D box2d;
  ProjectedBox3D box3d;
};

/// 24 * 12^(i/11), i = 0..11.
std::vector<double> default_anchor_sizes();
/// {0.5, 1.0, 1.5}
std::vector<double> default_aspect_ratios();

/// Size-major template list: index = size_index * ratios.size() + ratio_index.
/// Ratio r maps size s to (w, h) = (s / sqrt(r), s * sqrt(r)).
std::vector<AnchorTemplate> make_anchor_templates(std::span<const double> sizes,
                                                  std::span<const double> ratios);
std::vector<AnchorTemplate> default_anchor_templates();

/// Anchors for every cell of a height x width feature map: cell (i, j) is
/// centered at (j*S + S/2, i*S + S/2); cells row-major, templates innermost.
std::vector<Anchor> generate_anchor_grid(std::size_t height, std::size_t width,
                                         double stride,
                                         std::span<const AnchorTemplate> templates);

/// Per template, the mean 3D parameters of the objects whose 2D box has IoU
/// strictly greater than iou_threshold with the template centered on the
/// object. Unmatched templates receive the mean over all objects. Throws
/// std::invalid_argument on an empty object list.
std::vector<AnchorTemplate> fit_anchor_3d_stats(
    std::span<const AnchorTemplate> templates, std::span<const BoxPair> objects,
    double iou_threshold = 0.5);

/// One template per line: w h z w3d h3d l3d alpha matched.
void write_anchor_templates(std::ostream& out,
                            std::span<const AnchorTemplate> templates);
std::vector<AnchorTemplate> read_anchor_templates(std::istream& in);

BoxPair decode(const Anchor& anchor, const BoxDeltas& deltas);
/// Inverse of decode; angle residual wrapped to (-pi, pi]. Throws
/// std::invalid_argument if a target size is not positive.
BoxDeltas encode(const Anchor& anchor, const BoxPair& target);

/// Target for an object seen through a camera: 2D box plus the projection of
/// the geometric 3D center.
BoxPair make_target(const Box2D& box2d, const Box3D& box3d,
                    const CameraIntrinsics& cam);
/// Camera-frame box from a decoded projected box; yaw from alpha.
Box3D lift_to_camera(const ProjectedBox3D& box, const CameraIntrinsics& cam);

}  // namespace mono3d
