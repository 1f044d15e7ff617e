#pragma once

#include <array>
#include <stdexcept>

namespace mono3d {

/// Thrown when a point or box lies on or behind the image plane.
class BehindCameraError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// 3x4 projection matrix in pixel units (KITTI P2 layout).
struct CameraIntrinsics {
  std::array<std::array<double, 4>, 3> k{};

  /// Pinhole camera with no baseline translation.
  static CameraIntrinsics pinhole(double focal, double cx, double cy);
  double focal_x() const { return k[0][0]; }
  double focal_y() const { return k[1][1]; }
  /// Throws std::invalid_argument for non-positive focal entries.
  void validate() const;
};

/// Pixel position (x, y) plus depth scale z.
struct Projection {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct Box2D {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  static Box2D from_center(double cx, double cy, double w, double h);
};

/// Camera-frame cuboid. (x, y, z) is the center of the bottom face, KITTI
/// style; y points down, so the box spans [y - h, y] vertically.
struct Box3D {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double w = 0.0;  // along the rotated camera-z axis
  double h = 0.0;
  double l = 0.0;  // along the rotated camera-x axis
  double yaw = 0.0;
  double alpha = 0.0;

  Point3 bottom_center() const { return {x, y, z}; }
  Point3 geometric_center() const { return {x, y - 0.5 * h, z}; }
};

Projection project(const CameraIntrinsics& cam, const Point3& point);
Point3 backproject(const CameraIntrinsics& cam, const Projection& proj);

/// Wraps to (-pi, pi].
double wrap_angle(double angle);
double alpha_to_yaw(double alpha, double x, double z);
double yaw_to_alpha(double yaw, double x, double z);

/// Bottom four corners first, then the top four in the same order.
std::array<Point3, 8> box3d_corners(const Box3D& box);
/// Tight image-plane envelope of the projected corners. Throws
/// BehindCameraError if any corner has z <= 0.
Box2D project_box(const Box3D& box, const CameraIntrinsics& cam);

/// Ground-plane footprint corners (x, z) in the same order as the bottom face.
std::array<std::array<double, 2>, 4> bev_footprint(const Box3D& box);

double iou_2d(const Box2D& a, const Box2D& b);
double bev_intersection_area(const Box3D& a, const Box3D& b);
double iou_bev(const Box3D& a, const Box3D& b);
double iou_3d(const Box3D& a, const Box3D& b);

}  // namespace mono3d
