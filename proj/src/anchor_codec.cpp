#include "mono3d/anchor_codec.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mono3d {

namespace {

void accumulate(AnchorStats3D& sum, const ProjectedBox3D& b) {
  sum.z += b.zp;
  sum.w += b.w;
  sum.h += b.h;
  sum.l += b.l;
  sum.alpha += b.alpha;
}

AnchorStats3D divided(const AnchorStats3D& s, double n) {
  return {s.z / n, s.w / n, s.h / n, s.l / n, s.alpha / n};
}

}  // namespace

std::vector<double> default_anchor_sizes() {
  std::vector<double> sizes(12);
  for (int i = 0; i < 12; ++i) sizes[i] = 24.0 * std::pow(12.0, i / 11.0);
  return sizes;
}

std::vector<double> default_aspect_ratios() { return {0.5, 1.0, 1.5}; }

std::vector<AnchorTemplate> make_anchor_templates(std::span<const double> sizes,
                                                  std::span<const double> ratios) {
  std::vector<AnchorTemplate> out;
  out.reserve(sizes.size() * ratios.size());
  for (double s : sizes) {
    if (!(s > 0.0)) throw std::invalid_argument("anchor size must be positive");
    for (double r : ratios) {
      if (!(r > 0.0)) throw std::invalid_argument("aspect ratio must be positive");
      AnchorTemplate t;
      t.w = s / std::sqrt(r);
      t.h = s * std::sqrt(r);
      out.push_back(t);
    }
  }
  return out;
}

std::vector<AnchorTemplate> default_anchor_templates() {
  const auto sizes = default_anchor_sizes();
  const auto ratios = default_aspect_ratios();
  return make_anchor_templates(sizes, ratios);
}

std::vector<Anchor> generate_anchor_grid(std::size_t height, std::size_t width,
                                         double stride,
                                         std::span<const AnchorTemplate> templates) {
  if (!(stride >= 1.0)) throw std::invalid_argument("anchor stride must be >= 1");
  std::vector<Anchor> out;
  out.reserve(height * width * templates.size());
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j)
      for (std::size_t t = 0; t < templates.size(); ++t) {
        Anchor a;
        a.x = static_cast<double>(j) * stride + 0.5 * stride;
        a.y = static_cast<double>(i) * stride + 0.5 * stride;
        a.w = templates[t].w;
        a.h = templates[t].h;
        a.stats = templates[t].stats;
        a.template_index = t;
        out.push_back(a);
      }
  return out;
}

std::vector<AnchorTemplate> fit_anchor_3d_stats(
    std::span<const AnchorTemplate> templates, std::span<const BoxPair> objects,
    double iou_threshold) {
  if (objects.empty())
    throw std::invalid_argument("fit_anchor_3d_stats: no labelled objects");
  AnchorStats3D global;
  for (const BoxPair& o : objects) accumulate(global, o.box3d);
  const AnchorStats3D global_mean =
      divided(global, static_cast<double>(objects.size()));

  std::vector<AnchorTemplate> out(templates.begin(), templates.end());
  for (AnchorTemplate& t : out) {
    AnchorStats3D sum;
    std::size_t n = 0;
    for (const BoxPair& o : objects) {
      const Box2D& b = o.box2d;
      const Box2D centered =
          Box2D::from_center(b.center_x(), b.center_y(), t.w, t.h);
      if (iou_2d(centered, b) > iou_threshold) {
        accumulate(sum, o.box3d);
        ++n;
      }
    }
    t.matched = n;
    t.stats = n ? divided(sum, static_cast<double>(n)) : global_mean;
  }
  return out;
}

void write_anchor_templates(std::ostream& out,
                            std::span<const AnchorTemplate> templates) {
  out << "# w h z w3d h3d l3d alpha matched\n";
  const auto old = out.precision(17);
  for (const AnchorTemplate& t : templates) {
    out << t.w << ' ' << t.h << ' ' << t.stats.z << ' ' << t.stats.w << ' '
        << t.stats.h << ' ' << t.stats.l << ' ' << t.stats.alpha << ' '
        << t.matched << '\n';
  }
  out.precision(old);
}

std::vector<AnchorTemplate> read_anchor_templates(std::istream& in) {
  std::vector<AnchorTemplate> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    AnchorTemplate t;
    if (!(row >> t.w >> t.h >> t.stats.z >> t.stats.w >> t.stats.h >> t.stats.l >>
          t.stats.alpha >> t.matched))
      throw std::runtime_error("anchor table line " + std::to_string(line_no) +
                               ": expected 8 fields");
    std::string extra;
    if (row >> extra)
      throw std::runtime_error("anchor table line " + std::to_string(line_no) +
                               ": trailing field '" + extra + "'");
    out.push_back(t);
  }
  return out;
}

BoxPair decode(const Anchor& a, const BoxDeltas& d) {
  BoxPair out;
  const double cx = d.t2d[0] * a.w + a.x;
  const double cy = d.t2d[1] * a.h + a.y;
  const double w = std::exp(d.t2d[2]) * a.w;
  const double h = std::exp(d.t2d[3]) * a.h;
  out.box2d = Box2D::from_center(cx, cy, w, h);
  ProjectedBox3D& p = out.box3d;
  p.xp = d.t3d[0] * a.w + a.x;
  p.yp = d.t3d[1] * a.h + a.y;
  p.zp = d.t3d[2] + a.stats.z;
  p.w = std::exp(d.t3d[3]) * a.stats.w;
  p.h = std::exp(d.t3d[4]) * a.stats.h;
  p.l = std::exp(d.t3d[5]) * a.stats.l;
  p.alpha = wrap_angle(d.t3d[6] + a.stats.alpha);
  return out;
}

BoxDeltas encode(const Anchor& a, const BoxPair& target) {
  const Box2D& b = target.box2d;
  const ProjectedBox3D& p = target.box3d;
  if (!(b.width() > 0.0) || !(b.height() > 0.0))
    throw std::invalid_argument("encode: 2D box size must be positive");
  if (!(p.w > 0.0) || !(p.h > 0.0) || !(p.l > 0.0))
    throw std::invalid_argument("encode: 3D dimensions must be positive");
  if (!(a.stats.w > 0.0) || !(a.stats.h > 0.0) || !(a.stats.l > 0.0))
    throw std::invalid_argument("encode: anchor statistics are not fitted");
  BoxDeltas d;
  d.t2d = {(b.center_x() - a.x) / a.w, (b.center_y() - a.y) / a.h,
           std::log(b.width() / a.w), std::log(b.height() / a.h)};
  d.t3d = {(p.xp - a.x) / a.w,
           (p.yp - a.y) / a.h,
           p.zp - a.stats.z,
           std::log(p.w / a.stats.w),
           std::log(p.h / a.stats.h),
           std::log(p.l / a.stats.l),
           wrap_angle(p.alpha - a.stats.alpha)};
  return d;
}

BoxPair make_target(const Box2D& box2d, const Box3D& box3d,
                    const CameraIntrinsics& cam) {
  const Projection c = project(cam, box3d.geometric_center());
  return {box2d, {c.x, c.y, c.z, box3d.w, box3d.h, box3d.l, box3d.alpha}};
}

Box3D lift_to_camera(const ProjectedBox3D& p, const CameraIntrinsics& cam) {
  const Point3 center = backproject(cam, {p.xp, p.yp, p.zp});
  Box3D b;
  b.x = center.x;
  b.y = center.y + 0.5 * p.h;
  b.z = center.z;
  b.w = p.w;
  b.h = p.h;
  b.l = p.l;
  b.alpha = p.alpha;
  b.yaw = alpha_to_yaw(p.alpha, b.x, b.z);
  return b;
}

}  // namespace mono3d
