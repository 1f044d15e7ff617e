#include "mono3d/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace mono3d {

namespace {

constexpr double kAreaEpsilon = 1e-12;

using Vec2 = std::array<double, 2>;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

double signed_area(const std::vector<Vec2>& poly) {
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    s += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * s;
}

std::vector<Vec2> counter_clockwise(const std::array<Vec2, 4>& quad) {
  std::vector<Vec2> poly(quad.begin(), quad.end());
  if (signed_area(poly) < 0.0) std::reverse(poly.begin(), poly.end());
  return poly;
}

Vec2 line_intersection(const Vec2& p, const Vec2& q, const Vec2& a,
                       const Vec2& b) {
  // Segment p-q against the infinite line through a-b.
  const double dp = cross(a, b, p);
  const double dq = cross(a, b, q);
  const double t = dp / (dp - dq);
  return {p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])};
}

// Sutherland-Hodgman: clip `subject` by every edge of the convex `clip`.
// Both polygons must be counter-clockwise.
std::vector<Vec2> clip_convex(std::vector<Vec2> subject,
                              const std::vector<Vec2>& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % clip.size()];
    std::vector<Vec2> kept;
    kept.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Vec2& cur = subject[i];
      const Vec2& prev = subject[(i + subject.size() - 1) % subject.size()];
      const bool cur_in = cross(a, b, cur) >= 0.0;
      const bool prev_in = cross(a, b, prev) >= 0.0;
      if (cur_in) {
        if (!prev_in) kept.push_back(line_intersection(prev, cur, a, b));
        kept.push_back(cur);
      } else if (prev_in) {
        kept.push_back(line_intersection(prev, cur, a, b));
      }
    }
    subject = std::move(kept);
  }
  return subject;
}

double vertical_overlap(const Box3D& a, const Box3D& b) {
  const double top = std::max(a.y - a.h, b.y - b.h);
  const double bottom = std::min(a.y, b.y);
  return std::max(0.0, bottom - top);
}

}  // namespace

CameraIntrinsics CameraIntrinsics::pinhole(double focal, double cx, double cy) {
  CameraIntrinsics cam;
  cam.k = {{{focal, 0.0, cx, 0.0}, {0.0, focal, cy, 0.0}, {0.0, 0.0, 1.0, 0.0}}};
  return cam;
}

void CameraIntrinsics::validate() const {
  if (!(k[0][0] > 0.0) || !(k[1][1] > 0.0))
    throw std::invalid_argument("camera focal entries must be positive");
}

Box2D Box2D::from_center(double cx, double cy, double w, double h) {
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Projection project(const CameraIntrinsics& cam, const Point3& point) {
  if (!(point.z > 0.0))
    throw BehindCameraError("project: point has Z <= 0");
  const auto& k = cam.k;
  const double u = k[0][0] * point.x + k[0][1] * point.y + k[0][2] * point.z + k[0][3];
  const double v = k[1][0] * point.x + k[1][1] * point.y + k[1][2] * point.z + k[1][3];
  const double s = k[2][0] * point.x + k[2][1] * point.y + k[2][2] * point.z + k[2][3];
  if (!(s > 0.0)) throw BehindCameraError("project: depth scale <= 0");
  return {u / s, v / s, s};
}

Point3 backproject(const CameraIntrinsics& cam, const Projection& proj) {
  if (!(proj.z > 0.0))
    throw BehindCameraError("backproject: Z_p <= 0");
  Eigen::Matrix3d m;
  Eigen::Vector3d rhs;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = cam.k[r][c];
    rhs(r) = -cam.k[r][3];
  }
  rhs(0) += proj.x * proj.z;
  rhs(1) += proj.y * proj.z;
  rhs(2) += proj.z;
  const Eigen::Vector3d p = m.partialPivLu().solve(rhs);
  return {p(0), p(1), p(2)};
}

double wrap_angle(double angle) {
  constexpr double pi = std::numbers::pi;
  double a = std::remainder(angle, 2.0 * pi);  // [-pi, pi]
  if (a <= -pi) a += 2.0 * pi;
  return a;
}

double alpha_to_yaw(double alpha, double x, double z) {
  return wrap_angle(alpha + std::atan2(x, z));
}

double yaw_to_alpha(double yaw, double x, double z) {
  return wrap_angle(yaw - std::atan2(x, z));
}

std::array<Point3, 8> box3d_corners(const Box3D& box) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  const double hl = 0.5 * box.l;
  const double hw = 0.5 * box.w;
  const std::array<Vec2, 4> local = {{{hl, hw}, {hl, -hw}, {-hl, -hw}, {-hl, hw}}};
  std::array<Point3, 8> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const double lx = local[i][0];
    const double lz = local[i][1];
    const double x = box.x + c * lx + s * lz;
    const double z = box.z - s * lx + c * lz;
    out[i] = {x, box.y, z};
    out[i + 4] = {x, box.y - box.h, z};
  }
  return out;
}

Box2D project_box(const Box3D& box, const CameraIntrinsics& cam) {
  Box2D env{1e300, 1e300, -1e300, -1e300};
  for (const Point3& p : box3d_corners(box)) {
    const Projection q = project(cam, p);
    env.x1 = std::min(env.x1, q.x);
    env.y1 = std::min(env.y1, q.y);
    env.x2 = std::max(env.x2, q.x);
    env.y2 = std::max(env.y2, q.y);
  }
  return env;
}

std::array<std::array<double, 2>, 4> bev_footprint(const Box3D& box) {
  const auto corners = box3d_corners(box);
  std::array<Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) out[i] = {corners[i].x, corners[i].z};
  return out;
}

double iou_2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const std::vector<Vec2> pa = counter_clockwise(bev_footprint(a));
  const std::vector<Vec2> pb = counter_clockwise(bev_footprint(b));
  const std::vector<Vec2> inter = clip_convex(pa, pb);
  if (inter.size() < 3) return 0.0;
  const double area = std::abs(signed_area(inter));
  return area < kAreaEpsilon ? 0.0 : area;
}

double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.w * a.l + b.w * b.l - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double dy = vertical_overlap(a, b);
  if (dy <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dy;
  if (inter <= 0.0) return 0.0;
  const double uni = a.w * a.h * a.l + b.w * b.h * b.l - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace mono3d
