#include "mono3d/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mono3d {

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    const Detection& d = dets[i];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == d.class_id && iou_2d(k.box2d, d.box2d) > iou_threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> confidence_filter(std::span<const Detection> dets,
                                         double threshold) {
  std::vector<Detection> out;
  std::copy_if(dets.begin(), dets.end(), std::back_inserter(out),
               [&](const Detection& d) { return d.score >= threshold; });
  return out;
}

double envelope_l1(const Box3D& box, const Box2D& target, const CameraIntrinsics& cam) {
  const Box2D env = project_box(box, cam);
  return std::abs(env.x1 - target.x1) + std::abs(env.y1 - target.y1) +
         std::abs(env.x2 - target.x2) + std::abs(env.y2 - target.y2);
}

RotationResult optimize_rotation(const Detection& det, const CameraIntrinsics& cam,
                                 const RotationSearch& search) {
  RotationResult out;
  out.detection = det;
  Box3D box = det.box3d;
  double best;
  try {
    best = envelope_l1(box, det.box2d, cam);
  } catch (const BehindCameraError&) {
    out.behind_camera = true;
    return out;
  }
  out.objective.push_back(best);
  // Returns +inf for yaw values that push a corner behind the camera.
  auto objective_at = [&](double yaw) {
    Box3D trial = box;
    trial.yaw = wrap_angle(yaw);
    try {
      return envelope_l1(trial, det.box2d, cam);
    } catch (const BehindCameraError&) {
      return HUGE_VAL;
    }
  };
  double step = search.initial_step;
  while (step >= search.min_step && out.iterations < search.max_iterations) {
    ++out.iterations;
    const double up = objective_at(box.yaw + step);
    const double down = objective_at(box.yaw - step);
    if (up < best && up <= down) {
      box.yaw = wrap_angle(box.yaw + step);
      best = up;
    } else if (down < best) {
      box.yaw = wrap_angle(box.yaw - step);
      best = down;
    } else {
      step *= 0.5;
    }
    out.objective.push_back(best);
  }
  box.alpha = yaw_to_alpha(box.yaw, box.x, box.z);
  out.detection.box3d = box;
  return out;
}

}  // namespace mono3d
