#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mono3d/geometry.hpp"

namespace mono3d {

struct Detection {
  int class_id = 0;
  double score = 0.0;
  Box2D box2d;
  /// Camera-frame box; box3d.alpha is the observation angle.
  Box3D box3d;
};

/// Greedy suppression on 2D IoU, per class. Candidates are visited by
/// descending score, ties by lower input index; a candidate is dropped when
/// its IoU with an already kept box of the same class exceeds iou_threshold.
/// Output is in visiting order.
std::vector<Detection> nms(std::span<const Detection> dets,
                           double iou_threshold = 0.4);

/// Keeps detections with score >= threshold, preserving order.
std::vector<Detection> confidence_filter(std::span<const Detection> dets,
                                         double threshold = 0.75);

struct RotationSearch {
  double initial_step = 0.3;
  double min_step = 1e-3;
  std::size_t max_iterations = 64;
};

struct RotationResult {
  Detection detection;
  /// Set when a corner lies on or behind the camera; detection is unchanged.
  bool behind_camera = false;
  std::size_t iterations = 0;
  /// Objective before the first iteration, then after each iteration.
  std::vector<double> objective;
};

/// L1 distance between the projected 3D box envelope and the 2D box.
double envelope_l1(const Box3D& box, const Box2D& target, const CameraIntrinsics& cam);

/// Coordinate search over yaw: evaluate yaw +- step and move to the better
/// one if it strictly improves (ties prefer +), otherwise halve the step; stop below min_step or after
/// max_iterations. alpha is updated to stay consistent with the new yaw.
RotationResult optimize_rotation(const Detection& det, const CameraIntrinsics& cam,
                                 const RotationSearch& search = {});

}  // namespace mono3d
