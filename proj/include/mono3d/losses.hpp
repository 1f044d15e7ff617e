#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mono3d/anchor_codec.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/tape.hpp"
#include "mono3d/tensor.hpp"

namespace mono3d {

struct LossConfig {
  double lambda_2d = 1.0;
  double lambda_3d = 1.0;
  /// Share of negatives kept by hard-negative mining.
  double hard_negative_fraction = 0.20;
  /// Anchors at or above this 2D IoU with a ground truth are positives.
  double positive_iou = 0.5;
  /// Anchors below this IoU with every ground truth are background.
  double negative_iou = 0.4;
  /// IoU floor inside -log(IoU).
  double iou_epsilon = 1e-7;

  void validate() const;
};

double smooth_l1(double x);

/// -log softmax(logits)[label].
double loss_cls(std::span<const double> logits, std::size_t label);
/// -log(max(IoU, eps)).
double loss_2d(const Box2D& pred, const Box2D& gt, double eps = 1e-7);
/// Sum of smooth L1 over paired components.
double loss_3d(std::span<const double> pred, std::span<const double> target);
double total_loss(double cls, double l2d, double l3d, const LossConfig& config);

/// Every index flagged positive, plus the ceil(fraction * n) highest-loss
/// remaining indices (n = number of non-positives). Ties go to the lower
/// index. Result is sorted ascending. An empty mask means no positives.
std::vector<std::size_t> mine_hard(std::span<const double> losses, double fraction,
                                   const std::vector<bool>& positive = {});

/// Per-row -log softmax(row)[label] of a logits matrix.
std::vector<double> cross_entropy_rows(const Tensor& logits,
                                       std::span<const std::size_t> labels);

// Tape versions. `rows` selects which matrix rows contribute; each loss is
// the mean over the selected rows (zero when none are selected).

Var cross_entropy(Var logits, std::span<const std::size_t> labels,
                  std::span<const std::size_t> rows);
/// pred is R x 4 corners (x1, y1, x2, y2); gt is indexed by row.
Var iou_loss(Var pred, std::span<const Box2D> gt,
             std::span<const std::size_t> rows, double eps = 1e-7);
/// Sum over columns of smooth L1(pred - target), target a constant R x K.
Var smooth_l1_loss(Var pred, const Tensor& target,
                   std::span<const std::size_t> rows);
/// R x 4 deltas to R x 4 corners around the matching anchors.
Var decode_boxes_2d(Var deltas, std::span<const Anchor> anchors);
Var total_loss(Var cls, Var l2d, Var l3d, const LossConfig& config);

}  // namespace mono3d
