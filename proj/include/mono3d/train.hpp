#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "mono3d/tensor.hpp"

namespace mono3d {

struct TrainConfig {
  double lr_target = 0.004;
  double lr_floor = 4e-8;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch = 4;
  /// Linear ramp from 0 reaching lr_target at this step.
  std::size_t warmup_steps = 1;
  /// Number of update steps; the last one (total_steps - 1) runs at lr_floor.
  std::size_t total_steps = 2;

  /// Warmup of one epoch, cosine over the remaining epochs.
  static TrainConfig for_epochs(std::size_t dataset_size, std::size_t epochs,
                                std::size_t batch = 4);
  void validate() const;
};

/// Linear warmup then cosine annealing to lr_floor.
double lr_at(std::size_t step, const TrainConfig& config);

/// Momentum SGD with L2 weight decay, in place:
///   v = momentum * v + (g + weight_decay * p);  p -= lr * v.
/// velocity must match params and starts zero-filled.
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads,
              std::span<Tensor> velocity, double lr, const TrainConfig& config);

struct TrainRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double cls = 0.0;
  double loss_2d = 0.0;
  double loss_3d = 0.0;
  double total = 0.0;
};

/// "step,lr,L_cls,L_2d,L_3d,L_total" header plus one row per record.
void write_loss_trace(std::ostream& out, std::span<const TrainRecord> trace);

}  // namespace mono3d
