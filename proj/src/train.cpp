#include "mono3d/train.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace mono3d {

TrainConfig TrainConfig::for_epochs(std::size_t dataset_size, std::size_t epochs,
                                    std::size_t batch) {
  if (batch == 0 || dataset_size == 0 || epochs == 0)
    throw std::invalid_argument("for_epochs: sizes must be positive");
  TrainConfig c;
  c.batch = batch;
  const std::size_t per_epoch = (dataset_size + batch - 1) / batch;
  c.warmup_steps = per_epoch;
  c.total_steps = per_epoch * epochs;
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (!(lr_target > 0.0) || !(lr_floor > 0.0) || lr_floor > lr_target)
    throw std::invalid_argument("learning rates must satisfy 0 < floor <= target");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
  if (batch == 0) throw std::invalid_argument("batch must be positive");
  if (warmup_steps == 0 || warmup_steps >= total_steps)
    throw std::invalid_argument("need 0 < warmup_steps < total_steps");
}

double lr_at(std::size_t step, const TrainConfig& c) {
  if (step <= c.warmup_steps)
    return c.lr_target * static_cast<double>(step) /
           static_cast<double>(c.warmup_steps);
  const std::size_t last = c.total_steps - 1;
  if (step >= last) return c.lr_floor;
  const double t = static_cast<double>(step - c.warmup_steps) /
                   static_cast<double>(last - c.warmup_steps);
  return c.lr_floor +
         (c.lr_target - c.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads,
              std::span<Tensor> velocity, double lr, const TrainConfig& c) {
  if (grads.size() != params.size() || velocity.size() != params.size())
    throw ShapeError("sgd_step: params, grads and velocity must align");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    Tensor& v = velocity[i];
    if (!(g.shape() == p.shape()) || !(v.shape() == p.shape()))
      throw ShapeError("sgd_step: shape mismatch at parameter " + std::to_string(i));
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = c.momentum * v[k] + (g[k] + c.weight_decay * p[k]);
      p[k] -= lr * v[k];
    }
  }
}

void write_loss_trace(std::ostream& out, std::span<const TrainRecord> trace) {
  out << "step,lr,L_cls,L_2d,L_3d,L_total\n";
  const auto old = out.precision(17);
  for (const TrainRecord& r : trace)
    out << r.step << ',' << r.lr << ',' << r.cls << ',' << r.loss_2d << ','
        << r.loss_3d << ',' << r.total << '\n';
  out.precision(old);
}

}  // namespace mono3d
