#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mono3d/tape.hpp"
#include "mono3d/tensor.hpp"

namespace mono3d {

/// Builds a graph from leaves bound to the checked inputs and returns its
/// output. Must be pure and deterministic.
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool passed = false;
  /// Empty on success; otherwise names the offending op or input.
  std::string failure;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Seed of the random projection that reduces non-scalar outputs.
  std::uint64_t seed = 0x5eed;
};

/// Compares reverse-mode gradients against central differences. Outputs with
/// more than one element are contracted with a fixed random weight tensor.
/// The error per element is |analytic - numeric| / max(1, |analytic|,
/// |numeric|); the report carries the maximum.
GradCheckReport grad_check(const std::string& name, const GraphFn& f,
                           std::vector<Tensor> inputs,
                           GradCheckOptions options = {});

}  // namespace mono3d
