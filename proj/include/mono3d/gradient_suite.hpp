#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mono3d/grad_check.hpp"

namespace mono3d {

struct GradientCase {
  std::string name;
  std::function<GradCheckReport()> run;
};

/// Finite-difference checks of every differentiable op on fixed random
/// inputs: conv2d, bilinear sampling, AlignConv, attention map, PA2, ANAB
/// (both sharing modes), the three losses, 2D decoding, and the assembled
/// toy detector loss.
std::vector<GradientCase> gradient_suite(GradCheckOptions options = {});

std::vector<GradCheckReport> run_gradient_suite(GradCheckOptions options = {});

}  // namespace mono3d
