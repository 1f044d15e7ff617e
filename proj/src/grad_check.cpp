#include "mono3d/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include "mono3d/ops.hpp"

namespace mono3d {

namespace {

struct Evaluation {
  double value = 0.0;
  std::optional<std::string> non_finite_op;
};

// Builds the graph on a fresh tape and contracts the output to a scalar.
class ScalarObjective {
 public:
  ScalarObjective(const GraphFn& f, std::uint64_t seed) : f_(f), seed_(seed) {}

  Var build(Tape& tape, std::span<const Var> leaves) {
    Var out = f_(tape, leaves);
    if (out.value().size() == 1) return out;
    if (!projection_ || projection_->shape() != out.shape()) {
      std::mt19937_64 rng(seed_);
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      Tensor w(out.shape());
      for (double& v : w.values()) v = dist(rng);
      projection_ = std::move(w);
    }
    return weighted_sum(out, *projection_);
  }

  Evaluation evaluate(const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const Tensor& t : inputs) leaves.push_back(tape.constant(t));
    Var out = build(tape, leaves);
    return {out.value()[0], tape.first_non_finite()};
  }

 private:
  const GraphFn& f_;
  std::uint64_t seed_;
  std::optional<Tensor> projection_;
};

}  // namespace

GradCheckReport grad_check(const std::string& name, const GraphFn& f,
                           std::vector<Tensor> inputs,
                           GradCheckOptions options) {
  GradCheckReport report;
  report.name = name;
  report.tolerance = options.tolerance;
  ScalarObjective objective(f, options.seed);

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    Var out = objective.build(tape, leaves);
    if (auto bad = tape.first_non_finite()) {
      report.failure = "non-finite output of op '" + *bad + "'";
      return report;
    }
    tape.backward(out);
    for (Var v : leaves) analytic.push_back(tape.grad_tensor(v));
  }

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& input = inputs[k];
    for (std::size_t i = 0; i < input.size(); ++i) {
      const double saved = input[i];
      input[i] = saved + options.step;
      const Evaluation plus = objective.evaluate(inputs);
      input[i] = saved - options.step;
      const Evaluation minus = objective.evaluate(inputs);
      input[i] = saved;
      for (const Evaluation* e : {&plus, &minus}) {
        if (e->non_finite_op) {
          report.failure = "non-finite output of op '" + *e->non_finite_op +
                           "' while perturbing input " + std::to_string(k);
          return report;
        }
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      if (!(err <= report.max_rel_error)) report.max_rel_error = err;
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  if (!report.passed) {
    report.failure = "max relative error " + std::to_string(report.max_rel_error) +
                     " >= " + std::to_string(options.tolerance);
  }
  return report;
}

}  // namespace mono3d
