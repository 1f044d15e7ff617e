#include "mono3d/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mono3d/ops.hpp"

namespace mono3d {

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (!t.is_matrix())
    throw ShapeError(std::string(what) + ": expected a matrix, got " +
                     to_string(t.shape()));
}

void require_rows(std::span<const std::size_t> rows, std::size_t n,
                  const char* what) {
  for (std::size_t r : rows)
    if (r >= n) throw std::out_of_range(std::string(what) + ": row out of range");
}

// log-sum-exp of a row, stabilised by the row maximum.
double log_sum_exp(std::span<const double> row) {
  const double peak = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - peak);
  return peak + std::log(z);
}

struct IouParts {
  double iou = 0.0;
  // dIoU / d(x1, y1, x2, y2) of the prediction.
  std::array<double, 4> grad{};
};

IouParts iou_with_grad(const Box2D& p, const Box2D& g) {
  IouParts out;
  const double ix1 = std::max(p.x1, g.x1), ix2 = std::min(p.x2, g.x2);
  const double iy1 = std::max(p.y1, g.y1), iy2 = std::min(p.y2, g.y2);
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return out;
  const double inter = iw * ih;
  const double pw = p.width(), ph = p.height();
  const double uni = pw * ph + g.area() - inter;
  out.iou = inter / uni;
  // IoU = I / (A_p + A_g - I).
  const double d_inter = (uni + inter) / (uni * uni);
  const double d_area = -inter / (uni * uni);
  const double di_dx1 = p.x1 > g.x1 ? -ih : 0.0;
  const double di_dx2 = p.x2 < g.x2 ? ih : 0.0;
  const double di_dy1 = p.y1 > g.y1 ? -iw : 0.0;
  const double di_dy2 = p.y2 < g.y2 ? iw : 0.0;
  out.grad = {d_inter * di_dx1 - d_area * ph, d_inter * di_dy1 - d_area * pw,
              d_inter * di_dx2 + d_area * ph, d_inter * di_dy2 + d_area * pw};
  return out;
}

}  // namespace

void LossConfig::validate() const {
  if (lambda_2d < 0.0 || lambda_3d < 0.0)
    throw std::invalid_argument("loss weights must be non-negative");
  if (!(hard_negative_fraction > 0.0 && hard_negative_fraction <= 1.0))
    throw std::invalid_argument("hard-negative fraction must be in (0, 1]");
  if (!(negative_iou <= positive_iou))
    throw std::invalid_argument("negative IoU must not exceed positive IoU");
  if (!(iou_epsilon > 0.0)) throw std::invalid_argument("iou epsilon must be > 0");
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double loss_cls(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw std::out_of_range("loss_cls: label out of range");
  return log_sum_exp(logits) - logits[label];
}

double loss_2d(const Box2D& pred, const Box2D& gt, double eps) {
  return -std::log(std::max(iou_2d(pred, gt), eps));
}

double loss_3d(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size())
    throw ShapeError("loss_3d: component count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += smooth_l1(pred[i] - target[i]);
  return s;
}

double total_loss(double cls, double l2d, double l3d, const LossConfig& config) {
  return cls + config.lambda_2d * l2d + config.lambda_3d * l3d;
}

std::vector<std::size_t> mine_hard(std::span<const double> losses, double fraction,
                                   const std::vector<bool>& positive) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("mine_hard: fraction must be in (0, 1]");
  if (!positive.empty() && positive.size() != losses.size())
    throw ShapeError("mine_hard: mask size mismatch");
  std::vector<std::size_t> chosen, negatives;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!positive.empty() && positive[i])
      chosen.push_back(i);
    else
      negatives.push_back(i);
  }
  // Guard against 0.2 * 5 landing a hair above 1.
  const auto keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(negatives.size()) - 1e-9));
  std::stable_sort(negatives.begin(), negatives.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  chosen.insert(chosen.end(), negatives.begin(),
                negatives.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<double> cross_entropy_rows(const Tensor& logits,
                                       std::span<const std::size_t> labels) {
  require_matrix(logits, "cross_entropy_rows");
  if (labels.size() != logits.rows())
    throw ShapeError("cross_entropy_rows: one label per row required");
  const std::size_t k = logits.cols();
  std::vector<double> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r)
    out[r] = loss_cls(logits.values().subspan(r * k, k), labels[r]);
  return out;
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels,
                  std::span<const std::size_t> rows) {
  const Tensor& x = logits.value();
  require_matrix(x, "cross_entropy");
  if (labels.size() != x.rows())
    throw ShapeError("cross_entropy: one label per row required");
  require_rows(rows, x.rows(), "cross_entropy");
  const std::size_t k = x.cols();
  for (std::size_t r : rows)
    if (labels[r] >= k) throw std::out_of_range("cross_entropy: label out of range");
  double total = 0.0;
  for (std::size_t r : rows) total += loss_cls(x.values().subspan(r * k, k), labels[r]);
  const double inv = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
  std::vector<std::size_t> sel(rows.begin(), rows.end());
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  Tape& tape = *logits.tape();
  const Var inputs[] = {logits};
  return tape.record(
      "cross_entropy", Tensor::scalar(total * inv), inputs,
      [&tape, logits, sel = std::move(sel), lab = std::move(lab), inv, k](
          const Tensor&, std::span<const double> g) {
        const Tensor& x = logits.value();
        std::span<double> gx = tape.grad(logits);
        for (std::size_t r : sel) {
          const auto row = x.values().subspan(r * k, k);
          const double lse = log_sum_exp(row);
          for (std::size_t c = 0; c < k; ++c) {
            const double p = std::exp(row[c] - lse);
            gx[r * k + c] += g[0] * inv * (p - (c == lab[r] ? 1.0 : 0.0));
          }
        }
      });
}

Var iou_loss(Var pred, std::span<const Box2D> gt, std::span<const std::size_t> rows,
             double eps) {
  const Tensor& p = pred.value();
  require_matrix(p, "iou_loss");
  if (p.cols() != 4) throw ShapeError("iou_loss: expected R x 4 corners");
  if (gt.size() != p.rows()) throw ShapeError("iou_loss: one target per row required");
  require_rows(rows, p.rows(), "iou_loss");
  auto box_at = [](const Tensor& t, std::size_t r) {
    return Box2D{t(r, 0), t(r, 1), t(r, 2), t(r, 3)};
  };
  double total = 0.0;
  for (std::size_t r : rows) total += loss_2d(box_at(p, r), gt[r], eps);
  const double inv = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
  std::vector<std::size_t> sel(rows.begin(), rows.end());
  std::vector<Box2D> targets(gt.begin(), gt.end());
  Tape& tape = *pred.tape();
  const Var inputs[] = {pred};
  return tape.record(
      "iou_loss", Tensor::scalar(total * inv), inputs,
      [&tape, pred, sel = std::move(sel), targets = std::move(targets), inv, eps,
       box_at](const Tensor&, std::span<const double> g) {
        const Tensor& p = pred.value();
        std::span<double> gp = tape.grad(pred);
        for (std::size_t r : sel) {
          const IouParts parts = iou_with_grad(box_at(p, r), targets[r]);
          // Clamped region is flat.
          if (parts.iou < eps) continue;
          const double scale = -g[0] * inv / parts.iou;
          for (std::size_t c = 0; c < 4; ++c) gp[r * 4 + c] += scale * parts.grad[c];
        }
      });
}

Var smooth_l1_loss(Var pred, const Tensor& target, std::span<const std::size_t> rows) {
  const Tensor& p = pred.value();
  require_matrix(p, "smooth_l1_loss");
  if (!(target.shape() == p.shape()))
    throw ShapeError("smooth_l1_loss: target " + to_string(target.shape()) +
                     " vs prediction " + to_string(p.shape()));
  require_rows(rows, p.rows(), "smooth_l1_loss");
  const std::size_t k = p.cols();
  double total = 0.0;
  for (std::size_t r : rows)
    for (std::size_t c = 0; c < k; ++c) total += smooth_l1(p(r, c) - target(r, c));
  const double inv = rows.empty() ? 0.0 : 1.0 / static_cast<double>(rows.size());
  std::vector<std::size_t> sel(rows.begin(), rows.end());
  Tape& tape = *pred.tape();
  const Var inputs[] = {pred};
  return tape.record(
      "smooth_l1_loss", Tensor::scalar(total * inv), inputs,
      [&tape, pred, target, sel = std::move(sel), inv, k](
          const Tensor&, std::span<const double> g) {
        const Tensor& p = pred.value();
        std::span<double> gp = tape.grad(pred);
        for (std::size_t r : sel)
          for (std::size_t c = 0; c < k; ++c) {
            const double d = p(r, c) - target(r, c);
            const double slope = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
            gp[r * k + c] += g[0] * inv * slope;
          }
      });
}

Var decode_boxes_2d(Var deltas, std::span<const Anchor> anchors) {
  const Tensor& d = deltas.value();
  require_matrix(d, "decode_boxes_2d");
  if (d.cols() != 4) throw ShapeError("decode_boxes_2d: expected R x 4 deltas");
  if (anchors.size() != d.rows())
    throw ShapeError("decode_boxes_2d: one anchor per row required");
  Tensor out = Tensor::matrix(d.rows(), 4);
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const Anchor& a = anchors[r];
    const double cx = d(r, 0) * a.w + a.x;
    const double cy = d(r, 1) * a.h + a.y;
    const double hw = 0.5 * std::exp(d(r, 2)) * a.w;
    const double hh = 0.5 * std::exp(d(r, 3)) * a.h;
    out(r, 0) = cx - hw;
    out(r, 1) = cy - hh;
    out(r, 2) = cx + hw;
    out(r, 3) = cy + hh;
  }
  std::vector<Anchor> anc(anchors.begin(), anchors.end());
  Tape& tape = *deltas.tape();
  const Var inputs[] = {deltas};
  return tape.record(
      "decode_boxes_2d", std::move(out), inputs,
      [&tape, deltas, anc = std::move(anc)](const Tensor&, std::span<const double> g) {
        const Tensor& d = deltas.value();
        std::span<double> gd = tape.grad(deltas);
        for (std::size_t r = 0; r < anc.size(); ++r) {
          const double* go = g.data() + r * 4;
          const double hw = 0.5 * std::exp(d(r, 2)) * anc[r].w;
          const double hh = 0.5 * std::exp(d(r, 3)) * anc[r].h;
          gd[r * 4 + 0] += (go[0] + go[2]) * anc[r].w;
          gd[r * 4 + 1] += (go[1] + go[3]) * anc[r].h;
          gd[r * 4 + 2] += (go[2] - go[0]) * hw;
          gd[r * 4 + 3] += (go[3] - go[1]) * hh;
        }
      });
}

Var total_loss(Var cls, Var l2d, Var l3d, const LossConfig& config) {
  return add(cls, add(scale(l2d, config.lambda_2d), scale(l3d, config.lambda_3d)));
}

}  // namespace mono3d
