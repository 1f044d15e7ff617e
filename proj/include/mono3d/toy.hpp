#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mono3d/anab.hpp"
#include "mono3d/anchor_codec.hpp"
#include "mono3d/feature_align.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/losses.hpp"
#include "mono3d/tape.hpp"
#include "mono3d/train.hpp"

// Small-scale version of the full detector head stack, trained on rendered
// synthetic scenes. The backbone is three stride-2 convolutions.

namespace mono3d {

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 96;
  double focal = 72.0;
  double cx = 48.0;
  double cy = 20.0;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  double noise = 0.05;
};

struct SceneObject {
  Box3D box;
  Box2D box2d;  // envelope of the projected corners
};

struct Scene {
  Tensor image;  // (1, 3, H, W)
  CameraIntrinsics camera;
  std::vector<SceneObject> objects;
};

/// Deterministic in (count, seed, config). Channels: object mask with a
/// bright patch at the projected 3D center; a depth cue; an orientation cue.
std::vector<Scene> make_synthetic_scenes(std::size_t count, std::uint64_t seed,
                                         const SceneConfig& config = {});

struct ToyConfig {
  std::size_t channels = 16;
  std::vector<double> anchor_sizes = {10.0, 16.0, 24.0};
  std::vector<double> aspect_ratios = {0.5, 1.0, 1.5};
  PyramidSpec pyramid = PyramidSpec::squares({1, 2, 4});
  AttentionSharing sharing = AttentionSharing::kKeyValue;
  LossConfig loss;
  std::size_t batch = 4;
  std::uint64_t seed = 7;
  /// Peak learning rate of the schedule.
  double lr_target = 0.004;
};

constexpr double kToyStride = 8.0;

/// Anchor assignment for one scene.
struct SceneTargets {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<Anchor> anchors;
  /// 1 for object, 0 for background (ignored rows hold 0 too).
  std::vector<std::size_t> labels;
  std::vector<bool> positive;
  std::vector<bool> ignored;
  std::vector<std::size_t> positives;
  std::vector<Box2D> box2d;  // per row; meaningful on positives
  Tensor deltas3d;           // rows x 7; meaningful on positives
};

/// Discrete choices of one forward pass; gradients treat them as constants.
struct SceneDecisions {
  std::vector<std::size_t> best_anchor;  // per position
  OffsetField center_offsets;
  std::vector<std::size_t> mined;
};

class ToyModel {
 public:
  ToyModel(ToyConfig config, std::vector<AnchorTemplate> templates);

  const ToyConfig& config() const { return config_; }
  const std::vector<AnchorTemplate>& templates() const { return templates_; }
  std::size_t anchors_per_position() const { return templates_.size(); }

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  static const std::vector<std::string>& parameter_names();

  /// ANAB settings (pyramid, sharing); weights live in parameters().
  const AnabParams& anab_template() const { return anab_; }

 private:
  ToyConfig config_;
  std::vector<AnchorTemplate> templates_;
  std::vector<Tensor> params_;
  AnabParams anab_;
};

/// Templates from config with 3D statistics fitted on the scenes' objects.
std::vector<AnchorTemplate> fit_toy_templates(std::span<const Scene> scenes,
                                              const ToyConfig& config);

/// Feature-grid size the backbone produces for an image.
std::pair<std::size_t, std::size_t> toy_grid(const Shape& image);

SceneTargets assign_targets(const Scene& scene, const ToyModel& model);

/// Per-row network outputs of one scene.
struct SceneHeads {
  Var logits;  // rows x 2
  Var box2d;   // rows x 4 deltas
  Var box3d;   // rows x 7 deltas: tx, ty, tz, tw, th, tl, talpha
  SceneDecisions decisions;
  Tensor attention;  // ANAB spatial attention, (1, 1, grid_h, grid_w)
};

SceneHeads toy_heads(Tape& tape, std::span<const Var> params, const ToyModel& model,
                     const Scene& scene, const SceneDecisions* frozen = nullptr);

struct ToyLoss {
  Var total;
  double cls = 0.0;
  double loss_2d = 0.0;
  double loss_3d = 0.0;
  std::vector<SceneDecisions> decisions;
};

/// Mean over scenes of L_cls + lambda_1 L_2d + lambda_2 L_3d. With `frozen`,
/// anchor selection, alignment offsets and mining are replayed instead of
/// recomputed, so the loss is smooth in the parameters.
ToyLoss toy_loss(Tape& tape, std::span<const Var> params, const ToyModel& model,
                 std::span<const Scene> scenes, std::span<const SceneTargets> targets,
                 const std::vector<SceneDecisions>* frozen = nullptr);

struct ToyRun {
  ToyModel model;
  /// One record per update step, loss measured before the update.
  std::vector<TrainRecord> trace;
  /// Loss after the last update on the batch of step 0; lr is 0.
  TrainRecord final_eval;
};

/// Batch b of step s holds scenes (s * batch + i) mod n. Warmup lasts one
/// epoch; the learning rate reaches its floor at the last step.
ToyRun train_toy(std::span<const Scene> scenes, std::size_t steps,
                 const ToyConfig& config = {});

/// Object probability and decoded boxes for every anchor of a scene.
struct ToyPrediction {
  std::vector<double> scores;
  std::vector<BoxPair> boxes;
  Tensor attention;
};
ToyPrediction toy_predict(const ToyModel& model, const Scene& scene);

}  // namespace mono3d
