#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mono3d/kitti_io.hpp"

namespace mono3d {

enum class EvalTask { k2D, kBEV, k3D };
enum class RecallMode { kR11, kR40 };
enum class Difficulty { kEasy = 0, kModerate = 1, kHard = 2, kIgnored = 3 };

/// A ground truth belongs to a level when its 2D height, occlusion and
/// truncation are all within these limits.
struct DifficultyBucket {
  double min_height = 0.0;
  int max_occlusion = 0;
  double max_truncation = 0.0;
};

struct EvalConfig {
  EvalTask task = EvalTask::k3D;
  RecallMode mode = RecallMode::kR40;
  double car_iou = 0.7;
  double pedestrian_iou = 0.5;
  double cyclist_iou = 0.5;
  /// Easy, moderate, hard (KITTI devkit values).
  std::array<DifficultyBucket, 3> buckets = {{{40.0, 0, 0.15}, {25.0, 1, 0.30},
                                              {25.0, 2, 0.50}}};
  /// Unmatched detections covering at least this share of their own area
  /// with a DontCare region are ignored.
  double dont_care_overlap = 0.5;

  double iou_threshold(int class_id) const;
  void validate() const;
};

EvalTask parse_task(const std::string& s);
RecallMode parse_mode(const std::string& s);
std::string to_string(EvalTask task);
std::string to_string(RecallMode mode);
std::string to_string(Difficulty level);

/// Easiest level whose limits the record satisfies, else kIgnored.
Difficulty bucket(const LabelRecord& gt, const EvalConfig& config);
bool within(const LabelRecord& gt, Difficulty level, const EvalConfig& config);

/// 2D, bird's-eye or 3D IoU between two records.
double task_iou(const LabelRecord& a, const LabelRecord& b, EvalTask task);

enum class MatchKind { kTruePositive, kFalsePositive, kIgnored };

struct MatchResult {
  std::vector<MatchKind> det_kind;
  /// Matched ground-truth index per detection, or -1.
  std::vector<long> det_gt;
  std::vector<bool> gt_matched;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

/// Greedy matching. Detections are visited by descending score (ties by
/// lower index); each takes the unmatched ground truth of highest IoU with
/// IoU >= threshold (ties by lower index). Matching an ignored ground truth
/// makes the detection ignored; unmatched ignored ground truths are not
/// false negatives. An unmatched detection flagged in det_ignorable is
/// ignored instead of counted as a false positive.
MatchResult match_detections(std::span<const double> scores, std::size_t n_gt,
                             const std::function<double(std::size_t, std::size_t)>& iou,
                             double threshold, const std::vector<bool>& gt_ignored = {},
                             const std::vector<bool>& det_ignorable = {});

struct ScoredMatch {
  double score = 0.0;
  bool true_positive = false;
};

/// {0, 0.1, ..., 1} for R11, {1/40, ..., 1} for R40.
std::vector<double> recall_points(RecallMode mode);

/// Detections are ranked by score; equal scores enter the curve together,
/// so the result does not depend on input order. Interpolated precision at
/// r is the best precision at any recall >= r (0 if none). Returns 0 when
/// n_gt is 0.
double average_precision(std::span<const ScoredMatch> dets, std::size_t n_gt,
                         RecallMode mode);

struct FrameData {
  std::string id;
  std::vector<LabelRecord> gt;
  std::vector<LabelRecord> det;
};

/// Non-ignored detections of one class at one level, with the count of
/// ground truths that level scores.
struct LevelMatches {
  std::vector<ScoredMatch> dets;
  std::size_t n_gt = 0;
  /// Any ground truth of the class exists, whatever its level.
  bool class_present = false;
};

LevelMatches gather_matches(std::span<const FrameData> frames, int class_id,
                            Difficulty level, const EvalConfig& config);

struct ClassResult {
  std::string name;
  /// Per level; empty when the level has no ground truth.
  std::array<std::optional<double>, 3> ap;
  std::array<std::size_t, 3> n_gt{};
};

/// Car, Pedestrian and Cyclist results over all frames. Van and
/// Person_sitting ground truths are ignored for Car and Pedestrian.
std::vector<ClassResult> evaluate(std::span<const FrameData> frames,
                                  const EvalConfig& config);

/// Frames are the *.txt files of gt_dir; a missing detection file means no
/// detections.
std::vector<FrameData> load_frames(const std::filesystem::path& gt_dir,
                                   const std::filesystem::path& det_dir);

void write_eval_table(std::ostream& out, std::span<const ClassResult> results,
                      const EvalConfig& config);
/// class,task,mode,easy,moderate,hard (empty cell when undefined).
void write_eval_csv(std::ostream& out, std::span<const ClassResult> results,
                    const EvalConfig& config);

enum class DepthBinning { kDepth, kSize };

struct DepthBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_abs_error = 0.0;
};

/// Detections and ground truths of the same type are matched greedily with
/// 2D IoU >= 0.5; each pair lands in [edge_i, edge_i+1) by ground-truth
/// depth or by (w_2d + h_2d) / 2. Only non-empty bins are returned.
std::vector<DepthBin> depth_error_report(std::span<const FrameData> frames,
                                         std::span<const double> edges,
                                         DepthBinning binning = DepthBinning::kDepth);

}  // namespace mono3d
