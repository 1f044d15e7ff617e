#include "mono3d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace mono3d {

namespace {

constexpr std::array<const char*, 3> kClasses = {"Car", "Pedestrian", "Cyclist"};

// Ground-truth types that neither count nor penalise for a class.
bool neighbour_type(const std::string& type, int class_id) {
  return (class_id == 0 && type == "Van") ||
         (class_id == 1 && type == "Person_sitting");
}

double intersection_over_own_area(const Box2D& det, const Box2D& region) {
  const double iw = std::min(det.x2, region.x2) - std::max(det.x1, region.x1);
  const double ih = std::min(det.y2, region.y2) - std::max(det.y1, region.y1);
  if (iw <= 0.0 || ih <= 0.0 || det.area() <= 0.0) return 0.0;
  return iw * ih / det.area();
}

}  // namespace

double EvalConfig::iou_threshold(int class_id) const {
  switch (class_id) {
    case 0: return car_iou;
    case 1: return pedestrian_iou;
    case 2: return cyclist_iou;
    default: throw std::out_of_range("no IoU threshold for class " + std::to_string(class_id));
  }
}

void EvalConfig::validate() const {
  for (double t : {car_iou, pedestrian_iou, cyclist_iou})
    if (!(t > 0.0 && t <= 1.0)) throw std::invalid_argument("IoU thresholds must be in (0, 1]");
  for (std::size_t i = 1; i < buckets.size(); ++i) {
    const auto& a = buckets[i - 1];
    const auto& b = buckets[i];
    if (b.min_height > a.min_height || b.max_occlusion < a.max_occlusion ||
        b.max_truncation < a.max_truncation)
      throw std::invalid_argument("difficulty buckets must relax from easy to hard");
  }
}

EvalTask parse_task(const std::string& s) {
  if (s == "2d") return EvalTask::k2D;
  if (s == "bev") return EvalTask::kBEV;
  if (s == "3d") return EvalTask::k3D;
  throw std::invalid_argument("unknown task '" + s + "' (expected 2d, bev or 3d)");
}

RecallMode parse_mode(const std::string& s) {
  if (s == "r11") return RecallMode::kR11;
  if (s == "r40") return RecallMode::kR40;
  throw std::invalid_argument("unknown mode '" + s + "' (expected r11 or r40)");
}

std::string to_string(EvalTask task) {
  switch (task) {
    case EvalTask::k2D: return "2d";
    case EvalTask::kBEV: return "bev";
    case EvalTask::k3D: return "3d";
  }
  return "?";
}

std::string to_string(RecallMode mode) { return mode == RecallMode::kR11 ? "r11" : "r40"; }

std::string to_string(Difficulty level) {
  switch (level) {
    case Difficulty::kEasy: return "easy";
    case Difficulty::kModerate: return "moderate";
    case Difficulty::kHard: return "hard";
    case Difficulty::kIgnored: return "ignored";
  }
  return "?";
}

bool within(const LabelRecord& gt, Difficulty level, const EvalConfig& config) {
  if (level == Difficulty::kIgnored) return false;
  const DifficultyBucket& b = config.buckets[static_cast<std::size_t>(level)];
  return gt.box2d.height() >= b.min_height && gt.occlusion <= b.max_occlusion &&
         gt.truncation <= b.max_truncation;
}

Difficulty bucket(const LabelRecord& gt, const EvalConfig& config) {
  for (Difficulty d : {Difficulty::kEasy, Difficulty::kModerate, Difficulty::kHard})
    if (within(gt, d, config)) return d;
  return Difficulty::kIgnored;
}

double task_iou(const LabelRecord& a, const LabelRecord& b, EvalTask task) {
  switch (task) {
    case EvalTask::k2D: return iou_2d(a.box2d, b.box2d);
    case EvalTask::kBEV: return iou_bev(a.box3d(), b.box3d());
    case EvalTask::k3D: return iou_3d(a.box3d(), b.box3d());
  }
  return 0.0;
}

MatchResult match_detections(std::span<const double> scores, std::size_t n_gt,
                             const std::function<double(std::size_t, std::size_t)>& iou,
                             double threshold, const std::vector<bool>& gt_ignored,
                             const std::vector<bool>& det_ignorable) {
  if (!gt_ignored.empty() && gt_ignored.size() != n_gt)
    throw std::invalid_argument("match_detections: gt_ignored size mismatch");
  if (!det_ignorable.empty() && det_ignorable.size() != scores.size())
    throw std::invalid_argument("match_detections: det_ignorable size mismatch");
  MatchResult m;
  m.det_kind.assign(scores.size(), MatchKind::kFalsePositive);
  m.det_gt.assign(scores.size(), -1);
  m.gt_matched.assign(n_gt, false);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t d : order) {
    long best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < n_gt; ++g) {
      if (m.gt_matched[g]) continue;
      const double v = iou(d, g);
      if (v >= threshold && v > best_iou) {
        best = static_cast<long>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      m.gt_matched[static_cast<std::size_t>(best)] = true;
      m.det_gt[d] = best;
      const bool ignored = !gt_ignored.empty() && gt_ignored[static_cast<std::size_t>(best)];
      m.det_kind[d] = ignored ? MatchKind::kIgnored : MatchKind::kTruePositive;
    } else if (!det_ignorable.empty() && det_ignorable[d]) {
      m.det_kind[d] = MatchKind::kIgnored;
    }
  }
  for (MatchKind k : m.det_kind) {
    m.tp += k == MatchKind::kTruePositive;
    m.fp += k == MatchKind::kFalsePositive;
  }
  for (std::size_t g = 0; g < n_gt; ++g)
    m.fn += !m.gt_matched[g] && (gt_ignored.empty() || !gt_ignored[g]);
  return m;
}

std::vector<double> recall_points(RecallMode mode) {
  std::vector<double> r;
  if (mode == RecallMode::kR11) {
    for (int i = 0; i <= 10; ++i) r.push_back(i / 10.0);
  } else {
    for (int i = 1; i <= 40; ++i) r.push_back(i / 40.0);
  }
  return r;
}

double average_precision(std::span<const ScoredMatch> dets, std::size_t n_gt,
                         RecallMode mode) {
  if (n_gt == 0) return 0.0;
  std::vector<ScoredMatch> sorted(dets.begin(), dets.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredMatch& a, const ScoredMatch& b) {
    return a.score > b.score;
  });
  // (recall, precision) at the end of each equal-score group.
  std::vector<std::pair<double, double>> curve;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    tp += sorted[i].true_positive;
    if (i + 1 < sorted.size() && sorted[i + 1].score == sorted[i].score) continue;
    curve.emplace_back(static_cast<double>(tp) / static_cast<double>(n_gt),
                       static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  const std::vector<double> points = recall_points(mode);
  double total = 0.0;
  for (double r : points) {
    double best = 0.0;
    for (const auto& [rec, prec] : curve)
      if (rec >= r - 1e-12) best = std::max(best, prec);
    total += best;
  }
  return total / static_cast<double>(points.size());
}

LevelMatches gather_matches(std::span<const FrameData> frames, int cls,
                            Difficulty level, const EvalConfig& config) {
  if (level == Difficulty::kIgnored) throw std::invalid_argument("gather_matches: no such level");
  const double min_h = config.buckets[static_cast<std::size_t>(level)].min_height;
  LevelMatches out;
  for (const FrameData& f : frames) {
    std::vector<const LabelRecord*> gts, dont_care;
    std::vector<bool> gt_ignored;
    for (const LabelRecord& g : f.gt) {
      if (g.is_dont_care()) {
        dont_care.push_back(&g);
      } else if (class_id_for(g.type) == cls) {
        out.class_present = true;
        gts.push_back(&g);
        gt_ignored.push_back(!within(g, level, config));
      } else if (neighbour_type(g.type, cls)) {
        gts.push_back(&g);
        gt_ignored.push_back(true);
      }
    }
    std::vector<const LabelRecord*> dets;
    std::vector<double> scores;
    std::vector<bool> ignorable;
    for (const LabelRecord& d : f.det) {
      if (class_id_for(d.type) != cls) continue;
      dets.push_back(&d);
      scores.push_back(d.score.value_or(1.0));
      bool skip = d.box2d.height() < min_h;
      for (const LabelRecord* dc : dont_care)
        skip |= intersection_over_own_area(d.box2d, dc->box2d) >= config.dont_care_overlap;
      ignorable.push_back(skip);
    }
    const MatchResult m = match_detections(
        scores, gts.size(),
        [&](std::size_t di, std::size_t gi) {
          return task_iou(*dets[di], *gts[gi], config.task);
        },
        config.iou_threshold(cls), gt_ignored, ignorable);
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (m.det_kind[i] != MatchKind::kIgnored)
        out.dets.push_back({scores[i], m.det_kind[i] == MatchKind::kTruePositive});
    for (bool ig : gt_ignored) out.n_gt += !ig;
  }
  return out;
}

std::vector<ClassResult> evaluate(std::span<const FrameData> frames,
                                  const EvalConfig& config) {
  config.validate();
  std::vector<ClassResult> out;
  for (int cls = 0; cls < static_cast<int>(kClasses.size()); ++cls) {
    ClassResult result;
    result.name = kClasses[static_cast<std::size_t>(cls)];
    bool present = false;
    for (Difficulty level : {Difficulty::kEasy, Difficulty::kModerate, Difficulty::kHard}) {
      const auto li = static_cast<std::size_t>(level);
      const LevelMatches lm = gather_matches(frames, cls, level, config);
      present |= lm.class_present;
      result.n_gt[li] = lm.n_gt;
      if (lm.n_gt > 0) result.ap[li] = average_precision(lm.dets, lm.n_gt, config.mode);
    }
    if (present) out.push_back(std::move(result));
  }
  return out;
}

std::vector<FrameData> load_frames(const std::filesystem::path& gt_dir,
                                   const std::filesystem::path& det_dir) {
  if (!std::filesystem::is_directory(det_dir))
    throw std::runtime_error("not a directory: " + det_dir.string());
  std::vector<FrameData> frames;
  for (const std::string& id : list_frames(gt_dir)) {
    FrameData f;
    f.id = id;
    f.gt = read_label_file(gt_dir / (id + ".txt"));
    const auto det_path = det_dir / (id + ".txt");
    if (std::filesystem::exists(det_path)) f.det = read_label_file(det_path);
    frames.push_back(std::move(f));
  }
  return frames;
}

void write_eval_table(std::ostream& out, std::span<const ClassResult> results,
                      const EvalConfig& config) {
  char line[160];
  std::snprintf(line, sizeof line, "AP %s %s\n%-12s %9s %9s %9s\n",
                to_string(config.task).c_str(), to_string(config.mode).c_str(), "class",
                "easy", "moderate", "hard");
  out << line;
  for (const ClassResult& r : results) {
    std::snprintf(line, sizeof line, "%-12s", r.name.c_str());
    out << line;
    for (const auto& ap : r.ap) {
      if (ap)
        std::snprintf(line, sizeof line, " %9.4f", *ap);
      else
        std::snprintf(line, sizeof line, " %9s", "n/a");
      out << line;
    }
    out << '\n';
  }
}

void write_eval_csv(std::ostream& out, std::span<const ClassResult> results,
                    const EvalConfig& config) {
  out << "class,task,mode,easy,moderate,hard\n";
  char cell[32];
  for (const ClassResult& r : results) {
    out << r.name << ',' << to_string(config.task) << ',' << to_string(config.mode);
    for (const auto& ap : r.ap) {
      out << ',';
      if (ap) {
        std::snprintf(cell, sizeof cell, "%.6f", *ap);
        out << cell;
      }
    }
    out << '\n';
  }
}

std::vector<DepthBin> depth_error_report(std::span<const FrameData> frames,
                                         std::span<const double> edges,
                                         DepthBinning binning) {
  if (edges.size() < 2) throw std::invalid_argument("depth_error_report: need >= 2 edges");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1]))
      throw std::invalid_argument("depth_error_report: edges must increase");
  std::vector<double> sum(edges.size() - 1, 0.0);
  std::vector<std::size_t> count(edges.size() - 1, 0);
  for (const FrameData& f : frames) {
    std::vector<const LabelRecord*> gts, dets;
    std::vector<double> scores;
    for (const auto& g : f.gt)
      if (!g.is_dont_care()) gts.push_back(&g);
    for (const auto& d : f.det) {
      dets.push_back(&d);
      scores.push_back(d.score.value_or(1.0));
    }
    const MatchResult m = match_detections(
        scores, gts.size(),
        [&](std::size_t di, std::size_t gi) {
          return dets[di]->type == gts[gi]->type ? iou_2d(dets[di]->box2d, gts[gi]->box2d)
                                                 : 0.0;
        },
        0.5);
    for (std::size_t di = 0; di < dets.size(); ++di) {
      if (m.det_gt[di] < 0) continue;
      const LabelRecord& g = *gts[static_cast<std::size_t>(m.det_gt[di])];
      const double key = binning == DepthBinning::kDepth
                             ? g.z
                             : 0.5 * (g.box2d.width() + g.box2d.height());
      const auto it = std::upper_bound(edges.begin(), edges.end(), key);
      if (it == edges.begin() || it == edges.end()) continue;
      const std::size_t bin = static_cast<std::size_t>(it - edges.begin()) - 1;
      sum[bin] += std::abs(dets[di]->z - g.z);
      ++count[bin];
    }
  }
  std::vector<DepthBin> out;
  for (std::size_t b = 0; b < count.size(); ++b)
    if (count[b])
      out.push_back({edges[b], edges[b + 1], count[b], sum[b] / static_cast<double>(count[b])});
  return out;
}

}  // namespace mono3d
