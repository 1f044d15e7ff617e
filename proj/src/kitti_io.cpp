#include "mono3d/kitti_io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>

namespace mono3d {

namespace {

constexpr std::array<const char*, 16> kLabelFields = {
    "type",   "truncated", "occluded", "alpha",  "bbox_left", "bbox_top",
    "bbox_right", "bbox_bottom", "height", "width", "length",   "x",
    "y",      "z",         "rotation_y", "score"};

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::string_view strip_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view tok, std::size_t line, const std::string& field) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError(line, field, "not a number: '" + std::string(tok) + "'");
  if (!std::isfinite(v)) throw ParseError(line, field, "non-finite value");
  return v;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace

ParseError::ParseError(std::size_t line, std::string field, const std::string& what)
    : std::runtime_error("line " + std::to_string(line) + ", field " + field + ": " +
                         what),
      line_(line),
      field_(std::move(field)) {}

ParseError::ParseError(std::size_t line, std::string field, std::string message, bool)
    : std::runtime_error(message), line_(line), field_(std::move(field)) {}

ParseError ParseError::in_file(const std::string& file) const {
  return ParseError(line_, field_, file + ": " + what(), true);
}

Box3D LabelRecord::box3d() const {
  Box3D b;
  b.x = x;
  b.y = y;
  b.z = z;
  b.w = width;
  b.h = height;
  b.l = length;
  b.yaw = rotation_y;
  b.alpha = alpha;
  return b;
}

LabelRecord parse_label_line(std::string_view line, std::size_t line_no) {
  const auto tok = split_ws(strip_cr(line));
  if (tok.size() != 15 && tok.size() != 16)
    throw ParseError(line_no, "count",
                     "expected 15 or 16 fields, got " + std::to_string(tok.size()));
  auto num = [&](std::size_t i) { return parse_number(tok[i], line_no, kLabelFields[i]); };
  LabelRecord r;
  r.type = std::string(tok[0]);
  r.truncation = num(1);
  const double occ = num(2);
  if (occ != std::floor(occ)) throw ParseError(line_no, "occluded", "not an integer");
  r.occlusion = static_cast<int>(occ);
  r.alpha = num(3);
  r.box2d = {num(4), num(5), num(6), num(7)};
  r.height = num(8);
  r.width = num(9);
  r.length = num(10);
  r.x = num(11);
  r.y = num(12);
  r.z = num(13);
  r.rotation_y = num(14);
  if (tok.size() == 16) r.score = num(15);
  // -1 marks an unknown value (DontCare rows, detector results).
  if (r.truncation != -1.0 && (r.truncation < 0.0 || r.truncation > 1.0))
    throw ParseError(line_no, "truncated", "outside [0, 1]");
  if (r.occlusion < -1 || r.occlusion > 3)
    throw ParseError(line_no, "occluded", "outside {0, 1, 2, 3}");
  if (!r.is_dont_care()) {
    if (r.box2d.x2 < r.box2d.x1 || r.box2d.y2 < r.box2d.y1)
      throw ParseError(line_no, "bbox_right", "box corners out of order");
  }
  return r;
}

std::vector<LabelRecord> parse_labels(std::istream& in) {
  std::vector<LabelRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (split_ws(strip_cr(line)).empty()) continue;
    out.push_back(parse_label_line(line, n));
  }
  return out;
}

std::string write_result_line(const LabelRecord& r) {
  std::string s = r.type;
  auto put = [&](const std::string& v) {
    s += ' ';
    s += v;
  };
  put(fixed(r.truncation, 2));
  put(std::to_string(r.occlusion));
  put(fixed(r.alpha, 6));
  put(fixed(r.box2d.x1, 2));
  put(fixed(r.box2d.y1, 2));
  put(fixed(r.box2d.x2, 2));
  put(fixed(r.box2d.y2, 2));
  put(fixed(r.height, 2));
  put(fixed(r.width, 2));
  put(fixed(r.length, 2));
  put(fixed(r.x, 2));
  put(fixed(r.y, 2));
  put(fixed(r.z, 2));
  put(fixed(r.rotation_y, 6));
  put(fixed(r.score.value_or(1.0), 6));
  return s;
}

void write_results(std::ostream& out, const std::vector<LabelRecord>& records) {
  for (const LabelRecord& r : records) out << write_result_line(r) << '\n';
}

CameraIntrinsics CalibRecord::p2() const {
  const auto it = matrices.find("P2");
  if (it == matrices.end()) throw std::out_of_range("calibration has no P2 entry");
  CameraIntrinsics cam;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) cam.k[r][c] = it->second[r * 4 + c];
  return cam;
}

CalibRecord parse_calib(std::istream& in) {
  CalibRecord out;
  std::string raw;
  std::size_t n = 0;
  while (std::getline(in, raw)) {
    ++n;
    const std::string_view line = strip_cr(raw);
    if (split_ws(line).empty()) continue;
    const std::size_t colon = line.find(':');
    if (colon == std::string_view::npos)
      throw ParseError(n, "key", "missing ':' separator");
    const auto key_tok = split_ws(line.substr(0, colon));
    if (key_tok.size() != 1) throw ParseError(n, "key", "expected a single key");
    const std::string key(key_tok[0]);
    const auto tok = split_ws(line.substr(colon + 1));
    std::size_t expected = 0;
    if (key == "R0_rect")
      expected = 9;
    else if ((key.size() == 2 && key[0] == 'P') || key.rfind("Tr_", 0) == 0)
      expected = 12;
    if (expected && tok.size() != expected)
      throw ParseError(n, key, "expected " + std::to_string(expected) + " values, got " +
                                   std::to_string(tok.size()));
    std::vector<double> vals;
    for (std::size_t i = 0; i < tok.size(); ++i)
      vals.push_back(parse_number(tok[i], n, key + "[" + std::to_string(i) + "]"));
    out.matrices[key] = std::move(vals);
  }
  return out;
}

int class_id_for(std::string_view type) {
  if (type == "Car") return 0;
  if (type == "Pedestrian") return 1;
  if (type == "Cyclist") return 2;
  return -1;
}

std::string class_name(int class_id) {
  switch (class_id) {
    case 0: return "Car";
    case 1: return "Pedestrian";
    case 2: return "Cyclist";
    default: return "DontCare";
  }
}

LabelRecord to_record(const Detection& d) {
  LabelRecord r;
  r.type = class_name(d.class_id);
  r.truncation = -1.0;
  r.occlusion = -1;
  r.alpha = d.box3d.alpha;
  r.box2d = d.box2d;
  r.height = d.box3d.h;
  r.width = d.box3d.w;
  r.length = d.box3d.l;
  r.x = d.box3d.x;
  r.y = d.box3d.y;
  r.z = d.box3d.z;
  r.rotation_y = d.box3d.yaw;
  r.score = d.score;
  return r;
}

Detection to_detection(const LabelRecord& r) {
  Detection d;
  d.class_id = class_id_for(r.type);
  d.score = r.score.value_or(1.0);
  d.box2d = r.box2d;
  d.box3d = r.box3d();
  return d;
}

std::vector<LabelRecord> read_label_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return parse_labels(in);
  } catch (const ParseError& e) {
    throw e.in_file(path.string());
  }
}

CalibRecord read_calib_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return parse_calib(in);
  } catch (const ParseError& e) {
    throw e.in_file(path.string());
  }
}

void write_result_file(const std::filesystem::path& path,
                       const std::vector<LabelRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_results(out, records);
}

std::vector<std::string> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("not a directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt")
      ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace mono3d
