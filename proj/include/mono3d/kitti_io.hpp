#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mono3d/geometry.hpp"
#include "mono3d/postproc.hpp"

namespace mono3d {

/// Malformed input; the message names the line and the field.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& what);
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }
  /// Same error with the file name prepended to the message.
  ParseError in_file(const std::string& file) const;

 private:
  ParseError(std::size_t line, std::string field, std::string message, bool);
  std::size_t line_;
  std::string field_;
};

/// One object of a KITTI label or result file.
struct LabelRecord {
  std::string type;
  double truncation = 0.0;
  int occlusion = 0;
  double alpha = 0.0;
  Box2D box2d;
  double height = 0.0;  // dims in file order h, w, l
  double width = 0.0;
  double length = 0.0;
  double x = 0.0;  // bottom center, camera frame
  double y = 0.0;
  double z = 0.0;
  double rotation_y = 0.0;
  std::optional<double> score;

  bool is_dont_care() const { return type == "DontCare"; }
  Box3D box3d() const;
};

/// 15 whitespace-separated fields, or 16 with a trailing score. DontCare
/// rows keep their -1 / -10 / -1000 sentinels; truncation and occlusion may
/// be -1 (unknown) on any row. A trailing CR is ignored.
LabelRecord parse_label_line(std::string_view line, std::size_t line_no = 1);
std::vector<LabelRecord> parse_labels(std::istream& in);

/// 16-field result line: boxes, dims and location with 2 decimals, angles and
/// score with 6. A missing score is written as 1.
std::string write_result_line(const LabelRecord& record);
void write_results(std::ostream& out, const std::vector<LabelRecord>& records);

struct CalibRecord {
  std::map<std::string, std::vector<double>> matrices;

  /// Left color camera projection. Throws std::out_of_range if absent.
  CameraIntrinsics p2() const;
};

/// "KEY: v1 v2 ..." lines. P0..P3 and Tr_* carry 12 values, R0_rect 9.
CalibRecord parse_calib(std::istream& in);

/// Car = 0, Pedestrian = 1, Cyclist = 2, anything else -1.
int class_id_for(std::string_view type);
std::string class_name(int class_id);

LabelRecord to_record(const Detection& det);
Detection to_detection(const LabelRecord& record);

std::vector<LabelRecord> read_label_file(const std::filesystem::path& path);
CalibRecord read_calib_file(const std::filesystem::path& path);
void write_result_file(const std::filesystem::path& path,
                       const std::vector<LabelRecord>& records);
/// Sorted frame ids (file stems) of the *.txt files in a directory.
std::vector<std::string> list_frames(const std::filesystem::path& dir);

}  // namespace mono3d
