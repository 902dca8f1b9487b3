#pragma once

#include "erclm/ensemble.hpp"
#include "erclm/fitter.hpp"
#include "erclm/geometry.hpp"
#include "erclm/image.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace erclm {

inline constexpr std::uint32_t kContainerVersion = 1;

/// Binary container: "RCLM1", u32 version, then chunks of
/// [4-byte tag][u64 length][payload][u32 crc32(payload)], all little-endian.
std::vector<std::uint8_t> save_model(const ModelEnsemble& ensemble);
/// Throws Error with code checksum, version, truncated or parse.
ModelEnsemble load_model(std::span<const std::uint8_t> bytes);

/// Human-readable summary written next to the container.
std::string model_sidecar(const ModelEnsemble& ensemble);

/// Writes `path` and `path + ".json"`.
void save_model_file(const std::string& path, const ModelEnsemble& ensemble);
ModelEnsemble load_model_file(const std::string& path);

struct AnnotationRecord {
  std::string image_path;
  Shape points;
  /// Per landmark, 1 when annotated as occluded; empty when the source has no flags.
  std::vector<std::uint8_t> occluded;
  std::optional<ModeId> mode;
};

/// ibug-style .pts: "version: 1", "n_points: N", "{", N lines "x y [occluded]", "}".
AnnotationRecord parse_pts(std::string_view text);
std::string format_pts(const AnnotationRecord& record);
AnnotationRecord load_pts(const std::string& path);

/// List file of "image pts [pose expression]" lines; relative paths resolve against
/// the list's directory. Blank lines and '#' comments are skipped.
std::vector<AnnotationRecord> load_annotation_list(const std::string& path);

struct FaceBoxRecord {
  std::string image_path;
  Box box;
};

/// "path x y w h" per line, several lines per image allowed (order kept). Records
/// with non-positive size are rejected: appended to `diagnostics` when given,
/// otherwise thrown as ParseError.
std::vector<FaceBoxRecord> parse_face_boxes(std::string_view text, std::vector<std::string>* diagnostics = nullptr);
std::vector<FaceBoxRecord> load_face_boxes(const std::string& path, std::vector<std::string>* diagnostics = nullptr);
std::string format_face_boxes(std::span<const FaceBoxRecord> boxes);

/// Binary PGM (P5) or PPM (P6), 8-bit. Colour is reduced with
/// round(0.299 R + 0.587 G + 0.114 B).
GrayImage decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
GrayImage read_image(const std::string& path);
void write_image(const std::string& path, const GrayImage& image);

struct AlternateRecord {
  ModeId mode;
  int inliers = 0;
  double inlier_error = 0.0;
  double mismatch = kInfiniteMismatch;
  friend bool operator==(const AlternateRecord&, const AlternateRecord&) = default;
};

struct ResultRecord {
  std::string image_path;
  int face = 0;
  bool ok = false;
  std::string message;
  std::vector<Point> points;
  std::vector<std::uint8_t> visible;
  ModeId mode;
  double mismatch = kInfiniteMismatch;
  int inliers = 0;
  double inlier_error = 0.0;
  std::vector<AlternateRecord> alternates;  ///< ranked mode fits before refinement, chosen mode first

  friend bool operator==(const ResultRecord&, const ResultRecord&) = default;
};

ResultRecord make_result_record(const std::string& image_path, int face, const AlignmentResult& result);

/// One JSON object per line. Non-finite numbers are written as null and read back
/// as +infinity.
std::string to_json_line(const ResultRecord& record);
ResultRecord parse_result_line(std::string_view line);
void write_results(const std::string& path, std::span<const ResultRecord> records);
std::vector<ResultRecord> read_results(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text(const std::string& path, std::string_view text);
std::string read_text(const std::string& path);

}  // namespace erclm
