#include "erclm/pipeline_io.hpp"

#include "erclm/error.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace erclm {

namespace {

using json = nlohmann::json;

constexpr char kMagic[5] = {'R', 'C', 'L', 'M', '1'};

// ---------------------------------------------------------------------------
// little-endian encoding

class Writer {
public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void point(const Point& p) {
    f64(p.x());
    f64(p.y());
  }
  void shape(const Shape& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    for (const auto& p : s.points) point(p);
  }
  void ints(const std::vector<int>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (int x : v) i32(x);
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > data_.size() - pos_) throw Error(ErrorCode::truncated, "model container is truncated");
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(s[static_cast<std::size_t>(k)]) << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(s[static_cast<std::size_t>(k)]) << (8 * k);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::size_t element_size) {
    const std::uint32_t n = u32();
    if (element_size > 0 && n > remaining() / element_size)
      throw Error(ErrorCode::truncated, "declared element count exceeds the chunk");
    return n;
  }
  std::string str() {
    const auto n = count(1);
    auto s = take(n);
    return std::string(s.begin(), s.end());
  }
  Point point() {
    const double x = f64();
    return {x, f64()};
  }
  Shape shape() {
    Shape s;
    const auto n = count(16);
    s.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) s.points.push_back(point());
    return s;
  }
  std::vector<int> ints() {
    std::vector<int> v(count(4));
    for (auto& x : v) x = i32();
    return v;
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(std::span<const std::uint8_t> payload) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  std::size_t off = 0;
  while (off < payload.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(payload.size() - off, 1u << 30));
    crc = crc32(crc, payload.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

void chunk(Writer& out, const char (&tag)[5], std::vector<std::uint8_t> payload) {
  for (int k = 0; k < 4; ++k) out.u8(static_cast<std::uint8_t>(tag[k]));
  out.u64(payload.size());
  out.bytes().insert(out.bytes().end(), payload.begin(), payload.end());
  out.u32(checksum(payload));
}

void write_matrix(Writer& w, const Eigen::MatrixXd& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) w.f64(m(r, c));
}

Eigen::MatrixXd read_matrix(Reader& r) {
  const std::uint32_t rows = r.u32(), cols = r.u32();
  if (static_cast<std::uint64_t>(rows) * cols > r.remaining() / 8)
    throw Error(ErrorCode::truncated, "matrix exceeds the chunk");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index k = 0; k < m.rows(); ++k) m(k, c) = r.f64();
  return m;
}

std::vector<std::uint8_t> encode_detectors(const std::vector<AdaboostDetector>& dets) {
  Writer w;
  w.u32(static_cast<std::uint32_t>(dets.size()));
  for (const auto& d : dets) {
    w.i32(d.landmark);
    w.i32(d.expression_tag);
    w.i32(d.patch_size);
    w.f64(d.face_width);
    w.ints(d.levels);
    w.u32(static_cast<std::uint32_t>(d.weak.size()));
    for (const auto& wc : d.weak) {
      w.i32(wc.position);
      w.f64(wc.alpha);
      w.u32(static_cast<std::uint32_t>(wc.lut.size()));
      for (double v : wc.lut) w.f64(v);
    }
  }
  return std::move(w.bytes());
}

std::vector<AdaboostDetector> decode_detectors(Reader& r) {
  std::vector<AdaboostDetector> dets(r.count(8));
  for (auto& d : dets) {
    d.landmark = r.i32();
    d.expression_tag = r.i32();
    d.patch_size = r.i32();
    d.face_width = r.f64();
    d.levels = r.ints();
    d.weak.resize(r.count(12));
    const int length = DescriptorLayout::from_levels(d.levels).length;
    for (auto& wc : d.weak) {
      wc.position = r.i32();
      wc.alpha = r.f64();
      wc.lut.resize(r.count(8));
      if (wc.lut.size() != static_cast<std::size_t>(kCensusCodeCount))
        throw DimensionError("weak classifier table must have 511 entries");
      for (auto& v : wc.lut) v = r.f64();
      if (wc.position < 0 || wc.position >= length) throw DimensionError("weak classifier position out of range");
    }
  }
  return dets;
}

std::vector<std::uint8_t> encode_mode(const ModeModel& m) {
  Writer w;
  w.i32(m.id.pose);
  w.i32(m.id.expression);
  w.str(m.scheme);
  const auto& pdm = m.shape.base;
  w.shape(pdm.mean_shape);
  write_matrix(w, pdm.basis);
  write_matrix(w, pdm.eigenvalues);
  w.u32(static_cast<std::uint32_t>(pdm.landmark_covariance.size()));
  for (const auto& c : pdm.landmark_covariance)
    for (int k = 0; k < 4; ++k) w.f64(c(k % 2, k / 2));
  w.u32(static_cast<std::uint32_t>(pdm.kinds.size()));
  for (auto k : pdm.kinds) w.u8(static_cast<std::uint8_t>(k));
  w.u32(static_cast<std::uint32_t>(pdm.contours.size()));
  for (const auto& c : pdm.contours) w.ints(c);
  w.ints(pdm.anchor_indices);
  w.i32(pdm.mode.pose);
  w.i32(pdm.mode.expression);
  // dense model
  w.i32(m.shape.samples_per_contour);
  w.u32(static_cast<std::uint32_t>(m.shape.sample_overrides.size()));
  for (const auto& [k, v] : m.shape.sample_overrides) {
    w.i32(k);
    w.i32(v);
  }
  w.u32(static_cast<std::uint32_t>(m.shape.mean_groups.size()));
  for (const auto& g : m.shape.mean_groups) {
    w.i32(g.representative_slot);
    w.u32(static_cast<std::uint32_t>(g.elements.size()));
    for (const auto& p : g.elements) w.point(p);
  }
  // exemplars
  w.f64(m.exemplars.radius);
  w.u32(static_cast<std::uint32_t>(m.exemplars.centers.size()));
  for (const auto& c : m.exemplars.centers) w.shape(c);
  // bindings
  w.u32(static_cast<std::uint32_t>(m.detectors.size()));
  for (const auto& d : m.detectors) w.ints(d);
  w.shape(m.box_mean);
  w.u32(static_cast<std::uint32_t>(m.search_radius.size()));
  for (double v : m.search_radius) w.f64(v);
  return std::move(w.bytes());
}

ModeModel decode_mode(Reader& r) {
  ModeModel m;
  m.id.pose = r.i32();
  m.id.expression = r.i32();
  m.scheme = r.str();
  auto& pdm = m.shape.base;
  pdm.mean_shape = r.shape();
  pdm.basis = read_matrix(r);
  const Eigen::MatrixXd ev = read_matrix(r);
  if (ev.cols() != 1 && ev.size() != 0) throw DimensionError("eigenvalues must be a column");
  pdm.eigenvalues = ev.size() ? Eigen::VectorXd(ev.col(0)) : Eigen::VectorXd();
  pdm.landmark_covariance.resize(r.count(32));
  for (auto& c : pdm.landmark_covariance)
    for (int k = 0; k < 4; ++k) c(k % 2, k / 2) = r.f64();
  pdm.kinds.resize(r.count(1));
  for (auto& k : pdm.kinds) {
    const auto v = r.u8();
    if (v > 1) throw ParseError("unknown landmark kind", 0);
    k = static_cast<LandmarkKind>(v);
  }
  pdm.contours.resize(r.count(4));
  for (auto& c : pdm.contours) c = r.ints();
  pdm.anchor_indices = r.ints();
  pdm.mode.pose = r.i32();
  pdm.mode.expression = r.i32();
  m.shape.samples_per_contour = r.i32();
  const auto overrides = r.count(8);
  for (std::size_t k = 0; k < overrides; ++k) {
    const int key = r.i32();
    m.shape.sample_overrides[key] = r.i32();
  }
  m.shape.mean_groups.resize(r.count(8));
  for (auto& g : m.shape.mean_groups) {
    g.representative_slot = r.i32();
    g.elements.resize(r.count(16));
    for (auto& p : g.elements) p = r.point();
  }
  m.exemplars.radius = r.f64();
  m.exemplars.centers.resize(r.count(4));
  for (auto& c : m.exemplars.centers) c = r.shape();
  m.detectors.resize(r.count(4));
  for (auto& d : m.detectors) d = r.ints();
  m.box_mean = r.shape();
  m.search_radius.resize(r.count(8));
  for (auto& v : m.search_radius) v = r.f64();
  return m;
}

json metadata(const ModelEnsemble& e) {
  json j;
  j["mode_count"] = e.modes.size();
  j["detector_count"] = e.detectors.size();
  j["pose_count"] = e.pose_count();
  j["expressions_per_pose"] = e.expressions_per_pose();
  j["config"] = e.config;
  return j;
}

}  // namespace

std::vector<std::uint8_t> save_model(const ModelEnsemble& ensemble) {
  Writer out;
  for (char c : kMagic) out.u8(static_cast<std::uint8_t>(c));
  out.u32(kContainerVersion);
  const std::string meta = metadata(ensemble).dump();
  chunk(out, "META", std::vector<std::uint8_t>(meta.begin(), meta.end()));
  chunk(out, "DETS", encode_detectors(ensemble.detectors));
  for (const auto& m : ensemble.modes) chunk(out, "MODE", encode_mode(m));
  chunk(out, "END ", {});
  return std::move(out.bytes());
}

ModelEnsemble load_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(5);
  if (std::memcmp(magic.data(), kMagic, 5) != 0) throw ParseError("not a model container (bad magic)", 0);
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    throw Error(ErrorCode::version, "unsupported container version " + std::to_string(version));

  ModelEnsemble e;
  json meta;
  bool have_meta = false, have_dets = false, ended = false;
  while (!ended) {
    const auto tag_bytes = r.take(4);
    const std::string tag(tag_bytes.begin(), tag_bytes.end());
    const std::uint64_t length = r.u64();
    if (length > r.remaining()) throw Error(ErrorCode::truncated, "chunk '" + tag + "' is truncated");
    const auto payload = r.take(static_cast<std::size_t>(length));
    const std::uint32_t crc = r.u32();
    if (crc != checksum(payload)) throw Error(ErrorCode::checksum, "checksum mismatch in chunk '" + tag + "'");
    Reader pr(payload);
    if (tag == "META") {
      try {
        meta = json::parse(payload.begin(), payload.end());
      } catch (const json::exception& ex) {
        throw ParseError(std::string("bad metadata: ") + ex.what(), 0);
      }
      e.config = meta.value("config", std::map<std::string, std::string>{});
      have_meta = true;
    } else if (tag == "DETS") {
      e.detectors = decode_detectors(pr);
      have_dets = true;
    } else if (tag == "MODE") {
      e.modes.push_back(decode_mode(pr));
    } else if (tag == "END ") {
      ended = true;
    } else {
      throw ParseError("unknown chunk '" + tag + "'", 0);
    }
    if (tag != "META" && !pr.done()) throw ParseError("trailing bytes in chunk '" + tag + "'", 0);
  }
  if (!r.done()) throw ParseError("data after the end chunk", 0);
  if (!have_meta || !have_dets) throw ParseError("container lacks metadata or detectors", 0);
  if (meta.value("mode_count", std::size_t{0}) != e.modes.size())
    throw DimensionError("declared mode count does not match the container");
  e.validate();
  return e;
}

std::string model_sidecar(const ModelEnsemble& ensemble) {
  json j = metadata(ensemble);
  j["format"] = "RCLM1";
  j["version"] = kContainerVersion;
  json modes = json::array();
  for (const auto& m : ensemble.modes) {
    modes.push_back({{"pose", m.id.pose},
                     {"expression", m.id.expression},
                     {"scheme", m.scheme},
                     {"landmarks", m.landmark_count()},
                     {"dense_landmarks", m.shape.dense_count()},
                     {"dimension", m.shape.base.dimension()},
                     {"anchors", m.shape.base.anchor_indices},
                     {"exemplars", m.exemplars.centers.size()},
                     {"exemplar_radius", m.exemplars.radius}});
  }
  j["modes"] = modes;
  return j.dump(2) + "\n";
}

void save_model_file(const std::string& path, const ModelEnsemble& ensemble) {
  write_file(path, save_model(ensemble));
  write_text(path + ".json", model_sidecar(ensemble));
}

ModelEnsemble load_model_file(const std::string& path) { return load_model(read_file(path)); }

// ---------------------------------------------------------------------------
// Annotations

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string_view::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> tokens(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t j = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > j) out.push_back(s.substr(j, i - j));
  }
  return out;
}

bool parse_double(std::string_view s, double& v) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  return r.ec == std::errc() && r.ptr == s.data() + s.size() && std::isfinite(v);
}

bool parse_int(std::string_view s, long long& v) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

AnnotationRecord parse_pts(std::string_view text) {
  const auto lines = split_lines(text);
  AnnotationRecord rec;
  long long declared = -1;
  std::size_t k = 0;
  bool have_version = false;
  for (; k < lines.size(); ++k) {
    const auto line = trim(lines[k]);
    const int ln = static_cast<int>(k) + 1;
    if (line.empty()) continue;
    if (line == "{") break;
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) throw ParseError("expected 'key: value' header line", ln);
    const auto key = trim(line.substr(0, colon));
    const auto value = trim(line.substr(colon + 1));
    if (key == "version") {
      have_version = true;
    } else if (key == "n_points") {
      if (!parse_int(value, declared) || declared <= 0) throw ParseError("invalid n_points", ln);
    } else {
      throw ParseError("unknown header key '" + std::string(key) + "'", ln);
    }
  }
  if (!have_version) throw ParseError("missing version header", 0);
  if (declared < 0) throw ParseError("missing n_points header", 0);
  if (k == lines.size()) throw ParseError("missing '{'", 0);
  bool closed = false;
  bool any_flag = false;
  std::vector<std::uint8_t> flags;
  for (++k; k < lines.size(); ++k) {
    const auto line = trim(lines[k]);
    const int ln = static_cast<int>(k) + 1;
    if (line.empty()) continue;
    if (line == "}") {
      closed = true;
      ++k;
      break;
    }
    const auto t = tokens(line);
    double x = 0, y = 0;
    if (t.size() < 2 || t.size() > 3 || !parse_double(t[0], x) || !parse_double(t[1], y))
      throw ParseError("malformed point line", ln);
    std::uint8_t flag = 0;
    if (t.size() == 3) {
      long long f = 0;
      if (!parse_int(t[2], f) || (f != 0 && f != 1)) throw ParseError("occlusion flag must be 0 or 1", ln);
      flag = static_cast<std::uint8_t>(f);
      any_flag = true;
    }
    rec.points.points.emplace_back(x, y);
    flags.push_back(flag);
  }
  if (!closed) throw ParseError("missing '}'", static_cast<int>(lines.size()));
  for (; k < lines.size(); ++k)
    if (!trim(lines[k]).empty()) throw ParseError("content after '}'", static_cast<int>(k) + 1);
  if (static_cast<long long>(rec.points.size()) != declared)
    throw ParseError("declared " + std::to_string(declared) + " points but found " +
                         std::to_string(rec.points.size()),
                     0);
  if (any_flag) rec.occluded = std::move(flags);
  return rec;
}

std::string format_pts(const AnnotationRecord& record) {
  std::string s = "version: 1\nn_points: " + std::to_string(record.points.size()) + "\n{\n";
  for (std::size_t i = 0; i < record.points.size(); ++i) {
    s += format_double(record.points[i].x()) + " " + format_double(record.points[i].y());
    if (!record.occluded.empty()) s += " " + std::to_string(record.occluded[i]);
    s += "\n";
  }
  s += "}\n";
  return s;
}

AnnotationRecord load_pts(const std::string& path) { return parse_pts(read_text(path)); }

std::vector<AnnotationRecord> load_annotation_list(const std::string& path) {
  const std::string text = read_text(path);
  const auto base = std::filesystem::path(path).parent_path();
  const auto resolve = [&](std::string_view p) {
    const std::filesystem::path fp{std::string(p)};
    return (fp.is_absolute() ? fp : base / fp).string();
  };
  std::vector<AnnotationRecord> out;
  const auto lines = split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto line = trim(lines[k]);
    if (line.empty() || line.front() == '#') continue;
    const auto t = tokens(line);
    const int ln = static_cast<int>(k) + 1;
    if (t.size() != 2 && t.size() != 4) throw ParseError("expected 'image pts [pose expression]'", ln);
    AnnotationRecord rec = load_pts(resolve(t[1]));
    rec.image_path = resolve(t[0]);
    if (t.size() == 4) {
      long long p = 0, e = 0;
      if (!parse_int(t[2], p) || !parse_int(t[3], e) || p < 0 || e < 0) throw ParseError("invalid mode label", ln);
      rec.mode = ModeId{static_cast<int>(p), static_cast<int>(e)};
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Face boxes

std::vector<FaceBoxRecord> parse_face_boxes(std::string_view text, std::vector<std::string>* diagnostics) {
  std::vector<FaceBoxRecord> out;
  const auto lines = split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto line = trim(lines[k]);
    const int ln = static_cast<int>(k) + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto t = tokens(line);
    FaceBoxRecord rec;
    std::string problem;
    if (t.size() != 5 || !parse_double(t[1], rec.box.x) || !parse_double(t[2], rec.box.y) ||
        !parse_double(t[3], rec.box.width) || !parse_double(t[4], rec.box.height)) {
      problem = "expected 'path x y w h'";
    } else if (!(rec.box.width > 0) || !(rec.box.height > 0)) {
      problem = "face box must have positive width and height";
    }
    if (!problem.empty()) {
      if (!diagnostics) throw ParseError(problem, ln);
      diagnostics->push_back("line " + std::to_string(ln) + ": " + problem);
      continue;
    }
    rec.image_path = std::string(t[0]);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<FaceBoxRecord> load_face_boxes(const std::string& path, std::vector<std::string>* diagnostics) {
  return parse_face_boxes(read_text(path), diagnostics);
}

std::string format_face_boxes(std::span<const FaceBoxRecord> boxes) {
  std::string s;
  for (const auto& b : boxes)
    s += b.image_path + " " + format_double(b.box.x) + " " + format_double(b.box.y) + " " +
         format_double(b.box.width) + " " + format_double(b.box.height) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Images

GrayImage decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  const auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    if (tok.empty()) throw ParseError("truncated image header", 0);
    return tok;
  };
  const std::string magic = next_token();
  if (magic != "P5" && magic != "P6") throw ParseError("unsupported image format '" + magic + "' (need P5 or P6)", 0);
  long long w = 0, h = 0, maxval = 0;
  if (!parse_int(next_token(), w) || !parse_int(next_token(), h) || !parse_int(next_token(), maxval) || w <= 0 ||
      h <= 0 || maxval != 255)
    throw ParseError("invalid image header (8-bit images only)", 0);
  ++pos;  // single whitespace before the raster
  const int channels = magic == "P6" ? 3 : 1;
  const auto need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(channels);
  if (pos > bytes.size() || bytes.size() - pos < need) throw Error(ErrorCode::truncated, "image raster is truncated");
  GrayImage img(static_cast<int>(w), static_cast<int>(h));
  auto& px = img.data();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (channels == 1) {
      px[i] = bytes[pos + i];
    } else {
      const auto* p = &bytes[pos + 3 * i];
      px[i] = static_cast<std::uint8_t>(std::lround(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]));
    }
  }
  return img;
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  const std::string header = "P5\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.data().begin(), image.data().end());
  return out;
}

GrayImage read_image(const std::string& path) { return decode_pnm(read_file(path)); }

void write_image(const std::string& path, const GrayImage& image) { write_file(path, encode_pgm(image)); }

// ---------------------------------------------------------------------------
// Result records

ResultRecord make_result_record(const std::string& image_path, int face, const AlignmentResult& result) {
  ResultRecord r;
  r.image_path = image_path;
  r.face = face;
  r.ok = result.status == AlignmentStatus::ok;
  r.message = result.message;
  r.points = result.shape.points;
  r.visible = result.labels.visible;
  r.mode = result.mode;
  r.mismatch = result.mismatch;
  r.inliers = result.inliers;
  r.inlier_error = result.inlier_error;
  for (const auto& alt : result.ranked) r.alternates.push_back({alt.mode, alt.inliers, alt.inlier_error, alt.mismatch});
  return r;
}

namespace {

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

}  // namespace

std::string to_json_line(const ResultRecord& r) {
  json j;
  j["image"] = r.image_path;
  j["face"] = r.face;
  j["ok"] = r.ok;
  j["message"] = r.message;
  json pts = json::array();
  for (const auto& p : r.points) pts.push_back({p.x(), p.y()});
  j["points"] = pts;
  j["visible"] = r.visible;
  j["mode"] = {r.mode.pose, r.mode.expression};
  j["d"] = number(r.mismatch);
  j["V"] = r.inliers;
  j["E"] = number(r.inlier_error);
  json alts = json::array();
  for (const auto& a : r.alternates)
    alts.push_back({{"mode", {a.mode.pose, a.mode.expression}},
                    {"V", a.inliers},
                    {"E", number(a.inlier_error)},
                    {"d", number(a.mismatch)}});
  j["alternates"] = alts;
  return j.dump();
}

ResultRecord parse_result_line(std::string_view line) {
  try {
    const json j = json::parse(line);
    ResultRecord r;
    r.image_path = j.at("image").get<std::string>();
    r.face = j.at("face").get<int>();
    r.ok = j.at("ok").get<bool>();
    r.message = j.value("message", std::string{});
    for (const auto& p : j.at("points")) r.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    r.visible = j.at("visible").get<std::vector<std::uint8_t>>();
    r.mode = {j.at("mode").at(0).get<int>(), j.at("mode").at(1).get<int>()};
    r.mismatch = number(j.at("d"));
    r.inliers = j.at("V").get<int>();
    r.inlier_error = number(j.at("E"));
    for (const auto& a : j.at("alternates"))
      r.alternates.push_back({{a.at("mode").at(0).get<int>(), a.at("mode").at(1).get<int>()},
                              a.at("V").get<int>(),
                              number(a.at("E")),
                              number(a.at("d"))});
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad result record: ") + e.what(), 0);
  }
}

void write_results(const std::string& path, std::span<const ResultRecord> records) {
  std::string s;
  for (const auto& r : records) s += to_json_line(r) + "\n";
  write_text(path, s);
}

std::vector<ResultRecord> read_results(const std::string& path) {
  std::vector<ResultRecord> out;
  const std::string text = read_text(path);
  const auto lines = split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (trim(lines[k]).empty()) continue;
    try {
      out.push_back(parse_result_line(lines[k]));
    } catch (const ParseError& e) {
      throw ParseError(e.what(), static_cast<int>(k) + 1);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io, "write to '" + path + "' failed");
}

void write_text(const std::string& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::string& path) {
  const auto b = read_file(path);
  return std::string(b.begin(), b.end());
}

}  // namespace erclm
