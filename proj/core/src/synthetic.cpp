#include "erclm/synthetic.hpp"

#include "erclm/error.hpp"
#include "erclm/fitter.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace erclm {

namespace {

using Vec3 = Eigen::Vector3d;
constexpr double kPi = std::numbers::pi;

struct FaceParams {
  double jaw_width = 0.95;
  double jaw_top = -0.15;
  double jaw_drop = 1.05;
  double eye_x = 0.42;
  double eye_y = -0.28;
  double eye_w = 0.15;
  double eye_h = 0.055;
  double brow_y = -0.55;
  double nose_top = -0.33;
  double nostril_y = 0.2;
  double mouth_y = 0.55;
  double mouth_rx = 0.36;
  double lip_top = 0.12;
  double lip_bottom = 0.16;
  double inner_rx = 0.24;
  double inner_top = 0.03;
  double inner_bottom = 0.03;
  double corner_lift = 0.0;
  std::array<double, 17> jaw_offset{};  // along-contour jitter, radians
};

FaceParams expression_params(int expression) {
  FaceParams p;
  switch (expression) {
    case 0:
      break;
    case 1:  // open smile
      p.mouth_rx = 0.41;
      p.inner_rx = 0.29;
      p.lip_top = 0.13;
      p.lip_bottom = 0.37;
      p.inner_top = 0.06;
      p.inner_bottom = 0.25;
      p.corner_lift = 0.07;
      p.brow_y = -0.58;
      break;
    case 2:  // surprise
      p.mouth_rx = 0.27;
      p.inner_rx = 0.17;
      p.lip_top = 0.16;
      p.lip_bottom = 0.22;
      p.inner_top = 0.1;
      p.inner_bottom = 0.13;
      p.brow_y = -0.64;
      p.eye_h = 0.075;
      break;
    default:
      throw Error(ErrorCode::invalid_argument, "synthetic faces support expressions 0..2");
  }
  return p;
}

std::vector<Vec3> build_face(const FaceParams& p) {
  std::vector<Vec3> v(68);
  for (int k = 0; k <= 16; ++k) {
    const double t = kPi * k / 16.0 + p.jaw_offset[static_cast<std::size_t>(k)];
    const double s = std::sin(t);
    v[static_cast<std::size_t>(k)] = {-p.jaw_width * std::cos(t) * (1.0 - 0.12 * s), p.jaw_top + p.jaw_drop * s,
                                      -0.55 + 0.75 * s};
  }
  for (int k = 0; k < 5; ++k) {
    const double arch = 0.08 * std::sin(kPi * (k + 0.5) / 5.0);
    v[static_cast<std::size_t>(17 + k)] = {-0.75 + 0.14 * k, p.brow_y - arch, 0.3 + 0.05 * k};
    v[static_cast<std::size_t>(22 + k)] = {0.19 + 0.14 * k, p.brow_y - 0.08 * std::sin(kPi * (k + 0.5) / 5.0),
                                           0.5 - 0.05 * k};
  }
  const double bridge = (p.nostril_y - 0.08 - p.nose_top) / 3.0;
  for (int k = 0; k < 4; ++k) v[static_cast<std::size_t>(27 + k)] = {0.0, p.nose_top + bridge * k, 0.5 + 0.1 * k};
  for (int k = 0; k < 5; ++k) {
    const double c = 1.0 - std::abs(k - 2) / 2.0;
    v[static_cast<std::size_t>(31 + k)] = {-0.18 + 0.09 * k, p.nostril_y + 0.03 * c, 0.55 + 0.08 * c};
  }
  const auto eye = [&](double cx, bool right, int base) {
    // right eye (image left): outer, top, top, inner, bottom, bottom
    const double o = right ? -1.0 : 1.0;
    const std::array<Eigen::Vector2d, 6> offs = {
        Eigen::Vector2d(o * p.eye_w, 0), {o * 0.05, -p.eye_h}, {-o * 0.05, -p.eye_h},
        {-o * p.eye_w, 0},               {-o * 0.05, p.eye_h}, {o * 0.05, p.eye_h}};
    std::array<int, 6> order = {0, 1, 2, 3, 4, 5};
    if (!right) order = {3, 2, 1, 0, 5, 4};  // inner corner first
    for (int k = 0; k < 6; ++k) {
      const auto& d = offs[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
      const double z = std::abs(d.x()) > 0.1 ? 0.22 : 0.3;
      v[static_cast<std::size_t>(base + k)] = {cx + d.x(), p.eye_y + d.y(), z};
    }
  };
  eye(-p.eye_x, true, 36);
  eye(p.eye_x, false, 42);
  const auto lip = [&](double phi, double rx, double up, double down) {
    const double s = std::sin(phi), c = std::cos(phi);
    const double y = p.mouth_y + (s >= 0 ? -up * s : -down * s) - p.corner_lift * c * c;
    return Vec3(rx * c, y, 0.3 + 0.15 * std::abs(s));
  };
  for (int k = 0; k <= 6; ++k) v[static_cast<std::size_t>(48 + k)] = lip(kPi - kPi * k / 6.0, p.mouth_rx, p.lip_top, 0);
  for (int k = 1; k <= 5; ++k)
    v[static_cast<std::size_t>(54 + k)] = lip(-kPi * k / 6.0, p.mouth_rx, 0, p.lip_bottom);
  v[60] = lip(kPi, p.inner_rx, 0, 0);
  for (int k = 1; k <= 3; ++k) v[static_cast<std::size_t>(60 + k)] = lip(kPi - kPi * k / 4.0, p.inner_rx, p.inner_top, 0);
  v[64] = lip(0.0, p.inner_rx, 0, 0);
  for (int k = 1; k <= 3; ++k) v[static_cast<std::size_t>(64 + k)] = lip(-kPi * k / 4.0, p.inner_rx, 0, p.inner_bottom);
  return v;
}

Shape project_yaw(const std::vector<Vec3>& v, double yaw_degrees) {
  const double a = yaw_degrees * kPi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  Shape out;
  out.points.reserve(v.size());
  for (const auto& p : v) out.points.emplace_back(c * p.x() + s * p.z(), p.y());
  return out;
}

void check_mode(ModeId mode, const SyntheticFaceOptions& o) {
  if (mode.pose < 0 || mode.pose >= o.pose_count() || mode.expression < 0 || mode.expression >= o.expressions)
    throw Error(ErrorCode::invalid_argument, "mode outside the synthetic face options");
}

}  // namespace

std::vector<Eigen::Vector3d> face_template(int expression) { return build_face(expression_params(expression)); }

Shape mean_face_shape(ModeId mode, const SyntheticFaceOptions& options) {
  check_mode(mode, options);
  return project_yaw(face_template(mode.expression), options.yaw_degrees[static_cast<std::size_t>(mode.pose)]);
}

Shape sample_face_shape(ModeId mode, const SyntheticFaceOptions& o, std::mt19937_64& rng) {
  check_mode(mode, o);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FaceParams p = expression_params(mode.expression);
  const double id = o.identity_sigma;
  p.jaw_width *= 1.0 + id * g(rng);
  p.jaw_drop *= 1.0 + id * g(rng);
  p.eye_x *= 1.0 + id * g(rng);
  p.eye_w *= 1.0 + id * g(rng);
  p.brow_y += id * g(rng);
  p.nostril_y += 0.5 * id * g(rng);
  p.mouth_y += 0.5 * id * g(rng);
  const double open = o.mouth_sigma * g(rng);
  p.inner_bottom = std::max(0.005, p.inner_bottom + open);
  p.lip_bottom = std::max(0.05, p.lip_bottom + open);
  const double widen = 1.0 + 2.0 * o.mouth_sigma * g(rng);
  p.mouth_rx *= widen;
  p.inner_rx *= widen;
  p.corner_lift += o.mouth_sigma * g(rng);
  for (int k = 1; k < 16; ++k) p.jaw_offset[static_cast<std::size_t>(k)] = o.contour_slide * (kPi / 16.0) * g(rng);
  const double yaw = o.yaw_degrees[static_cast<std::size_t>(mode.pose)] + o.yaw_jitter * u(rng);
  Shape s = project_yaw(build_face(p), yaw);
  for (auto& pt : s.points) pt += o.point_noise * Point(g(rng), g(rng));
  return s;
}

std::vector<LabeledShape> synthetic_shape_corpus(int per_mode, const SyntheticFaceOptions& options,
                                                 std::uint64_t seed) {
  std::vector<LabeledShape> out;
  std::mt19937_64 rng(seed);
  for (int pose = 0; pose < options.pose_count(); ++pose)
    for (int e = 0; e < options.expressions; ++e)
      for (int k = 0; k < per_mode; ++k) out.push_back({{pose, e}, sample_face_shape({pose, e}, options, rng)});
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

class Canvas {
public:
  Canvas(int w, int h, double fill) : w_(w), h_(h), v_(static_cast<std::size_t>(w) * h, fill), ink_(v_.size(), 0.0) {}

  double& at(int x, int y) { return v_[static_cast<std::size_t>(y) * w_ + x]; }

  // Gaussian stroke along a polyline; overlapping strokes keep the darkest value.
  void stroke(const std::vector<Point>& pts, bool closed, double amplitude, double sigma) {
    const std::size_t n = pts.size();
    for (std::size_t k = 0; k + (closed ? 0 : 1) < n; ++k) segment(pts[k], pts[(k + 1) % n], amplitude, sigma);
  }

  void segment(const Point& a, const Point& b, double amplitude, double sigma) {
    const double r = 3.0 * sigma;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - r)));
    const int x1 = std::min(w_ - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - r)));
    const int y1 = std::min(h_ - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + r)));
    const Point ab = b - a;
    const double len2 = ab.squaredNorm();
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Point p(x + 0.5, y + 0.5);
        const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        const double d2 = (p - a - t * ab).squaredNorm();
        auto& ink = ink_[static_cast<std::size_t>(y) * w_ + x];
        ink = std::min(ink, amplitude * std::exp(-d2 / (2 * sigma * sigma)));
      }
  }

  void blob(const Point& c, double amplitude, double sigma) {
    const double r = 3.0 * sigma;
    for (int y = std::max(0, static_cast<int>(c.y() - r)); y <= std::min(h_ - 1, static_cast<int>(c.y() + r)); ++y)
      for (int x = std::max(0, static_cast<int>(c.x() - r)); x <= std::min(w_ - 1, static_cast<int>(c.x() + r)); ++x) {
        const double d2 = (Point(x + 0.5, y + 0.5) - c).squaredNorm();
        at(x, y) += amplitude * std::exp(-d2 / (2 * sigma * sigma));
      }
  }

  void fill_polygon(const std::vector<Point>& poly, double value) {
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x)
        if (inside(poly, Point(x + 0.5, y + 0.5))) at(x, y) = value;
  }

  void flush_ink() {
    for (std::size_t k = 0; k < v_.size(); ++k) v_[k] += ink_[k];
    std::fill(ink_.begin(), ink_.end(), 0.0);
  }

  static bool inside(const std::vector<Point>& poly, const Point& p) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      const Point& a = poly[i];
      const Point& b = poly[j];
      if ((a.y() > p.y()) != (b.y() > p.y()) && p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
        in = !in;
    }
    return in;
  }

  int w_, h_;
  std::vector<double> v_;
  std::vector<double> ink_;
};

std::vector<Point> pick(const Shape& s, int first, int last) {
  std::vector<Point> out;
  for (int i = first; i <= last; ++i) out.push_back(s[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

GrayImage render_face_image(const Shape& shape, int width, int height, double face_width, const Box& occluder,
                            double pixel_noise, std::mt19937_64& rng) {
  if (shape.size() != 68) throw DimensionError("the face renderer draws 68-point shapes");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::invalid_argument, "image size must be positive");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double unit = face_width / kReferenceFaceWidth;
  Canvas cv(width, height, 0.0);

  // low-frequency background texture
  std::array<std::array<double, 4>, 4> waves{};
  for (auto& w : waves) w = {2 * kPi * u(rng), 2 * kPi / (20 + 60 * u(rng)) * unit, 2 * kPi * u(rng), 6 + 8 * u(rng)};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double v = 100.0;
      for (const auto& w : waves) v += w[3] * std::sin(w[1] / unit * (std::cos(w[0]) * x + std::sin(w[0]) * y) + w[2]);
      cv.at(x, y) = v;
    }

  // skin: jaw closed over the brows
  std::vector<Point> outline = pick(shape, 0, 16);
  const Point up = shape[27] - shape[30];
  const Point lift = up.norm() > 0 ? up.normalized() * 0.25 * face_width : Point(0, -0.25 * face_width);
  for (int i = 26; i >= 17; --i) outline.push_back(shape[static_cast<std::size_t>(i)] + lift);
  cv.fill_polygon(outline, 165.0);
  const auto inner = pick(shape, 60, 67);
  if ((shape[66] - shape[62]).norm() > 1.5 * unit) cv.fill_polygon(inner, 70.0);

  cv.stroke(pick(shape, 0, 16), false, -55, 0.9 * unit);
  cv.stroke(pick(shape, 17, 21), false, -75, 1.6 * unit);
  cv.stroke(pick(shape, 22, 26), false, -75, 1.6 * unit);
  cv.stroke(pick(shape, 27, 30), false, -35, 0.9 * unit);
  cv.stroke(pick(shape, 31, 35), false, -55, 0.9 * unit);
  cv.stroke(pick(shape, 36, 41), true, -70, 0.8 * unit);
  cv.stroke(pick(shape, 42, 47), true, -70, 0.8 * unit);
  cv.stroke(pick(shape, 48, 59), true, -50, 1.0 * unit);
  cv.stroke(inner, true, -70, 0.8 * unit);
  cv.flush_ink();

  Point right_pupil = Point::Zero(), left_pupil = Point::Zero();
  for (int i = 0; i < 6; ++i) {
    right_pupil += shape[static_cast<std::size_t>(36 + i)] / 6.0;
    left_pupil += shape[static_cast<std::size_t>(42 + i)] / 6.0;
  }
  cv.blob(right_pupil, -60, 2.0 * unit);
  cv.blob(left_pupil, -60, 2.0 * unit);

  // landmark-specific marks
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const double sign = (i * 7 + 3) % 5 < 3 ? 1.0 : -1.0;
    const double amp = sign * (35.0 + 6.0 * static_cast<double>((i * 11) % 5));
    cv.blob(shape[i], amp, (0.9 + 0.45 * static_cast<double>((i * 7) % 3)) * unit);
  }

  if (occluder.width > 0 && occluder.height > 0) {
    const double base = 60 + 140 * u(rng), freq = 2 * kPi / (6 + 10 * u(rng)) / unit, phase = 2 * kPi * u(rng);
    for (int y = std::max(0, static_cast<int>(occluder.y)); y < std::min(height, static_cast<int>(occluder.y + occluder.height)); ++y)
      for (int x = std::max(0, static_cast<int>(occluder.x)); x < std::min(width, static_cast<int>(occluder.x + occluder.width)); ++x)
        cv.at(x, y) = base + 25 * std::sin(freq * (x + 0.6 * y) + phase);
  }

  std::normal_distribution<double> noise(0.0, pixel_noise);
  GrayImage img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = cv.at(x, y) + (pixel_noise > 0 ? noise(rng) : 0.0);
      img.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  return img;
}

RenderedFace render_synthetic_face(ModeId mode, const SyntheticFaceOptions& face, const RenderOptions& render,
                                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Shape local = sample_face_shape(mode, face, rng);
  const Box local_box = face_box_from_shape(local);
  const double width = render.face_width * (1.0 + render.scale_jitter * u(rng));
  SimilarityTransform t;
  t.scale = width / local_box.width;
  t.angle = render.max_roll_degrees * kPi / 180.0 * u(rng);
  const double slack = std::max(0.0, (render.image_size - 1.15 * width) / 2.0);
  const Point centre = Point::Constant(render.image_size / 2.0) + slack * Point(u(rng), u(rng));
  t.translation = centre - t.scale * t.rotation() * local_box.center();

  RenderedFace out;
  out.mode = mode;
  out.shape = t.apply(local);
  const Box truth_box = face_box_from_shape(out.shape);
  out.face = truth_box;
  out.face.x += render.box_jitter * truth_box.width * u(rng);
  out.face.y += render.box_jitter * truth_box.width * u(rng);
  const double grow = 1.0 + render.box_jitter * u(rng);
  out.face.width *= grow;
  out.face.height *= grow;

  Box occluder;
  if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < render.occluder_probability) {
    const double side = render.occluder_size * truth_box.width;
    occluder = {truth_box.x + (truth_box.width - side) * (0.5 + 0.5 * u(rng)),
                truth_box.y + (truth_box.height - side) * (0.5 + 0.5 * u(rng)), side, side};
  }
  out.occluded.assign(out.shape.size(), 0);
  for (std::size_t i = 0; i < out.shape.size(); ++i) {
    const Point& p = out.shape[i];
    out.occluded[i] = occluder.width > 0 && p.x() >= occluder.x && p.x() < occluder.x + occluder.width &&
                      p.y() >= occluder.y && p.y() < occluder.y + occluder.height;
  }
  out.image = render_face_image(out.shape, render.image_size, render.image_size, truth_box.width, occluder,
                                render.pixel_noise, rng);
  return out;
}

// ---------------------------------------------------------------------------
// Candidate-level instances

SyntheticInstance synth_generate(const ModelEnsemble& ensemble, const SynthInstanceOptions& options,
                                 std::uint64_t seed) {
  if (ensemble.modes.empty()) throw InsufficientDataError("ensemble has no modes");
  int m = options.mode;
  if (m < 0) m = static_cast<int>(mode_seed(seed, -1) % ensemble.modes.size());
  if (m >= static_cast<int>(ensemble.modes.size())) throw Error(ErrorCode::invalid_argument, "mode index out of range");
  return synth_generate(ensemble.modes[static_cast<std::size_t>(m)], m, options, seed);
}

SyntheticInstance synth_generate(const ModeModel& mode, int mode_index, const SynthInstanceOptions& o,
                                 std::uint64_t seed) {
  if (!(o.occlusion_rate >= 0.0 && o.occlusion_rate < 0.5))
    throw Error(ErrorCode::invalid_argument, "occlusion rate must lie in [0, 0.5)");
  if (o.clutter < 0 || o.noise < 0 || !(o.face_width > 0) || !(o.clutter_min > 0) || o.clutter_max < o.clutter_min)
    throw Error(ErrorCode::invalid_argument, "invalid synthetic instance options");
  const auto& pdm = mode.shape.base;
  const auto n = pdm.landmark_count();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  SyntheticInstance inst;
  inst.seed = seed;
  inst.mode_index = mode_index;
  inst.mode = mode.id;
  inst.q.resize(static_cast<Eigen::Index>(pdm.dimension()));
  for (Eigen::Index k = 0; k < inst.q.size(); ++k) {
    double v = 0.0;
    do v = g(rng); while (std::abs(v) > 3.0);
    inst.q[k] = v * std::sqrt(pdm.eigenvalues[k]);
  }
  const Shape model = deform(pdm, inst.q);
  const Box box = face_box_from_shape(model);
  inst.transform.scale = o.face_width / box.width;
  inst.transform.angle = 0.4 * (u(rng) - 0.5);
  const Point centre = Point::Constant(o.face_width) + 10.0 * Point(u(rng) - 0.5, u(rng) - 0.5);
  inst.transform.translation = centre - inst.transform.linear() * box.center();
  inst.shape = inst.transform.apply(model);

  // exactly floor(rate * N) occluded landmarks
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, i - 1)(rng))]);
  const auto occluded = static_cast<std::size_t>(std::floor(o.occlusion_rate * static_cast<double>(n) + 1e-9));
  inst.visible.assign(n, 1);
  for (std::size_t k = 0; k < occluded; ++k) inst.visible[static_cast<std::size_t>(order[k])] = 0;

  const auto groups = mode.shape.groups_for(model);
  const Eigen::Matrix2d lin = inst.transform.linear();
  const double var = std::max(o.noise, 0.5);
  const Eigen::Matrix2d planted = var * var * Eigen::Matrix2d::Identity();
  inst.candidates.landmarks.resize(n);
  inst.true_candidate.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Matrix2d delta = lin * pdm.landmark_covariance[i] * lin.transpose();
    const Eigen::Matrix2d L = delta.llt().matrixL();
    const Eigen::Matrix2d delta_inv = delta.inverse();
    std::vector<Point> elements;
    for (const auto& p : groups[i].elements) elements.push_back(inst.transform.apply(p));

    CandidateList list;
    for (int c = 0; c < o.clutter; ++c) {
      Point p = inst.shape[i];
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double a = 2 * std::numbers::pi * u(rng);
        const double r = o.clutter_min + (o.clutter_max - o.clutter_min) * u(rng);
        p = inst.shape[i] + r * L * Point(std::cos(a), std::sin(a));
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& e : elements) nearest = std::min(nearest, std::sqrt((p - e).dot(delta_inv * (p - e))));
        if (nearest >= o.clutter_min) break;
      }
      const double conf = o.adversarial ? 1.0 + 0.5 * u(rng) : 0.05 + 0.45 * u(rng);
      list.push_back(gaussian_candidate(p, planted, conf));
    }
    if (inst.visible[i]) {
      const Point p = inst.shape[i] + o.noise * Point(g(rng), g(rng));
      const auto slot = std::uniform_int_distribution<std::size_t>(0, list.size())(rng);
      list.insert(list.begin() + static_cast<std::ptrdiff_t>(slot), gaussian_candidate(p, planted, 0.6 + 0.4 * u(rng)));
      inst.true_candidate[i] = static_cast<int>(slot);
    }
    inst.candidates.landmarks[i] = std::move(list);
  }
  return inst;
}

std::string instance_json(const SyntheticInstance& inst) {
  using nlohmann::json;
  json j;
  j["seed"] = inst.seed;
  j["mode_index"] = inst.mode_index;
  j["mode"] = {inst.mode.pose, inst.mode.expression};
  j["transform"] = {inst.transform.scale, inst.transform.angle, inst.transform.translation.x(),
                    inst.transform.translation.y()};
  j["q"] = std::vector<double>(inst.q.data(), inst.q.data() + inst.q.size());
  json shape = json::array();
  for (const auto& p : inst.shape.points) shape.push_back({p.x(), p.y()});
  j["shape"] = shape;
  j["visible"] = inst.visible;
  j["true_candidate"] = inst.true_candidate;
  json cands = json::array();
  for (const auto& list : inst.candidates.landmarks) {
    json l = json::array();
    for (const auto& c : list)
      l.push_back({{"mean", {c.mean.x(), c.mean.y()}},
                   {"cov", {c.covariance(0, 0), c.covariance(0, 1), c.covariance(1, 1)}},
                   {"confidence", c.confidence}});
    cands.push_back(l);
  }
  j["candidates"] = cands;
  return j.dump();
}

double mahalanobis_shape_error(const PointDistributionModel& pdm, const SimilarityTransform& transform,
                               const Shape& fitted, const Shape& truth) {
  const auto n = pdm.landmark_count();
  if (fitted.size() != n || truth.size() != n) throw DimensionError("shapes do not match the model");
  const SimilarityTransform inv = transform.inverse();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point e = inv.apply(fitted[i]) - inv.apply(truth[i]);
    sum += std::sqrt(e.dot(pdm.landmark_covariance[i].inverse() * e));
  }
  return sum / static_cast<double>(n);
}

}  // namespace erclm
