#include "erclm/shape_model.hpp"

#include "erclm/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace erclm {

namespace {

std::vector<int> iota_range(int first, int last_inclusive) {
  std::vector<int> out(static_cast<std::size_t>(last_inclusive - first + 1));
  std::iota(out.begin(), out.end(), first);
  return out;
}

void check_same_size(std::span<const Shape> shapes) {
  if (shapes.empty()) throw InsufficientDataError("no shapes");
  const auto n = shapes.front().size();
  if (n == 0) throw DimensionError("empty shape");
  for (const auto& s : shapes)
    if (s.size() != n) throw DimensionError("shapes have different landmark counts");
}

}  // namespace

LandmarkScheme LandmarkScheme::frontal68() {
  LandmarkScheme s;
  s.name = "frontal68";
  s.landmark_count = 68;
  s.kinds.assign(68, LandmarkKind::point);
  for (int i = 0; i <= 16; ++i) s.kinds[static_cast<std::size_t>(i)] = LandmarkKind::contour;
  s.contours = {iota_range(0, 16)};
  s.anchor_indices = {36, 39, 42, 45, 33};
  s.right_outer_eye = 36;
  s.left_outer_eye = 45;
  s.jawline = iota_range(0, 16);
  s.frontal_correspondence = iota_range(0, 67);
  return s;
}

LandmarkScheme LandmarkScheme::profile40() {
  LandmarkScheme s;
  s.name = "profile40";
  s.landmark_count = 40;
  s.kinds.assign(40, LandmarkKind::point);
  for (int i = 0; i <= 9; ++i) s.kinds[static_cast<std::size_t>(i)] = LandmarkKind::contour;
  s.contours = {iota_range(0, 9)};
  // visible eye corners, nostril, lip tip
  s.anchor_indices = {15, 18, 26, 28};
  s.jawline = iota_range(0, 9);
  s.frontal_correspondence = {16, 15, 14, 13, 12, 11, 10, 9,  8,  7,  22, 23, 24, 25,
                              26, 45, 44, 43, 42, 47, 46, 27, 28, 29, 30, -1, 35, 33,
                              54, 53, 52, 51, 57, 56, 55, 64, 63, 62, 66, 65};
  return s;
}

LandmarkScheme LandmarkScheme::lfpw29() {
  LandmarkScheme s;
  s.name = "lfpw29";
  s.landmark_count = 29;
  s.kinds.assign(29, LandmarkKind::point);
  s.anchor_indices = {16, 17, 20};
  s.right_outer_eye = 8;
  s.left_outer_eye = 9;
  s.frontal_correspondence.assign(29, -1);
  return s;
}

LandmarkScheme LandmarkScheme::for_count(int landmark_count) {
  switch (landmark_count) {
    case 68: return frontal68();
    case 40: return profile40();
    case 29: return lfpw29();
    default: throw DimensionError("no landmark scheme with " + std::to_string(landmark_count) + " points");
  }
}

void LandmarkScheme::validate() const {
  const auto n = static_cast<std::size_t>(landmark_count);
  if (landmark_count <= 0) throw DimensionError("landmark scheme has no landmarks");
  if (kinds.size() != n) throw DimensionError("landmark kinds do not match landmark count");
  std::set<int> anchors(anchor_indices.begin(), anchor_indices.end());
  if (anchors.size() != anchor_indices.size()) throw Error(ErrorCode::invalid_argument, "duplicate anchor index");
  if (anchor_indices.size() < 3) throw Error(ErrorCode::invalid_argument, "fewer than 3 anchors");
  for (int a : anchor_indices)
    if (a < 0 || a >= landmark_count) throw DimensionError("anchor index out of range");
  for (const auto& c : contours)
    for (int i : c)
      if (i < 0 || i >= landmark_count) throw DimensionError("contour index out of range");
}

void PointDistributionModel::validate() const {
  const auto n = landmark_count();
  if (n == 0) throw DimensionError("empty mean shape");
  if (static_cast<std::size_t>(basis.rows()) != 2 * n) throw DimensionError("basis rows != 2N");
  if (eigenvalues.size() != basis.cols()) throw DimensionError("eigenvalue count != basis columns");
  if (landmark_covariance.size() != n || kinds.size() != n) throw DimensionError("per-landmark data size");
  const Eigen::MatrixXd gram = basis.transpose() * basis;
  if (!gram.isIdentity(1e-8)) throw Error(ErrorCode::invalid_argument, "basis is not orthonormal");
  for (Eigen::Index k = 0; k < eigenvalues.size(); ++k) {
    if (!(eigenvalues[k] > 0.0)) throw Error(ErrorCode::invalid_argument, "non-positive eigenvalue");
    if (k > 0 && eigenvalues[k] > eigenvalues[k - 1]) throw Error(ErrorCode::invalid_argument, "eigenvalues increase");
  }
  for (const auto& cov : landmark_covariance) {
    if (!cov.isApprox(cov.transpose())) throw Error(ErrorCode::invalid_argument, "asymmetric covariance");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    if (!(es.eigenvalues().minCoeff() > 0.0)) throw Error(ErrorCode::invalid_argument, "covariance not SPD");
  }
  std::set<int> anchors(anchor_indices.begin(), anchor_indices.end());
  if (anchors.size() != anchor_indices.size() || anchors.size() < 3)
    throw Error(ErrorCode::invalid_argument, "anchor indices must be >= 3 distinct entries");
}

Shape deform(const PointDistributionModel& pdm, const Eigen::VectorXd& q) {
  if (static_cast<std::size_t>(q.size()) != pdm.dimension())
    throw DimensionError("deformation length does not match model dimension");
  const Eigen::VectorXd flat = pdm.mean_shape.flatten() + pdm.basis * q;
  return Shape::from_flat(flat);
}

Shape instantiate(const PointDistributionModel& pdm, const PdmParameter& params) {
  return params.transform.apply(deform(pdm, params.q));
}

Eigen::VectorXd project(const PointDistributionModel& pdm, const Shape& normalized) {
  if (normalized.size() != pdm.landmark_count()) throw DimensionError("shape size mismatch");
  return pdm.basis.transpose() * (normalized.flatten() - pdm.mean_shape.flatten());
}

std::vector<int> all_indices(std::size_t n) {
  std::vector<int> out(n);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

namespace {

std::vector<Point> gather(const Shape& s, std::span<const int> idx) {
  std::vector<Point> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(s[static_cast<std::size_t>(i)]);
  return out;
}

// Moves the anchor centroid to the origin and scales the anchors to unit Frobenius norm.
SimilarityTransform anchor_normalizer(const Shape& s, std::span<const int> anchors) {
  Point c = Point::Zero();
  for (int i : anchors) c += s[static_cast<std::size_t>(i)];
  c /= static_cast<double>(anchors.size());
  double norm2 = 0.0;
  for (int i : anchors) norm2 += (s[static_cast<std::size_t>(i)] - c).squaredNorm();
  if (norm2 < 1e-24) throw SingularConfigurationError("anchor points are coincident");
  SimilarityTransform t;
  t.scale = 1.0 / std::sqrt(norm2);
  t.translation = -t.scale * c;
  return t;
}

double max_point_change(const Shape& a, const Shape& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).norm());
  return m;
}

}  // namespace

ProcrustesResult procrustes_align(std::span<const Shape> shapes, std::span<const int> anchor_indices,
                                  const ProcrustesOptions& options) {
  check_same_size(shapes);
  const auto n = shapes.front().size();
  if (anchor_indices.size() < 2) throw Error(ErrorCode::invalid_argument, "need at least 2 anchors");
  for (int a : anchor_indices)
    if (a < 0 || static_cast<std::size_t>(a) >= n) throw DimensionError("anchor index out of range");

  ProcrustesResult result;
  Shape mean = anchor_normalizer(shapes.front(), anchor_indices).apply(shapes.front());
  result.transforms.resize(shapes.size());
  result.normalized.resize(shapes.size());

  const auto align_all = [&](const Shape& target) {
    const auto target_anchors = gather(target, anchor_indices);
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      const auto src = gather(shapes[k], anchor_indices);
      result.transforms[k] = fit_similarity(src, target_anchors);
      result.normalized[k] = result.transforms[k].apply(shapes[k]);
    }
  };

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    align_all(mean);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(2 * n));
    for (const auto& s : result.normalized) acc += s.flatten();
    Shape next = Shape::from_flat(acc / static_cast<double>(shapes.size()));
    // Re-anchor the frame: same orientation as the previous mean, unit anchor scale.
    const auto orient = fit_similarity(gather(next, anchor_indices), gather(mean, anchor_indices));
    SimilarityTransform rot;
    rot.angle = orient.angle;
    next = rot.apply(next);
    next = anchor_normalizer(next, anchor_indices).apply(next);

    result.final_change = max_point_change(next, mean);
    result.iterations = iter + 1;
    mean = std::move(next);
    if (result.final_change < options.tolerance) break;
  }
  align_all(mean);
  result.mean = std::move(mean);
  return result;
}

PointDistributionModel train_pdm(std::span<const Shape> normalized, const LandmarkScheme& scheme,
                                 ModeId mode, const PdmTrainingOptions& options) {
  check_same_size(normalized);
  if (normalized.size() < 2) throw InsufficientDataError("need at least 2 shapes to train a PDM");
  if (!(options.variance_fraction > 0.0 && options.variance_fraction <= 1.0))
    throw Error(ErrorCode::invalid_argument, "variance fraction must lie in (0, 1]");
  const auto n = normalized.front().size();
  if (static_cast<std::size_t>(scheme.landmark_count) != n) throw DimensionError("scheme does not match shapes");

  const auto count = static_cast<Eigen::Index>(normalized.size());
  Eigen::MatrixXd data(count, static_cast<Eigen::Index>(2 * n));
  for (Eigen::Index k = 0; k < count; ++k) data.row(k) = normalized[static_cast<std::size_t>(k)].flatten().transpose();
  const Eigen::VectorXd mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(count - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd evals = es.eigenvalues().reverse();
  const Eigen::MatrixXd evecs = es.eigenvectors().rowwise().reverse();

  double total = 0.0;
  for (Eigen::Index k = 0; k < evals.size(); ++k) total += std::max(evals[k], 0.0);

  Eigen::Index d = 1;
  if (total > 1e-300) {
    double acc = 0.0;
    d = 0;
    while (d < evals.size()) {
      acc += std::max(evals[d], 0.0);
      ++d;
      if (acc >= options.variance_fraction * total * (1.0 - 1e-12)) break;
    }
  }

  PointDistributionModel pdm;
  pdm.mean_shape = Shape::from_flat(mean);
  pdm.basis = evecs.leftCols(d);
  pdm.eigenvalues = evals.head(d);
  // Deterministic sign: largest-magnitude entry of each column positive.
  for (Eigen::Index k = 0; k < d; ++k) {
    Eigen::Index arg;
    pdm.basis.col(k).cwiseAbs().maxCoeff(&arg);
    if (pdm.basis(arg, k) < 0) pdm.basis.col(k) *= -1.0;
  }
  const double floor = std::max(1e-12 * std::max(evals[0], 0.0), 1e-15);
  for (Eigen::Index k = 0; k < d; ++k) pdm.eigenvalues[k] = std::max(pdm.eigenvalues[k], floor);
  for (Eigen::Index k = 1; k < d; ++k) pdm.eigenvalues[k] = std::min(pdm.eigenvalues[k], pdm.eigenvalues[k - 1]);

  pdm.landmark_covariance.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto block = centered.middleCols(static_cast<Eigen::Index>(2 * i), 2);
    Eigen::Matrix2d c = block.transpose() * block / static_cast<double>(count - 1);
    const double reg = options.covariance_regularization * c.trace() / 2.0;
    c.diagonal().array() += std::max(reg, 1e-12);
    pdm.landmark_covariance[i] = 0.5 * (c + c.transpose());
  }
  pdm.kinds = scheme.kinds;
  pdm.contours = scheme.contours;
  pdm.anchor_indices = scheme.anchor_indices;
  pdm.mode = mode;
  return pdm;
}

// ---------------------------------------------------------------------------
// Dense PDM

namespace {

constexpr int kArcTableSteps = 256;

// Centripetal Catmull-Rom segment p1 -> p2 (Barry-Goldman form), u in [0,1].
Point catmull_rom(const Point& p0, const Point& p1, const Point& p2, const Point& p3, double u) {
  const auto knot = [](const Point& a, const Point& b) { return std::sqrt(std::max((b - a).norm(), 1e-12)); };
  const double t0 = 0.0;
  const double t1 = t0 + knot(p0, p1);
  const double t2 = t1 + knot(p1, p2);
  const double t3 = t2 + knot(p2, p3);
  const double t = t1 + u * (t2 - t1);
  const Point a1 = (t1 - t) / (t1 - t0) * p0 + (t - t0) / (t1 - t0) * p1;
  const Point a2 = (t2 - t) / (t2 - t1) * p1 + (t - t1) / (t2 - t1) * p2;
  const Point a3 = (t3 - t) / (t3 - t2) * p2 + (t - t2) / (t3 - t2) * p3;
  const Point b1 = (t2 - t) / (t2 - t0) * a1 + (t - t0) / (t2 - t0) * a2;
  const Point b2 = (t3 - t) / (t3 - t1) * a2 + (t - t1) / (t3 - t1) * a3;
  return (t2 - t) / (t2 - t1) * b1 + (t - t1) / (t2 - t1) * b2;
}

// The curve of one group, split into one or two Catmull-Rom segments.
struct GroupCurve {
  struct Segment {
    Point p0, p1, p2, p3;
    bool degenerate = false;
    Point eval(double u) const { return degenerate ? p1 : catmull_rom(p0, p1, p2, p3, u); }
  };
  std::vector<Segment> segments;

  static Segment make(const Point& before, const Point& a, const Point& b, const Point& after) {
    Segment s{before, a, b, after, (b - a).norm() < 1e-12};
    return s;
  }

  GroupCurve(const Point* prev, const Point& cur, const Point* next) {
    if (prev && next) {
      segments.push_back(make(2.0 * *prev - cur, *prev, cur, *next));
      segments.push_back(make(*prev, cur, *next, 2.0 * *next - cur));
    } else if (prev) {
      segments.push_back(make(2.0 * *prev - cur, *prev, cur, 2.0 * cur - *prev));
    } else if (next) {
      segments.push_back(make(2.0 * cur - *next, cur, *next, 2.0 * *next - cur));
    }
  }

  // Global parameter u in [0, segments) -> point.
  Point eval(double u) const {
    const auto k = std::min(static_cast<std::size_t>(u), segments.size() - 1);
    return segments[k].eval(u - static_cast<double>(k));
  }

  // Parameter samples and cumulative arc length along the whole curve.
  void arc_table(std::vector<double>& params, std::vector<double>& lengths) const {
    params.clear();
    lengths.clear();
    const int total = kArcTableSteps * static_cast<int>(segments.size());
    Point last = eval(0.0);
    double acc = 0.0;
    for (int j = 0; j <= total; ++j) {
      const double u = static_cast<double>(j) / kArcTableSteps;
      const Point p = eval(std::min(u, static_cast<double>(segments.size())));
      acc += (p - last).norm();
      last = p;
      params.push_back(u);
      lengths.push_back(acc);
    }
  }
};

double param_at_length(const std::vector<double>& params, const std::vector<double>& lengths, double target) {
  const auto it = std::lower_bound(lengths.begin(), lengths.end(), target);
  if (it == lengths.begin()) return params.front();
  if (it == lengths.end()) return params.back();
  const auto j = static_cast<std::size_t>(it - lengths.begin());
  const double span = lengths[j] - lengths[j - 1];
  const double f = span > 0 ? (target - lengths[j - 1]) / span : 0.0;
  return params[j - 1] + f * (params[j] - params[j - 1]);
}

}  // namespace

DenseGroup interpolate_contour(const Point* prev, const Point& current, const Point* next, int samples) {
  DenseGroup g;
  if (samples <= 0 || (!prev && !next)) {
    g.elements = {current};
    return g;
  }
  const GroupCurve curve(prev, current, next);
  std::vector<double> params, lengths;
  curve.arc_table(params, lengths);
  const double total = lengths.back();

  // Arc position of the representative: end of the first segment for interior
  // groups, the start (next-only) or end (prev-only) for one-sided groups.
  double rep_fraction = 0.0;
  if (prev && next) {
    rep_fraction = total > 0 ? lengths[static_cast<std::size_t>(kArcTableSteps)] / total : 0.5;
  } else if (prev) {
    rep_fraction = 1.0;
  }

  // One arc-length grid of spacing 1/(N_s + 2) through the representative, as
  // balanced about it as the curve ends allow. Collinear neighbours give evenly
  // spaced elements.
  const double h = 1.0 / (samples + 2);
  const int before_max = static_cast<int>(std::floor(rep_fraction / h + 1e-9));
  const int after_max = static_cast<int>(std::floor((1.0 - rep_fraction) / h + 1e-9));
  const int before = std::clamp((samples + 1) / 2, samples - after_max, before_max);
  std::vector<std::pair<double, Point>> ordered;
  for (int m = -before; m <= samples - before; ++m) {
    if (m == 0) {
      g.representative_slot = static_cast<int>(ordered.size());
      ordered.emplace_back(rep_fraction, current);
      continue;
    }
    const double f = std::clamp(rep_fraction + m * h, 0.0, 1.0);
    ordered.emplace_back(f, curve.eval(param_at_length(params, lengths, f * total)));
  }
  for (auto& [f, p] : ordered) g.elements.push_back(p);
  return g;
}

double distance_to_contour_curve(const Point* prev, const Point& current, const Point* next, const Point& p) {
  if (!prev && !next) return (p - current).norm();
  const GroupCurve curve(prev, current, next);
  const int total = 4096 * static_cast<int>(curve.segments.size());
  double best = std::numeric_limits<double>::infinity();
  double best_u = 0.0;
  for (int j = 0; j <= total; ++j) {
    const double u = static_cast<double>(j) / 4096;
    const double d = (curve.eval(std::min(u, static_cast<double>(curve.segments.size()))) - p).norm();
    if (d < best) { best = d; best_u = u; }
  }
  // Golden-section polish around the coarse minimum.
  double lo = std::max(0.0, best_u - 1.0 / 4096), hi = std::min(static_cast<double>(curve.segments.size()), best_u + 1.0 / 4096);
  for (int it = 0; it < 60; ++it) {
    const double m1 = lo + (hi - lo) * 0.381966, m2 = lo + (hi - lo) * 0.618034;
    if ((curve.eval(m1) - p).norm() < (curve.eval(m2) - p).norm()) hi = m2; else lo = m1;
  }
  return std::min(best, (curve.eval(0.5 * (lo + hi)) - p).norm());
}

std::size_t DensePdm::dense_count() const {
  std::size_t n = 0;
  for (const auto& g : mean_groups) n += g.elements.size();
  return n;
}

int DensePdm::samples_for(int landmark) const {
  const auto it = sample_overrides.find(landmark);
  return it == sample_overrides.end() ? samples_per_contour : it->second;
}

std::vector<DenseGroup> DensePdm::groups_for(const Shape& shape) const {
  const auto n = base.landmark_count();
  if (shape.size() != n) throw DimensionError("shape does not match dense model");
  std::vector<DenseGroup> groups(n);
  std::vector<bool> done(n, false);
  for (const auto& contour : base.contours) {
    for (std::size_t k = 0; k < contour.size(); ++k) {
      const auto i = static_cast<std::size_t>(contour[k]);
      if (base.kinds[i] != LandmarkKind::contour) continue;
      const Point* prev = k > 0 ? &shape[static_cast<std::size_t>(contour[k - 1])] : nullptr;
      const Point* next = k + 1 < contour.size() ? &shape[static_cast<std::size_t>(contour[k + 1])] : nullptr;
      groups[i] = interpolate_contour(prev, shape[i], next, samples_for(static_cast<int>(i)));
      done[i] = true;
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!done[i]) groups[i] = DenseGroup{{shape[i]}, 0};
  return groups;
}

Shape DensePdm::dense_mean() const {
  Shape out;
  for (const auto& g : mean_groups)
    for (const auto& p : g.elements) out.points.push_back(p);
  return out;
}

DensePdm densify(const PointDistributionModel& pdm, int samples_per_contour, std::map<int, int> sample_overrides) {
  if (samples_per_contour < 0) throw Error(ErrorCode::invalid_argument, "negative sample count");
  DensePdm dense;
  dense.base = pdm;
  dense.samples_per_contour = samples_per_contour;
  dense.sample_overrides = std::move(sample_overrides);
  dense.mean_groups = dense.groups_for(pdm.mean_shape);
  return dense;
}

namespace {

std::vector<double> arc_lengths(const Shape& shape, const std::vector<int>& contour) {
  std::vector<double> acc{0.0};
  for (std::size_t k = 1; k < contour.size(); ++k)
    acc.push_back(acc.back() + (shape[static_cast<std::size_t>(contour[k])] -
                                shape[static_cast<std::size_t>(contour[k - 1])]).norm());
  return acc;
}

}  // namespace

std::vector<double> contour_fractions(const Shape& shape, const std::vector<int>& contour) {
  for (int i : contour)
    if (i < 0 || static_cast<std::size_t>(i) >= shape.size()) throw DimensionError("contour index out of range");
  auto acc = arc_lengths(shape, contour);
  const double total = acc.back();
  for (auto& a : acc) a = total > 0 ? a / total : 0.0;
  return acc;
}

Shape slide_contours(const Shape& shape, std::span<const std::vector<int>> contours,
                     std::span<const LandmarkKind> kinds, std::span<const std::vector<double>> fractions) {
  if (kinds.size() != shape.size()) throw DimensionError("kinds do not match the shape");
  if (!fractions.empty() && fractions.size() != contours.size())
    throw DimensionError("one fraction list per contour is required");
  Shape out = shape;
  for (std::size_t c = 0; c < contours.size(); ++c) {
    const auto& contour = contours[c];
    if (contour.size() < 3) continue;
    if (!fractions.empty() && fractions[c].size() != contour.size())
      throw DimensionError("fraction list does not match its contour");
    const auto acc = arc_lengths(shape, contour);
    const double total = acc.back();
    if (!(total > 0)) continue;
    for (std::size_t k = 1; k + 1 < contour.size(); ++k) {
      const auto i = static_cast<std::size_t>(contour[k]);
      if (kinds[i] != LandmarkKind::contour) continue;
      const double u = fractions.empty() ? static_cast<double>(k) / static_cast<double>(contour.size() - 1)
                                         : std::clamp(fractions[c][k], 0.0, 1.0);
      const double target = total * u;
      const auto it = std::upper_bound(acc.begin(), acc.end(), target);
      const auto j = std::clamp(static_cast<std::size_t>(it - acc.begin()), std::size_t{1}, contour.size() - 1);
      const double span = acc[j] - acc[j - 1];
      const double f = span > 0 ? (target - acc[j - 1]) / span : 0.0;
      const Point& a = shape[static_cast<std::size_t>(contour[j - 1])];
      const Point& b = shape[static_cast<std::size_t>(contour[j])];
      out[i] = a + f * (b - a);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exemplars

ExemplarSet cluster_exemplars(std::span<const Shape> normalized, int cluster_count, std::uint64_t seed,
                              double radius_percentile) {
  check_same_size(normalized);
  if (cluster_count < 1) throw Error(ErrorCode::invalid_argument, "cluster count must be >= 1");
  if (static_cast<std::size_t>(cluster_count) > normalized.size())
    throw InsufficientDataError("more clusters than shapes");

  const auto m = normalized.size();
  const auto k = static_cast<std::size_t>(cluster_count);
  std::vector<Eigen::VectorXd> data;
  data.reserve(m);
  for (const auto& s : normalized) data.push_back(s.flatten());

  // k-means++ seeding
  std::mt19937_64 rng(seed);
  std::vector<Eigen::VectorXd> centers;
  centers.push_back(data[std::uniform_int_distribution<std::size_t>(0, m - 1)(rng)]);
  std::vector<double> d2(m);
  while (centers.size() < k) {
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) best = std::min(best, (data[j] - c).squaredNorm());
      d2[j] = best;
      sum += best;
    }
    std::size_t pick = m;
    if (sum > 0) {
      double r = std::uniform_real_distribution<double>(0.0, sum)(rng);
      std::size_t last_positive = 0;
      for (std::size_t j = 0; j < m; ++j) {
        if (d2[j] <= 0) continue;
        last_positive = j;
        if (r < d2[j]) { pick = j; break; }
        r -= d2[j];
      }
      if (pick == m) pick = last_positive;
    } else {
      pick = centers.size();
    }
    centers.push_back(data[pick]);
  }

  std::vector<std::size_t> assign(m, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = iter == 0;
    for (std::size_t j = 0; j < m; ++j) {
      std::size_t arg = 0;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double v = (data[j] - centers[c]).squaredNorm();
        if (v < best) { best = v; arg = c; }
      }
      if (arg != assign[j]) changed = true;
      assign[j] = arg;
    }
    for (std::size_t c = 0; c < k; ++c) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(data[0].size());
      std::size_t members = 0;
      for (std::size_t j = 0; j < m; ++j)
        if (assign[j] == c) { acc += data[j]; ++members; }
      if (members > 0) centers[c] = acc / static_cast<double>(members);
    }
    if (!changed) break;
  }

  ExemplarSet out;
  for (const auto& c : centers) out.centers.push_back(Shape::from_flat(c));
  std::vector<double> distances;
  for (std::size_t j = 0; j < m; ++j) {
    const auto& c = out.centers[assign[j]];
    for (std::size_t i = 0; i < c.size(); ++i) distances.push_back((normalized[j][i] - c[i]).norm());
  }
  std::sort(distances.begin(), distances.end());
  const auto rank = static_cast<std::size_t>(std::ceil(radius_percentile * static_cast<double>(distances.size())));
  out.radius = distances[std::clamp<std::size_t>(rank, 1, distances.size()) - 1];
  return out;
}

}  // namespace erclm
