#include "erclm/fitter.hpp"

#include "erclm/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace erclm {

const char* to_string(SamplingKind kind) noexcept {
  switch (kind) {
    case SamplingKind::uniform: return "uniform";
    case SamplingKind::confidence: return "confidence";
    case SamplingKind::greedy: return "greedy";
  }
  return "unknown";
}

SamplingKind parse_sampling_kind(const std::string& name) {
  if (name == "uniform") return SamplingKind::uniform;
  if (name == "confidence") return SamplingKind::confidence;
  if (name == "greedy") return SamplingKind::greedy;
  throw Error(ErrorCode::invalid_argument, "unknown sampling strategy '" + name + "'");
}

int OcclusionLabels::visible_count() const {
  return static_cast<int>(std::count(visible.begin(), visible.end(), std::uint8_t{1}));
}

std::uint64_t mode_seed(std::uint64_t seed, int mode_index) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(mode_index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

double max_confidence(const CandidateList& list) {
  double m = 0.0;
  for (const auto& c : list) m = std::max(m, c.confidence);
  return m;
}

int top_candidate(const CandidateList& list) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(list.size()); ++k)
    if (list[static_cast<std::size_t>(k)].confidence > list[static_cast<std::size_t>(best)].confidence) best = k;
  return best;
}

// Walks a weight table for a uniform draw in [0, total), skipping `exclude`.
int draw_index(const std::vector<double>& weights, double u, int exclude = -1) {
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(weights.size()); ++i)
    if (i != exclude) total += weights[static_cast<std::size_t>(i)];
  double target = u * total;
  int last = -1;
  for (int i = 0; i < static_cast<int>(weights.size()); ++i) {
    if (i == exclude || weights[static_cast<std::size_t>(i)] <= 0) continue;
    last = i;
    if (target < weights[static_cast<std::size_t>(i)]) return i;
    target -= weights[static_cast<std::size_t>(i)];
  }
  return last;
}

}  // namespace

HypothesisSampler::HypothesisSampler(const CandidateSet& candidates, SamplingKind kind, std::uint64_t seed)
    : candidates_(&candidates), kind_(kind), rng_(seed) {
  const auto n = candidates.landmark_count();
  for (std::size_t i = 0; i < n; ++i)
    if (!candidates.landmarks[i].empty()) detectable_.push_back(static_cast<int>(i));
  if (detectable_.size() < 2) throw UnalignableError("fewer than two landmarks have candidates");

  landmark_p_.assign(n, 0.0);
  candidate_p_.resize(n);
  bool informative = kind != SamplingKind::uniform;
  if (informative) {
    int positive = 0;
    for (int i : detectable_) positive += max_confidence(candidates.landmarks[static_cast<std::size_t>(i)]) > 0;
    informative = positive >= 2;
  }
  for (int i : detectable_) {
    const auto& list = candidates.landmarks[static_cast<std::size_t>(i)];
    auto& cp = candidate_p_[static_cast<std::size_t>(i)];
    cp.resize(list.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < list.size(); ++k) sum += list[k].confidence;
    for (std::size_t k = 0; k < list.size(); ++k)
      cp[k] = (kind != SamplingKind::uniform && sum > 0) ? list[k].confidence / sum : 1.0 / static_cast<double>(list.size());
    landmark_p_[static_cast<std::size_t>(i)] = informative ? max_confidence(list) : 1.0;
  }
  const double total = std::accumulate(landmark_p_.begin(), landmark_p_.end(), 0.0);
  for (auto& p : landmark_p_) p /= total;

  if (kind == SamplingKind::greedy) {
    ranked_ = detectable_;
    std::stable_sort(ranked_.begin(), ranked_.end(), [&](int a, int b) {
      return max_confidence(candidates.landmarks[static_cast<std::size_t>(a)]) >
             max_confidence(candidates.landmarks[static_cast<std::size_t>(b)]);
    });
  }
}

int HypothesisSampler::draw_candidate(int landmark) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
  return draw_index(candidate_p_[static_cast<std::size_t>(landmark)], u);
}

std::optional<Hypothesis> HypothesisSampler::next() {
  Hypothesis h;
  if (kind_ == SamplingKind::greedy) {
    if (greedy_j_ >= static_cast<int>(ranked_.size())) return std::nullopt;
    const int a = ranked_[static_cast<std::size_t>(greedy_i_)];
    const int b = ranked_[static_cast<std::size_t>(greedy_j_)];
    h.landmarks = {a, b};
    h.candidates = {top_candidate(candidates_->landmarks[static_cast<std::size_t>(a)]),
                    top_candidate(candidates_->landmarks[static_cast<std::size_t>(b)])};
    // pairs in rank order: (0,1), (0,2), (1,2), (0,3), ...
    if (++greedy_i_ >= greedy_j_) {
      greedy_i_ = 0;
      ++greedy_j_;
    }
    return h;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int a = draw_index(landmark_p_, unit(rng_));
  const int b = draw_index(landmark_p_, unit(rng_), a);
  h.landmarks = {a, b};
  h.candidates = {draw_candidate(a), draw_candidate(b)};
  return h;
}

Hypothesis sample_hypothesis(const CandidateSet& candidates, SamplingKind kind, std::mt19937_64& rng) {
  HypothesisSampler sampler(candidates, kind, rng());
  return *sampler.next();
}

// ---------------------------------------------------------------------------
// Mismatch degree

double median_mismatch(std::span<const double> errors) {
  if (errors.empty()) return kInfiniteMismatch;
  std::vector<double> v(errors.begin(), errors.end());
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

namespace {

// Precomputed dense groups and inverse covariances for repeated evaluation.
class MismatchEvaluator {
public:
  MismatchEvaluator(std::span<const DenseGroup> groups, std::span<const Eigen::Matrix2d> covariance) {
    if (groups.size() != covariance.size()) throw DimensionError("one covariance per landmark is required");
    groups_.assign(groups.begin(), groups.end());
    for (const auto& c : covariance) inverse_.push_back(c.inverse());
  }

  std::size_t size() const { return groups_.size(); }

  void evaluate(const SimilarityTransform& transform, const CandidateSet& candidates,
                std::vector<ElementMatch>& selection, std::vector<double>& scratch) const {
    if (candidates.landmark_count() != groups_.size()) throw DimensionError("candidate set size mismatch");
    const SimilarityTransform inv = transform.inverse();
    const Eigen::Matrix2d L = inv.linear();
    const Point t = inv.translation;
    selection.resize(groups_.size());
    scratch.resize(groups_.size());
    for (std::size_t i = 0; i < groups_.size(); ++i) {
      const auto& list = candidates.landmarks[i];
      const auto& elems = groups_[i].elements;
      ElementMatch m;
      m.element = groups_[i].representative_slot;
      double best = kInfiniteMismatch;
      const Eigen::Matrix2d& M = inverse_[i];
      for (std::size_t j = 0; j < list.size(); ++j) {
        const Point y = L * list[j].mean + t;
        for (std::size_t k = 0; k < elems.size(); ++k) {
          const Point d = y - elems[k];
          const double e2 = M(0, 0) * d.x() * d.x() + 2 * M(0, 1) * d.x() * d.y() + M(1, 1) * d.y() * d.y();
          if (e2 < best) {
            best = e2;
            m.element = static_cast<int>(k);
            m.candidate = static_cast<int>(j);
          }
        }
      }
      m.error = std::isfinite(best) ? std::sqrt(std::max(best, 0.0)) : kInfiniteMismatch;
      selection[i] = m;
      scratch[i] = m.error;
    }
  }

  double degree(std::vector<double>& scratch) const {
    const auto mid = scratch.begin() + static_cast<std::ptrdiff_t>((scratch.size() - 1) / 2);
    std::nth_element(scratch.begin(), mid, scratch.end());
    return *mid;
  }

  const std::vector<DenseGroup>& groups() const { return groups_; }
  const Eigen::Matrix2d& inverse(std::size_t i) const { return inverse_[i]; }

private:
  std::vector<DenseGroup> groups_;
  std::vector<Eigen::Matrix2d> inverse_;
};

}  // namespace

MismatchResult mismatch_degree(std::span<const DenseGroup> groups, std::span<const Eigen::Matrix2d> covariance,
                               const SimilarityTransform& transform, const CandidateSet& candidates) {
  const MismatchEvaluator eval(groups, covariance);
  MismatchResult r;
  std::vector<double> scratch;
  eval.evaluate(transform, candidates, r.selection, scratch);
  r.degree = scratch.empty() ? kInfiniteMismatch : eval.degree(scratch);
  return r;
}

MismatchResult mismatch_degree(const DensePdm& model, const SimilarityTransform& transform,
                               const CandidateSet& candidates) {
  return mismatch_degree(model.mean_groups, model.base.landmark_covariance, transform, candidates);
}

std::vector<int> select_inliers(std::span<const ElementMatch> selection, int minimum) {
  std::vector<int> finite;
  for (int i = 0; i < static_cast<int>(selection.size()); ++i)
    if (std::isfinite(selection[static_cast<std::size_t>(i)].error)) finite.push_back(i);
  if (static_cast<int>(finite.size()) < minimum)
    throw UnalignableError("only " + std::to_string(finite.size()) + " landmarks have a finite error");
  std::stable_sort(finite.begin(), finite.end(), [&](int a, int b) {
    return selection[static_cast<std::size_t>(a)].error < selection[static_cast<std::size_t>(b)].error;
  });
  const auto want = std::max<std::size_t>(selection.size() / 2, static_cast<std::size_t>(std::max(minimum, 0)));
  finite.resize(std::min(finite.size(), want));
  std::sort(finite.begin(), finite.end());
  return finite;
}

// ---------------------------------------------------------------------------
// Exemplar filtering

ExemplarFilterResult exemplar_filter(std::span<const int> provisional, std::span<const int> provisional_candidates,
                                     const ExemplarSet& exemplars, const DensePdm& model,
                                     const CandidateSet& candidates) {
  if (provisional.empty()) throw InsufficientDataError("exemplar filtering needs provisional inliers");
  if (provisional.size() != provisional_candidates.size())
    throw DimensionError("one candidate per provisional inlier is required");
  if (exemplars.centers.empty()) throw InsufficientDataError("no exemplars");
  const auto n = candidates.landmark_count();
  const double radius = std::max(exemplars.radius, 1e-12);

  std::vector<Point> observed;
  for (std::size_t k = 0; k < provisional.size(); ++k)
    observed.push_back(candidates.landmarks.at(static_cast<std::size_t>(provisional[k]))
                           .at(static_cast<std::size_t>(provisional_candidates[k]))
                           .mean);

  ExemplarFilterResult out;
  double best = kInfiniteMismatch;
  for (std::size_t e = 0; e < exemplars.centers.size(); ++e) {
    const Shape& center = exemplars.centers[e];
    if (center.size() != n) throw DimensionError("exemplar does not match the landmark count");
    std::vector<Point> source;
    for (int i : provisional) source.push_back(center[static_cast<std::size_t>(i)]);
    SimilarityTransform T = fit_similarity(source, observed);
    // one trimmed refit on the points that already agree
    std::vector<double> w(source.size());
    for (std::size_t k = 0; k < source.size(); ++k)
      w[k] = (T.inverse().apply(observed[k]) - source[k]).norm() <= radius ? 1.0 : 0.0;
    if (std::count(w.begin(), w.end(), 1.0) >= 2) T = fit_similarity(source, observed, w);
    const SimilarityTransform inv = T.inverse();
    double err = 0.0;
    for (std::size_t k = 0; k < source.size(); ++k) err += (inv.apply(observed[k]) - source[k]).norm();
    err /= static_cast<double>(source.size());
    if (err < best) {
      best = err;
      out.exemplar = static_cast<int>(e);
      out.transform = T;
      out.mean_error = err;
    }
  }

  const auto groups = model.groups_for(exemplars.centers[static_cast<std::size_t>(out.exemplar)]);
  const SimilarityTransform inv = out.transform.inverse();
  out.labels.visible.assign(n, 0);
  out.candidate.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    double nearest = kInfiniteMismatch;
    const auto& list = candidates.landmarks[i];
    for (std::size_t j = 0; j < list.size(); ++j) {
      const Point y = inv.apply(list[j].mean);
      for (const auto& p : groups[i].elements) {
        const double dist = (y - p).norm();
        if (dist < nearest) {
          nearest = dist;
          out.candidate[i] = static_cast<int>(j);
        }
      }
    }
    if (nearest <= radius) {
      out.labels.visible[i] = 1;
    } else {
      out.candidate[i] = -1;
    }
  }
  if (out.labels.visible_count() < 3) {
    out.fell_back = true;
    out.warning = "exemplar filter kept " + std::to_string(out.labels.visible_count()) +
                  " landmarks; using the provisional inliers";
    out.labels.visible.assign(n, 0);
    out.candidate.assign(n, -1);
    for (std::size_t k = 0; k < provisional.size(); ++k) {
      out.labels.visible[static_cast<std::size_t>(provisional[k])] = 1;
      out.candidate[static_cast<std::size_t>(provisional[k])] = provisional_candidates[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hallucination

Eigen::VectorXd solve_deformation(const Eigen::MatrixXd& basis, std::span<const Eigen::Matrix2d> A,
                                  std::span<const Eigen::Vector2d> b, std::span<const std::uint8_t> visible,
                                  bool* regularized) {
  const auto n = static_cast<std::size_t>(basis.rows() / 2);
  if (basis.rows() % 2 != 0 || A.size() != n || b.size() != n || visible.size() != n)
    throw DimensionError("basis, quadratic terms and labels disagree in landmark count");
  const auto d = basis.cols();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
  for (std::size_t i = 0; i < n; ++i) {
    if (!visible[i]) continue;
    const auto Phi = basis.middleRows(static_cast<Eigen::Index>(2 * i), 2);
    const Eigen::MatrixXd AP = A[i] * Phi;
    H.noalias() += Phi.transpose() * AP;
    g.noalias() += Phi.transpose() * b[i];
  }
  H = 0.5 * (H + H.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
  const double hi = es.eigenvalues().cwiseAbs().maxCoeff();
  const bool singular = !(hi > 0) || es.eigenvalues().minCoeff() <= 1e-12 * hi;
  if (regularized) *regularized = singular;
  if (singular) {
    const double ridge = hi > 0 ? 1e-6 * H.trace() / static_cast<double>(d) : 1e-6;
    H.diagonal().array() += std::max(ridge, 1e-300);
  }
  return H.ldlt().solve(g);
}

Hallucination hallucinate(const PointDistributionModel& pdm, const OcclusionLabels& labels,
                          std::span<const Eigen::Matrix2d> A, std::span<const Eigen::Vector2d> b) {
  if (labels.visible.size() != pdm.landmark_count()) throw DimensionError("one label per landmark is required");
  if (labels.visible_count() < 3) throw InsufficientDataError("hallucination needs at least three visible landmarks");
  Hallucination h;
  h.q = solve_deformation(pdm.basis, A, b, labels.visible, &h.regularized);
  for (Eigen::Index k = 0; k < h.q.size(); ++k) {
    const double bound = 3.0 * std::sqrt(pdm.eigenvalues(k));
    if (std::abs(h.q(k)) > bound) {
      h.q(k) = std::clamp(h.q(k), -bound, bound);
      h.clamped = true;
    }
  }
  h.shape = deform(pdm, h.q);
  return h;
}

// ---------------------------------------------------------------------------
// Mode fitting

void landmark_errors(const DensePdm& model, const Shape& model_shape, const SimilarityTransform& transform,
                     const CandidateSet& candidates, std::vector<double>& errors, std::vector<int>& which) {
  const auto groups = model.groups_for(model_shape);
  const MismatchEvaluator eval(groups, model.base.landmark_covariance);
  std::vector<ElementMatch> sel;
  eval.evaluate(transform, candidates, sel, errors);
  which.resize(sel.size());
  for (std::size_t i = 0; i < sel.size(); ++i) which[i] = sel[i].candidate;
}

namespace {

struct QuadraticTerms {
  std::vector<Eigen::Matrix2d> A;
  std::vector<Eigen::Vector2d> b;
  std::vector<Point> element_offset;  // chosen dense element minus representative
};

// Model-frame quadratic terms of the chosen candidates. The image quadratic
// (x - mu)^T A (x - mu) pulls back through x = sR p + t to s^2 R^T A R.
QuadraticTerms model_terms(const DensePdm& model, const Shape& model_shape, const SimilarityTransform& T,
                           const CandidateSet& candidates, const std::vector<int>& chosen,
                           const std::vector<std::uint8_t>& visible) {
  const auto n = model.base.landmark_count();
  QuadraticTerms q;
  q.A.assign(n, Eigen::Matrix2d::Zero());
  q.b.assign(n, Eigen::Vector2d::Zero());
  q.element_offset.assign(n, Point::Zero());
  const auto groups = model.groups_for(model_shape);
  const SimilarityTransform inv = T.inverse();
  const Eigen::Matrix2d R = T.rotation();
  for (std::size_t i = 0; i < n; ++i) {
    if (!visible[i] || chosen[i] < 0) continue;
    const Candidate& c = candidates.landmarks[i][static_cast<std::size_t>(chosen[i])];
    const Point y = inv.apply(c.mean);
    const Eigen::Matrix2d Ai = T.scale * T.scale * R.transpose() * c.quadratic.A * R;
    const Eigen::Matrix2d Minv = model.base.landmark_covariance[i].inverse();
    double best = kInfiniteMismatch;
    Point offset = Point::Zero();
    for (const auto& p : groups[i].elements) {
      const double e = (y - p).dot(Minv * (y - p));
      if (e < best) {
        best = e;
        offset = p - model_shape[i];
      }
    }
    q.element_offset[i] = offset;
    q.A[i] = 0.5 * (Ai + Ai.transpose());
    q.b[i] = q.A[i] * (y - offset - model.base.mean_shape[i]);
  }
  return q;
}

// Gauss-Newton on (s cos, s sin, t, q) of the image-frame quadratic energy of the
// chosen candidates, q clamped to +-3 sqrt(lambda) after every step.
void joint_refine(const PointDistributionModel& pdm, const CandidateSet& candidates, const std::vector<int>& chosen,
                  const std::vector<std::uint8_t>& visible, const std::vector<Point>& offset, SimilarityTransform& T,
                  Eigen::VectorXd& q) {
  const auto n = pdm.landmark_count();
  const auto d = static_cast<Eigen::Index>(pdm.dimension());
  const Eigen::Index P = 4 + d;
  double a = T.scale * std::cos(T.angle), b = T.scale * std::sin(T.angle);
  Point t = T.translation;
  const auto energy = [&](double ea, double eb, const Point& et, const Eigen::VectorXd& eq) {
    Eigen::Matrix2d M;
    M << ea, -eb, eb, ea;
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!visible[i] || chosen[i] < 0) continue;
      const Candidate& c = candidates.landmarks[i][static_cast<std::size_t>(chosen[i])];
      const Point p = pdm.mean_shape[i] + pdm.basis_rows(i) * eq + offset[i];
      const Point r = M * p + et - c.mean;
      e += r.dot(c.quadratic.A * r);
    }
    return e;
  };
  double current = energy(a, b, t, q);
  for (int it = 0; it < 20; ++it) {
    Eigen::Matrix2d M;
    M << a, -b, b, a;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(P, P);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(P);
    Eigen::MatrixXd J(2, P);
    for (std::size_t i = 0; i < n; ++i) {
      if (!visible[i] || chosen[i] < 0) continue;
      const Candidate& c = candidates.landmarks[i][static_cast<std::size_t>(chosen[i])];
      const auto Phi = pdm.basis_rows(i);
      const Point p = pdm.mean_shape[i] + Phi * q + offset[i];
      const Point r = M * p + t - c.mean;
      J.col(0) = p;
      J.col(1) = Point(-p.y(), p.x());
      J.col(2) = Point(1, 0);
      J.col(3) = Point(0, 1);
      J.rightCols(d) = M * Phi;
      const Eigen::Matrix2d A = 0.5 * (c.quadratic.A + c.quadratic.A.transpose());
      H.noalias() += J.transpose() * A * J;
      g.noalias() += J.transpose() * (A * r);
    }
    const double ridge = 1e-9 * std::max(H.trace(), 1e-300) / static_cast<double>(P);
    H.diagonal().array() += ridge;
    const Eigen::VectorXd step = H.ldlt().solve(-g);
    if (!step.allFinite()) break;
    double na = a + step(0), nb = b + step(1);
    Point nt = t + step.segment<2>(2);
    Eigen::VectorXd nq = q + step.tail(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      const double bound = 3.0 * std::sqrt(pdm.eigenvalues(k));
      nq(k) = std::clamp(nq(k), -bound, bound);
    }
    const double e = energy(na, nb, nt, nq);
    if (!(e <= current)) break;
    const bool converged = current - e <= 1e-14 * std::max(current, 1.0);
    a = na;
    b = nb;
    t = nt;
    q = nq;
    current = e;
    if (converged) break;
  }
  T.scale = std::hypot(a, b);
  T.angle = std::atan2(b, a);
  T.translation = t;
}

}  // namespace

ModeFitResult fit_mode(const DensePdm& model, const ExemplarSet& exemplars, const CandidateSet& candidates,
                       const FitConfig& config, int mode_index) {
  const auto n = model.base.landmark_count();
  if (candidates.landmark_count() != n) throw DimensionError("candidate set does not match the model");
  ModeFitResult r;
  r.mode = model.base.mode;
  r.mode_index = mode_index;
  r.labels.visible.assign(n, 0);
  r.matched_candidate.assign(n, -1);
  r.landmark_error.assign(n, kInfiniteMismatch);
  try {
    HypothesisSampler sampler(candidates, config.strategy, mode_seed(config.seed, mode_index));
    const MismatchEvaluator eval(model.mean_groups, model.base.landmark_covariance);
    const Shape& mean = model.base.mean_shape;
    std::vector<double> scratch;
    Hypothesis h;
    for (int it = 0; it < config.max_iterations; ++it) {
      auto next = sampler.next();
      if (!next) break;
      h.landmarks = next->landmarks;
      h.candidates = next->candidates;
      ++r.hypotheses;
      const auto la = static_cast<std::size_t>(h.landmarks[0]), lb = static_cast<std::size_t>(h.landmarks[1]);
      const Point& ya = candidates.landmarks[la][static_cast<std::size_t>(h.candidates[0])].mean;
      const Point& yb = candidates.landmarks[lb][static_cast<std::size_t>(h.candidates[1])].mean;
      bool usable = true;
      try {
        h.transform = estimate_similarity(mean[la], mean[lb], ya, yb);
      } catch (const SingularConfigurationError&) {
        usable = false;
      }
      if (usable) {
        eval.evaluate(h.transform, candidates, h.selection, scratch);
        h.mismatch = eval.degree(scratch);
      } else {
        h.transform = SimilarityTransform::identity();
        h.selection.assign(n, ElementMatch{});
        h.mismatch = kInfiniteMismatch;
      }
      if (config.observer) config.observer(it, h);
      if (h.mismatch < r.best.mismatch) r.best = h;
      if (r.best.mismatch < config.early_exit) break;
    }
    r.mismatch = r.best.mismatch;
    if (!std::isfinite(r.best.mismatch)) throw UnalignableError("no hypothesis explains half of the landmarks");

    const auto provisional = select_inliers(r.best.selection, config.min_inliers);
    std::vector<int> provisional_candidates;
    for (int i : provisional)
      provisional_candidates.push_back(r.best.selection[static_cast<std::size_t>(i)].candidate);
    const auto filtered = exemplar_filter(provisional, provisional_candidates, exemplars, model, candidates);

    // refine similarity and deformation together, starting from the best hypothesis;
    // the closing step is the closed-form deformation under the final similarity
    struct Fit {
      SimilarityTransform T;
      Hallucination hal;
      std::vector<double> errors;
      std::vector<int> which;
      int inliers = 0;
      double inlier_error = 0.0;
    };
    const auto fit_labels = [&](const OcclusionLabels& labels, const std::vector<int>& chosen,
                                SimilarityTransform T, Eigen::VectorXd q) {
      Fit f;
      Shape current = deform(model.base, q);
      for (int round = 0; round <= config.hallucination_rounds; ++round) {
        const auto terms = model_terms(model, current, T, candidates, chosen, labels.visible);
        if (round == config.hallucination_rounds) {
          f.hal = hallucinate(model.base, labels, terms.A, terms.b);
          break;
        }
        joint_refine(model.base, candidates, chosen, labels.visible, terms.element_offset, T, q);
        current = deform(model.base, q);
      }
      f.T = T;
      landmark_errors(model, f.hal.shape, T, candidates, f.errors, f.which);
      double sum = 0.0;
      for (double e : f.errors)
        if (e <= config.inlier_threshold) {
          sum += e;
          ++f.inliers;
        }
      f.inlier_error = f.inliers > 0 ? std::max(sum / f.inliers, 1e-9) : 0.0;
      return f;
    };

    Fit fit = fit_labels(filtered.labels, filtered.candidate, r.best.transform,
                         Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.base.dimension())));
    // re-estimate from the tau-inliers while that gains inliers
    for (int round = 0; round < config.reestimation_rounds && fit.inliers >= config.min_inliers; ++round) {
      OcclusionLabels labels;
      labels.visible.assign(n, 0);
      std::vector<int> chosen(n, -1);
      for (std::size_t i = 0; i < n; ++i)
        if (fit.errors[i] <= config.inlier_threshold) {
          labels.visible[i] = 1;
          chosen[i] = fit.which[i];
        }
      Fit next = fit_labels(labels, chosen, fit.T, fit.hal.q);
      const bool better = next.inliers > fit.inliers ||
                          (next.inliers == fit.inliers && next.inlier_error < fit.inlier_error);
      if (!better) break;
      fit = std::move(next);
    }

    r.transform = fit.T;
    r.q = fit.hal.q;
    r.model_shape = fit.hal.shape;
    r.shape = fit.T.apply(fit.hal.shape);
    r.landmark_error = fit.errors;
    r.inliers = fit.inliers;
    r.inlier_error = fit.inlier_error;
    for (std::size_t i = 0; i < n; ++i)
      if (fit.errors[i] <= config.inlier_threshold) {
        r.labels.visible[i] = 1;
        r.matched_candidate[i] = fit.which[i];
      }
    r.residual_mismatch = median_mismatch(r.landmark_error);
    if (r.inliers < config.min_inliers) {
      r.status = FitStatus::failed;
      r.message = "only " + std::to_string(r.inliers) + " inliers";
    } else {
      r.status = FitStatus::ok;
      if (filtered.fell_back) r.message = filtered.warning;
    }
  } catch (const UnalignableError& e) {
    r.status = FitStatus::failed;
    r.message = e.what();
  } catch (const InsufficientDataError& e) {
    r.status = FitStatus::failed;
    r.message = e.what();
  }
  return r;
}

ModeFitResult fit_mode(const ModeModel& mode, const CandidateSet& candidates, const FitConfig& config,
                       int mode_index) {
  auto r = fit_mode(mode.shape, mode.exemplars, candidates, config, mode_index);
  r.mode = mode.id;
  return r;
}

// ---------------------------------------------------------------------------
// Mode selection

ModeSelection select_mode(std::span<const ModeFitResult> results) {
  ModeSelection sel;
  int max_pose = -1;
  for (const auto& r : results) max_pose = std::max(max_pose, r.mode.pose);
  sel.pose_scores.assign(static_cast<std::size_t>(max_pose + 1), 0.0);
  bool any = false;
  for (const auto& r : results) {
    if (r.status != FitStatus::ok) continue;
    any = true;
    sel.pose_scores[static_cast<std::size_t>(r.mode.pose)] += r.inliers / std::max(r.inlier_error, 1e-9);
  }
  if (!any) throw UnalignableError("every mode failed");

  int n0 = -1;
  for (const auto& r : results)
    if (r.status == FitStatus::ok) {
      const double s = sel.pose_scores[static_cast<std::size_t>(r.mode.pose)];
      if (n0 < 0 || s > sel.pose_scores[static_cast<std::size_t>(n0)] ||
          (s == sel.pose_scores[static_cast<std::size_t>(n0)] && r.mode.pose < n0))
        n0 = r.mode.pose;
    }

  for (int k = 0; k < static_cast<int>(results.size()); ++k) {
    const auto& r = results[static_cast<std::size_t>(k)];
    if (r.status == FitStatus::ok) sel.ranking.push_back(k);
  }
  std::stable_sort(sel.ranking.begin(), sel.ranking.end(), [&](int a, int b) {
    const auto& ra = results[static_cast<std::size_t>(a)];
    const auto& rb = results[static_cast<std::size_t>(b)];
    const double sa = sel.pose_scores[static_cast<std::size_t>(ra.mode.pose)];
    const double sb = sel.pose_scores[static_cast<std::size_t>(rb.mode.pose)];
    if (sa != sb) return sa > sb;
    if (ra.mode.pose != rb.mode.pose) return ra.mode.pose < rb.mode.pose;
    return ra.inliers > rb.inliers;
  });
  sel.chosen = sel.ranking.front();
  return sel;
}

// ---------------------------------------------------------------------------
// Refinement

namespace {

double inlier_mean_error(const DensePdm& model, const Shape& model_shape, const SimilarityTransform& T,
                         const CandidateSet& candidates, const std::vector<std::uint8_t>& visible) {
  std::vector<double> errors;
  std::vector<int> which;
  landmark_errors(model, model_shape, T, candidates, errors, which);
  double sum = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (visible[i] && std::isfinite(errors[i])) {
      sum += errors[i];
      ++count;
    }
  return count > 0 ? sum / count : 0.0;
}

// Highest score along p + t * dir for |t| <= half, parabolic sub-sample peak.
bool tangent_peak(const LandmarkScore& score, int landmark, const Point& p, const Point& dir, double half,
                  double step, double threshold, Point& peak) {
  const int m = std::max(1, static_cast<int>(std::floor(half / step)));
  std::vector<double> s(static_cast<std::size_t>(2 * m + 1));
  int best = -1;
  for (int k = -m; k <= m; ++k) {
    const double v = score(landmark, p + (k * step) * dir);
    s[static_cast<std::size_t>(k + m)] = v;
    if (best < 0 || v > s[static_cast<std::size_t>(best)]) best = k + m;
  }
  if (!(s[static_cast<std::size_t>(best)] > threshold)) return false;
  double offset = 0.0;
  if (best > 0 && best < 2 * m) {
    const double l = s[static_cast<std::size_t>(best - 1)], c = s[static_cast<std::size_t>(best)],
                 r = s[static_cast<std::size_t>(best + 1)];
    const double den = l - 2 * c + r;
    if (den < 0) offset = std::clamp(0.5 * (l - r) / den, -0.5, 0.5);
  }
  peak = p + ((best - m + offset) * step) * dir;
  return true;
}

}  // namespace

AlignmentResult refine(const ModeFitResult& selected, const DensePdm& model, const CandidateSet& candidates,
                       const RefineContext& context, const FitConfig& config) {
  const auto& pdm = model.base;
  const auto n = pdm.landmark_count();
  AlignmentResult out;
  out.status = AlignmentStatus::ok;
  out.mode = selected.mode;
  out.mode_index = selected.mode_index;
  out.mismatch = selected.mismatch;

  const SimilarityTransform& T = selected.transform;
  const SimilarityTransform inv = T.inverse();
  const Shape& xh = selected.model_shape;
  const Shape image = T.apply(xh);

  // tangent-line peaks for contour landmarks
  std::vector<std::uint8_t> peak_found(n, 0);
  std::vector<Point> peak(n, Point::Zero());
  if (context.score) {
    for (const auto& contour : pdm.contours) {
      for (std::size_t k = 0; k < contour.size(); ++k) {
        const auto i = static_cast<std::size_t>(contour[k]);
        if (pdm.kinds[i] != LandmarkKind::contour) continue;
        const Point a = k > 0 ? image[static_cast<std::size_t>(contour[k - 1])] : image[i];
        const Point b = k + 1 < contour.size() ? image[static_cast<std::size_t>(contour[k + 1])] : image[i];
        Point dir = b - a;
        if (dir.norm() < 1e-12) continue;
        dir.normalize();
        const double threshold = i < context.thresholds.size() ? context.thresholds[i] : 0.0;
        Point p;
        if (tangent_peak(context.score, static_cast<int>(i), image[i], dir, config.refine_search * context.step,
                         context.step, threshold, p)) {
          peak_found[i] = 1;
          peak[i] = inv.apply(p);
        }
      }
    }
  }

  // weighted system; the common scale keeps the point-like quadratic terms
  // commensurate with the unit weights of the other blocks
  const auto terms = model_terms(model, xh, T, candidates, selected.matched_candidate, selected.labels.visible);
  double kappa = 0.0;
  int kcount = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (selected.labels.visible[i] && selected.matched_candidate[i] >= 0) {
      kappa += terms.A[i].trace() / 2;
      ++kcount;
    }
  kappa = kcount > 0 && kappa > 0 ? kappa / kcount : 1.0;

  std::vector<Eigen::Matrix2d> A(n);
  std::vector<Eigen::Vector2d> b(n);
  std::vector<std::uint8_t> all(n, 1);
  OcclusionLabels used;
  used.visible.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool visible = selected.labels.visible[i] && selected.matched_candidate[i] >= 0;
    const bool contour = pdm.kinds[i] == LandmarkKind::contour;
    if (!contour && visible) {
      A[i] = terms.A[i] / kappa;
      b[i] = terms.b[i] / kappa;
      used.visible[i] = 1;
    } else if (contour && peak_found[i]) {
      const Eigen::Matrix2d W = visible ? Eigen::Matrix2d(terms.A[i] / (terms.A[i].trace() / 2))
                                        : Eigen::Matrix2d::Identity();
      A[i] = W;
      b[i] = W * (peak[i] - pdm.mean_shape[i]);
      used.visible[i] = 1;
    } else {
      A[i] = Eigen::Matrix2d::Identity();
      b[i] = xh[i] - pdm.mean_shape[i];
    }
  }
  bool regularized = false;
  Eigen::VectorXd q = solve_deformation(pdm.basis, A, b, all, &regularized);
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    const double bound = 3.0 * std::sqrt(pdm.eigenvalues(k));
    q(k) = std::clamp(q(k), -bound, bound);
  }
  Shape refined = deform(pdm, q);

  const double before = inlier_mean_error(model, xh, T, candidates, selected.labels.visible);
  const double after = inlier_mean_error(model, refined, T, candidates, selected.labels.visible);
  const Shape& final_model = after <= before + 1e-12 ? refined : xh;
  out.refined = after <= before + 1e-12;
  out.shape = T.apply(final_model);

  std::vector<double> errors;
  std::vector<int> which;
  landmark_errors(model, final_model, T, candidates, errors, which);
  out.labels.visible.assign(n, 0);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (errors[i] <= config.inlier_threshold) {
      out.labels.visible[i] = 1;
      sum += errors[i];
      ++out.inliers;
    }
  out.inlier_error = out.inliers > 0 ? std::max(sum / out.inliers, 1e-9) : 0.0;
  return out;
}

}  // namespace erclm
