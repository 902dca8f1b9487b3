#include "erclm/error.hpp"
#include "erclm/fitter.hpp"
#include "erclm/synthetic.hpp"

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

using namespace erclm;
using erclm::testing::random_basis;
using erclm::testing::random_spd;
using erclm::testing::shape_ensemble;

namespace {

// Weighted least squares through stacked Cholesky factors: minimizes
// sum_i |L_i^T Phi_i q - L_i^-1 b_i|^2 where A_i = L_i L_i^T.
Eigen::VectorXd stacked_oracle(const Eigen::MatrixXd& basis, const std::vector<Eigen::Matrix2d>& A,
                               const std::vector<Eigen::Vector2d>& b, const std::vector<std::uint8_t>& visible) {
  int rows = 0;
  for (auto v : visible) rows += v ? 2 : 0;
  Eigen::MatrixXd M(rows, basis.cols());
  Eigen::VectorXd y(rows);
  int r = 0;
  for (std::size_t i = 0; i < visible.size(); ++i) {
    if (!visible[i]) continue;
    const Eigen::LLT<Eigen::Matrix2d> llt(A[i]);
    const Eigen::Matrix2d L = llt.matrixL();
    M.middleRows(r, 2) = L.transpose() * basis.middleRows(static_cast<Eigen::Index>(2 * i), 2);
    y.segment(r, 2) = L.triangularView<Eigen::Lower>().solve(b[i]);
    r += 2;
  }
  return M.colPivHouseholderQr().solve(y);
}

CandidateSet exact_candidates(const PointDistributionModel& pdm, const SimilarityTransform& T) {
  CandidateSet set;
  for (std::size_t i = 0; i < pdm.landmark_count(); ++i)
    set.landmarks.push_back({gaussian_candidate(T.apply(pdm.mean_shape[i]), Eigen::Matrix2d::Identity(), 1.0)});
  return set;
}

ModeFitResult planted_result(ModeId mode, int inliers, double error) {
  ModeFitResult r;
  r.mode = mode;
  r.status = FitStatus::ok;
  r.inliers = inliers;
  r.inlier_error = error;
  return r;
}

const SimilarityTransform kFace{150.0, 0.2, Point(320, 240)};

}  // namespace

TEST(Median, LowerMedian) {
  const std::vector<double> odd{100, 1, 2}, even{3, 1}, inf{1, kInfiniteMismatch, kInfiniteMismatch};
  EXPECT_EQ(median_mismatch(odd), 2.0);
  EXPECT_EQ(median_mismatch(even), 1.0);
  EXPECT_EQ(median_mismatch(inf), kInfiniteMismatch);
  EXPECT_EQ(median_mismatch({}), kInfiniteMismatch);
}

TEST(Mismatch, MatchesBruteForce) {
  const auto& mode = shape_ensemble().modes[3];
  const auto& model = mode.shape;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 8.0);
  std::uniform_int_distribution<int> count(0, 3);
  for (int trial = 0; trial < 20; ++trial) {
    CandidateSet set;
    for (std::size_t i = 0; i < model.base.landmark_count(); ++i) {
      CandidateList list;
      const int k = count(rng);
      for (int j = 0; j < k; ++j)
        list.push_back(gaussian_candidate(kFace.apply(model.base.mean_shape[i]) + Point(g(rng), g(rng)),
                                          Eigen::Matrix2d::Identity(), 1.0));
      set.landmarks.push_back(list);
    }
    const auto r = mismatch_degree(model, kFace, set);
    std::vector<double> errors;
    const auto inv = kFace.inverse();
    for (std::size_t i = 0; i < set.landmarks.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      const Eigen::Matrix2d M = model.base.landmark_covariance[i].inverse();
      for (const auto& c : set.landmarks[i])
        for (const auto& p : model.mean_groups[i].elements) {
          const Point d = inv.apply(c.mean) - p;
          best = std::min(best, std::sqrt(d.dot(M * d)));
        }
      errors.push_back(best);
      if (std::isfinite(best)) EXPECT_NEAR(r.selection[i].error, best, 1e-9 * (1 + best));
      else EXPECT_FALSE(std::isfinite(r.selection[i].error));
    }
    std::sort(errors.begin(), errors.end());
    const double expected = errors[(errors.size() - 1) / 2];
    if (std::isfinite(expected)) EXPECT_NEAR(r.degree, expected, 1e-9 * (1 + expected));
    else EXPECT_FALSE(std::isfinite(r.degree));
  }
}

TEST(Mismatch, MostlyUndetectedIsInfinite) {
  const auto& model = shape_ensemble().modes[0].shape;
  auto set = exact_candidates(model.base, kFace);
  EXPECT_LT(mismatch_degree(model, kFace, set).degree, 1e-9);
  for (std::size_t i = 0; i < set.landmarks.size() / 2 + 1; ++i) set.landmarks[i].clear();
  EXPECT_EQ(mismatch_degree(model, kFace, set).degree, kInfiniteMismatch);
}

TEST(SelectInliers, TiesGoToLowerIndex) {
  std::vector<ElementMatch> sel(6);
  for (std::size_t i = 0; i < sel.size(); ++i) sel[i].error = 1.0;
  sel[5].error = 0.5;
  EXPECT_EQ(select_inliers(sel), (std::vector<int>{0, 1, 5}));
  sel[0].error = kInfiniteMismatch;
  sel[1].error = kInfiniteMismatch;
  sel[2].error = kInfiniteMismatch;
  EXPECT_EQ(select_inliers(sel), (std::vector<int>{3, 4, 5}));
  sel[3].error = kInfiniteMismatch;
  EXPECT_THROW(select_inliers(sel), UnalignableError);
}

TEST(Hallucination, MatchesStackedLeastSquares) {
  std::mt19937_64 rng(22);
  std::uniform_int_distribution<int> landmarks(3, 20), dims(1, 6);
  std::normal_distribution<double> g;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = static_cast<std::size_t>(landmarks(rng));
    const int d = std::min(dims(rng), static_cast<int>(2 * n) - 1);
    const auto basis = random_basis(n, d, rng);
    std::vector<Eigen::Matrix2d> A;
    std::vector<Eigen::Vector2d> b;
    std::vector<std::uint8_t> visible(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      A.push_back(random_spd(rng));
      b.emplace_back(g(rng), g(rng));
    }
    // at least enough visible rows for a full-rank system
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto shown = std::uniform_int_distribution<std::size_t>(std::max<std::size_t>(3, (d + 1) / 2), n)(rng);
    for (std::size_t k = 0; k < shown; ++k) visible[order[k]] = 1;
    bool regularized = true;
    const auto q = solve_deformation(basis, A, b, visible, &regularized);
    const auto oracle = stacked_oracle(basis, A, b, visible);
    if (regularized) continue;
    worst = std::max(worst, (q - oracle).norm() / std::max(1.0, oracle.norm()));
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Hallucination, SingularSystemIsRegularized) {
  std::mt19937_64 rng(23);
  const auto basis = random_basis(5, 8, rng);
  std::vector<Eigen::Matrix2d> A(5, Eigen::Matrix2d::Identity());
  std::vector<Eigen::Vector2d> b(5, Eigen::Vector2d(1, 2));
  const std::vector<std::uint8_t> visible{1, 1, 1, 0, 0};
  bool regularized = false;
  const auto q = solve_deformation(basis, A, b, visible, &regularized);
  EXPECT_TRUE(regularized);
  EXPECT_TRUE(q.allFinite());
  EXPECT_THROW(solve_deformation(basis, A, std::vector<Eigen::Vector2d>(4), visible), DimensionError);
}

TEST(Hallucination, ClampsAndNeedsThreeVisible) {
  const auto& pdm = shape_ensemble().modes[0].shape.base;
  const auto n = pdm.landmark_count();
  std::vector<Eigen::Matrix2d> A(n, Eigen::Matrix2d::Identity());
  std::vector<Eigen::Vector2d> b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = 1e3 * pdm.basis_rows(i).col(0);
  OcclusionLabels labels;
  labels.visible.assign(n, 1);
  const auto h = hallucinate(pdm, labels, A, b);
  EXPECT_TRUE(h.clamped);
  for (Eigen::Index k = 0; k < h.q.size(); ++k)
    EXPECT_LE(std::abs(h.q(k)), 3.0 * std::sqrt(pdm.eigenvalues(k)) + 1e-12);
  labels.visible.assign(n, 0);
  labels.visible[0] = labels.visible[1] = 1;
  EXPECT_THROW(hallucinate(pdm, labels, A, b), InsufficientDataError);
}

TEST(Sampler, UniformLandmarkFrequencies) {
  CandidateSet set;
  for (int i = 0; i < 10; ++i)
    set.landmarks.push_back({gaussian_candidate(Point(i, 0), Eigen::Matrix2d::Identity(), 1.0 + i)});
  set.landmarks.push_back({});
  HypothesisSampler sampler(set, SamplingKind::uniform, 5);
  const int draws = 100000;
  std::vector<int> first(11, 0);
  for (int k = 0; k < draws; ++k) {
    const auto h = *sampler.next();
    ASSERT_NE(h.landmarks[0], h.landmarks[1]);
    ++first[static_cast<std::size_t>(h.landmarks[0])];
  }
  EXPECT_EQ(first[10], 0);
  const double sigma = std::sqrt(0.1 * 0.9 / draws);
  for (int i = 0; i < 10; ++i) EXPECT_NEAR(first[static_cast<std::size_t>(i)] / double(draws), 0.1, 3 * sigma);
}

TEST(Sampler, ConfidenceProportionalToBestCandidate) {
  CandidateSet set;
  set.landmarks.push_back({gaussian_candidate(Point(0, 0), Eigen::Matrix2d::Identity(), 9.0)});
  set.landmarks.push_back({gaussian_candidate(Point(1, 0), Eigen::Matrix2d::Identity(), 1.0),
                           gaussian_candidate(Point(2, 0), Eigen::Matrix2d::Identity(), 0.5)});
  set.landmarks.push_back({gaussian_candidate(Point(3, 0), Eigen::Matrix2d::Identity(), 5.0)});
  HypothesisSampler sampler(set, SamplingKind::confidence, 6);
  const auto& p = sampler.landmark_probabilities();
  EXPECT_NEAR(p[0] / p[1], 9.0, 1e-12);
  int a = 0, b = 0;
  for (int k = 0; k < 60000; ++k) {
    const int l = sampler.next()->landmarks[0];
    a += l == 0;
    b += l == 1;
  }
  EXPECT_NEAR(static_cast<double>(a) / b, 9.0, 1.0);
}

TEST(Sampler, GreedyEnumeratesRankedPairs) {
  CandidateSet set;
  for (double conf : {1.0, 3.0, 2.0})
    set.landmarks.push_back({gaussian_candidate(Point(conf, 0), Eigen::Matrix2d::Identity(), 0.1),
                             gaussian_candidate(Point(conf, 1), Eigen::Matrix2d::Identity(), conf)});
  HypothesisSampler sampler(set, SamplingKind::greedy, 0);
  const std::vector<std::array<int, 2>> expected{{1, 2}, {1, 0}, {2, 0}};
  for (const auto& pair : expected) {
    const auto h = sampler.next();
    ASSERT_TRUE(h.has_value());
    EXPECT_EQ(h->landmarks, pair);
    EXPECT_EQ(h->candidates, (std::array<int, 2>{1, 1}));
  }
  EXPECT_FALSE(sampler.next().has_value());
}

TEST(Sampler, NeedsTwoDetectableLandmarks) {
  CandidateSet set;
  set.landmarks = {{gaussian_candidate(Point(0, 0), Eigen::Matrix2d::Identity(), 1.0)}, {}, {}};
  EXPECT_THROW(HypothesisSampler(set, SamplingKind::uniform, 0), UnalignableError);
  EXPECT_EQ(parse_sampling_kind("greedy"), SamplingKind::greedy);
  EXPECT_THROW(parse_sampling_kind("random"), Error);
}

TEST(ExemplarFilter, RecoversPlantedVisibility) {
  const auto& mode = shape_ensemble().modes[2];
  SynthInstanceOptions opts;
  opts.occlusion_rate = 0.3;
  opts.clutter = 2;
  opts.noise = 0.5;
  int added = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = synth_generate(mode, 2, opts, seed);
    std::vector<int> provisional, chosen;
    for (std::size_t i = 0; i < inst.visible.size() && provisional.size() < 20; ++i)
      if (inst.visible[i]) {
        provisional.push_back(static_cast<int>(i));
        chosen.push_back(inst.true_candidate[i]);
      }
    const auto f = exemplar_filter(provisional, chosen, mode.exemplars, mode.shape, inst.candidates);
    EXPECT_FALSE(f.fell_back);
    for (std::size_t i = 0; i < inst.visible.size(); ++i) {
      if (f.labels.visible[i]) EXPECT_TRUE(inst.visible[i]) << "seed " << seed << " landmark " << i;
      if (f.labels.visible[i]) EXPECT_EQ(f.candidate[i], inst.true_candidate[i]);
    }
    added += f.labels.visible_count() - static_cast<int>(provisional.size());
  }
  // visible landmarks outside the provisional set come back
  EXPECT_GT(added, 10 * 10);
}

TEST(ExemplarFilter, FallsBackToProvisional) {
  const auto& mode = shape_ensemble().modes[0];
  const auto inst = synth_generate(mode, 0, {}, 3);
  ExemplarSet tight = mode.exemplars;
  tight.radius = 1e-12;
  const std::vector<int> provisional{0, 10, 20, 30};
  const std::vector<int> chosen{0, 0, 0, 0};
  const auto f = exemplar_filter(provisional, chosen, tight, mode.shape, inst.candidates);
  EXPECT_TRUE(f.fell_back);
  EXPECT_FALSE(f.warning.empty());
  EXPECT_EQ(f.labels.visible_count(), 4);
  for (int i : provisional) EXPECT_EQ(f.candidate[static_cast<std::size_t>(i)], 0);
}

TEST(FitMode, NoiselessMeanShape) {
  const auto& mode = shape_ensemble().modes[4];
  const auto set = exact_candidates(mode.shape.base, kFace);
  FitConfig cfg;
  cfg.seed = 1;
  const auto r = fit_mode(mode, set, cfg, 4);
  ASSERT_EQ(r.status, FitStatus::ok) << r.message;
  EXPECT_LT(r.mismatch, 1e-6);
  EXPECT_LE(r.hypotheses, 10);
  EXPECT_LT(r.residual_mismatch, 1e-6);
  EXPECT_EQ(r.labels.visible_count(), static_cast<int>(set.landmark_count()));
  for (std::size_t i = 0; i < set.landmark_count(); ++i)
    EXPECT_LT((r.shape[i] - kFace.apply(mode.shape.base.mean_shape[i])).norm(), 1e-6);
}

TEST(FitMode, RecoversOccludedCluttered) {
  const auto& mode = shape_ensemble().modes[1];
  SynthInstanceOptions opts;
  opts.occlusion_rate = 0.3;
  opts.clutter = 2;
  FitConfig cfg;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = synth_generate(mode, 1, opts, seed);
    cfg.seed = seed;
    const auto r = fit_mode(mode, inst.candidates, cfg, 1);
    ASSERT_EQ(r.status, FitStatus::ok) << r.message;
    EXPECT_LT(mahalanobis_shape_error(mode.shape.base, inst.transform, r.shape, inst.shape), 1.5);
  }
}

TEST(FitMode, AllFalseCandidatesAreNotConfident) {
  const auto& mode = shape_ensemble().modes[0];
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(0.0, 2000.0);
  const auto n = mode.landmark_count();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CandidateSet set;
    for (std::size_t i = 0; i < n; ++i)
      set.landmarks.push_back({gaussian_candidate(Point(u(rng), u(rng)), Eigen::Matrix2d::Identity(), 1.0),
                               gaussian_candidate(Point(u(rng), u(rng)), Eigen::Matrix2d::Identity(), 1.0)});
    FitConfig cfg;
    cfg.seed = seed;
    cfg.max_iterations = 300;
    const auto r = fit_mode(mode, set, cfg, 0);
    EXPECT_TRUE(r.status == FitStatus::failed || r.inliers < static_cast<int>(n) / 4) << r.inliers;
  }
}

TEST(FitMode, ObserverSeesEveryHypothesis) {
  const auto& mode = shape_ensemble().modes[0];
  SynthInstanceOptions opts;
  opts.clutter = 3;
  const auto inst = synth_generate(mode, 0, opts, 9);
  FitConfig cfg;
  cfg.early_exit = 0.0;
  cfg.max_iterations = 50;
  int seen = 0;
  double best = kInfiniteMismatch;
  cfg.observer = [&](int, const Hypothesis& h) {
    ++seen;
    best = std::min(best, h.mismatch);
  };
  const auto r = fit_mode(mode, inst.candidates, cfg, 0);
  EXPECT_EQ(seen, 50);
  EXPECT_EQ(r.hypotheses, 50);
  EXPECT_EQ(r.mismatch, best);
}

TEST(FitMode, SameSeedSameResult) {
  const auto& mode = shape_ensemble().modes[5];
  SynthInstanceOptions opts;
  opts.occlusion_rate = 0.2;
  opts.clutter = 3;
  const auto inst = synth_generate(mode, 5, opts, 4);
  FitConfig cfg;
  cfg.seed = 77;
  const auto a = fit_mode(mode, inst.candidates, cfg, 5);
  const auto b = fit_mode(mode, inst.candidates, cfg, 5);
  EXPECT_EQ(a.shape, b.shape);
  EXPECT_EQ(a.hypotheses, b.hypotheses);
  EXPECT_EQ(a.labels.visible, b.labels.visible);
}

TEST(SelectMode, WorkedExample) {
  std::vector<ModeFitResult> r{planted_result({0, 0}, 30, 2.0), planted_result({0, 1}, 28, 2.0),
                               planted_result({1, 0}, 31, 4.0), planted_result({1, 1}, 10, 4.0)};
  auto sel = select_mode(r);
  EXPECT_EQ(sel.chosen, 0);
  EXPECT_DOUBLE_EQ(sel.pose_scores[0], 29.0);
  EXPECT_DOUBLE_EQ(sel.pose_scores[1], 10.25);
  EXPECT_EQ(sel.ranking, (std::vector<int>{0, 1, 2, 3}));
  for (auto& m : r) m.inlier_error *= 2;
  EXPECT_EQ(select_mode(r).chosen, 0);
}

TEST(SelectMode, TiesAndFailures) {
  std::vector<ModeFitResult> r{planted_result({0, 0}, 20, 1.0), planted_result({0, 1}, 20, 1.0)};
  EXPECT_EQ(select_mode(r).chosen, 0);
  r[0].status = FitStatus::failed;
  EXPECT_EQ(select_mode(r).chosen, 1);
  EXPECT_EQ(select_mode(r).ranking.size(), 1u);
  r[1].status = FitStatus::failed;
  EXPECT_THROW(select_mode(r), UnalignableError);
}
