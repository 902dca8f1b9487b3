#include "erclm/appearance.hpp"
#include "erclm/error.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <random>

using namespace erclm;

namespace {

// Reference census code: straight from the comparison rule.
int reference_code(const std::array<double, 9>& b) {
  double mean = 0.0;
  for (double v : b) mean += v / 9.0;
  int code = 0;
  for (int j = 0; j < 9; ++j)
    if (b[static_cast<std::size_t>(j)] > mean + 1e-12 * std::abs(mean)) code |= 1 << j;
  return code;
}

// Area-average an n x n raster down to m x m with exact fractional overlaps.
std::vector<double> area_resample(const std::vector<double>& src, int n, int m) {
  std::vector<double> out(static_cast<std::size_t>(m) * m, 0.0);
  const double f = static_cast<double>(n) / m;
  for (int oy = 0; oy < m; ++oy)
    for (int ox = 0; ox < m; ++ox) {
      double acc = 0.0;
      for (int y = 0; y < n; ++y) {
        const double wy = std::max(0.0, std::min(y + 1.0, (oy + 1) * f) - std::max<double>(y, oy * f));
        if (wy <= 0) continue;
        for (int x = 0; x < n; ++x) {
          const double wx = std::max(0.0, std::min(x + 1.0, (ox + 1) * f) - std::max<double>(x, ox * f));
          acc += wx * wy * src[static_cast<std::size_t>(y) * n + x];
        }
      }
      out[static_cast<std::size_t>(oy) * m + ox] = acc / (f * f);
    }
  return out;
}

std::vector<int> reference_descriptor(const std::vector<double>& patch, const std::vector<int>& levels) {
  std::vector<int> codes;
  for (int m : levels) {
    const auto img = area_resample(patch, 35, m);
    for (int r = 1; r + 1 < m; ++r)
      for (int c = 1; c + 1 < m; ++c) {
        std::array<double, 9> b{};
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            b[static_cast<std::size_t>(3 * i + j)] = img[static_cast<std::size_t>(r - 1 + i) * m + (c - 1 + j)];
        codes.push_back(reference_code(b));
      }
  }
  return codes;
}

std::vector<double> random_patch(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 255.0);
  std::vector<double> p(35 * 35);
  for (auto& v : p) v = u(rng);
  return p;
}

CensusDescriptor constant_descriptor(int length, std::uint16_t code) {
  CensusDescriptor d;
  d.codes.assign(static_cast<std::size_t>(length), code);
  return d;
}

}  // namespace

TEST(Census, FixedExamples) {
  std::array<double, 9> uniform;
  uniform.fill(100.0);
  EXPECT_EQ(census_code(uniform), 0);
  std::array<double, 9> centre;
  centre.fill(100.0);
  centre[4] = 200.0;
  EXPECT_EQ(census_code(centre), 16);
}

TEST(Census, RangeAndIntensityInvariance) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> px(0, 255);
  std::uniform_real_distribution<double> gain(0.1, 10.0), bias(-500.0, 500.0);
  int violations = 0;
  for (int k = 0; k < 100000; ++k) {
    std::array<double, 9> b, t;
    for (std::size_t j = 0; j < 9; ++j) b[j] = px(rng);
    // power-of-two gains keep the transformed block exact
    const double a = std::ldexp(1.0, static_cast<int>(std::floor(std::log2(gain(rng)))));
    const double c = std::round(bias(rng));
    for (std::size_t j = 0; j < 9; ++j) t[j] = a * b[j] + c;
    const int code = census_code(b);
    violations += code < 0 || code > 510;
    violations += census_code(t) != code;
    violations += code != reference_code(b);
  }
  EXPECT_EQ(violations, 0);
}

TEST(Descriptor, Lengths) {
  EXPECT_EQ(DescriptorLayout::hierarchical().length, kHierarchicalLength);
  EXPECT_EQ(DescriptorLayout::hierarchical().length, 1796);
  EXPECT_EQ(DescriptorLayout::single_level().length, 1089);
  EXPECT_EQ(DescriptorLayout::from_levels({5}).length, 9);
  std::mt19937_64 rng(2);
  const auto patch = random_patch(rng);
  EXPECT_EQ(hierarchical_descriptor(patch, 35).codes.size(), 1796u);
  EXPECT_EQ(hierarchical_descriptor(patch, 35, DescriptorLayout::single_level()).codes.size(), 1089u);
}

TEST(Descriptor, LayoutRoundTrip) {
  const auto l = DescriptorLayout::hierarchical();
  for (int k = 0; k < l.length; ++k) {
    const auto e = l.locate(k);
    EXPECT_EQ(l.index(e.level, e.row, e.col), k);
  }
  EXPECT_THROW(l.locate(l.length), DimensionError);
}

TEST(Descriptor, MatchesAreaAverageOracle) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 5; ++k) {
    const auto patch = random_patch(rng);
    const auto d = hierarchical_descriptor(patch, 35);
    const auto ref = reference_descriptor(patch, {35, 25, 15, 5});
    ASSERT_EQ(d.codes.size(), ref.size());
    int mismatches = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_LT(d.codes[i], 511);
      mismatches += d.codes[i] != ref[i];
    }
    EXPECT_EQ(mismatches, 0);
  }
}

TEST(Descriptor, WrongPatchSize) {
  std::vector<double> small(34 * 34, 1.0);
  EXPECT_THROW(hierarchical_descriptor(small, 34), DimensionError);
  EXPECT_THROW(hierarchical_descriptor(small, 35), DimensionError);
}

TEST(Adaboost, SeparableByOneCodeInOneRound) {
  const auto layout = DescriptorLayout::from_levels({5});
  std::mt19937_64 rng(4);
  // a tiny alphabet keeps every other position inseparable
  std::uniform_int_distribution<int> code(0, 3);
  std::vector<CensusDescriptor> pos, neg;
  for (int k = 0; k < 30; ++k) {
    auto p = constant_descriptor(layout.length, 0), n = p;
    for (auto& c : p.codes) c = static_cast<std::uint16_t>(code(rng));
    for (auto& c : n.codes) c = static_cast<std::uint16_t>(code(rng));
    p.codes[6] = 16;
    n.codes[6] = 17;
    pos.push_back(p);
    neg.push_back(n);
  }
  AdaboostReport rep;
  AdaboostOptions opts;
  opts.rounds = 10;
  const auto det = train_detector(pos, neg, 0, 0, opts, &rep, layout);
  ASSERT_FALSE(rep.training_error.empty());
  EXPECT_EQ(rep.training_error.front(), 0.0);
  EXPECT_EQ(det.weak.front().position, 6);
  for (const auto& p : pos) EXPECT_GT(det.score(p), 0.0);
  for (const auto& n : neg) EXPECT_LT(det.score(n), 0.0);
}

TEST(Adaboost, IdenticalClassesStopEarly) {
  const auto layout = DescriptorLayout::from_levels({5});
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> code(0, 510);
  std::vector<CensusDescriptor> samples;
  for (int k = 0; k < 20; ++k) {
    auto d = constant_descriptor(layout.length, 0);
    for (auto& c : d.codes) c = static_cast<std::uint16_t>(code(rng));
    samples.push_back(d);
  }
  AdaboostReport rep;
  const auto det = train_detector(samples, samples, 0, 0, {}, &rep, layout);
  EXPECT_TRUE(rep.early_stopped);
  EXPECT_FALSE(rep.warning.empty());
  ASSERT_FALSE(rep.training_error.empty());
  EXPECT_NEAR(rep.training_error.back(), 0.5, 1e-12);
  for (const auto& s : samples) EXPECT_TRUE(std::isfinite(det.score(s)));
}

TEST(Adaboost, WeightsNormalizedAndErrorNonincreasing) {
  const auto layout = DescriptorLayout::from_levels({15, 5});
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> code(0, 510);
  std::bernoulli_distribution flip(0.3);
  std::vector<CensusDescriptor> pos, neg;
  for (int k = 0; k < 80; ++k) {
    auto p = constant_descriptor(layout.length, 0), n = p;
    for (auto& c : p.codes) c = static_cast<std::uint16_t>(code(rng));
    for (auto& c : n.codes) c = static_cast<std::uint16_t>(code(rng));
    // weakly informative positions, each wrong 30% of the time
    for (int j = 0; j < 10; ++j) {
      p.codes[static_cast<std::size_t>(j)] = flip(rng) ? 1 : 2;
      n.codes[static_cast<std::size_t>(j)] = flip(rng) ? 2 : 1;
    }
    pos.push_back(p);
    neg.push_back(n);
  }
  AdaboostReport rep;
  AdaboostOptions opts;
  opts.rounds = 25;
  train_detector(pos, neg, 0, 0, opts, &rep, layout);
  for (double s : rep.weight_sums) EXPECT_NEAR(s, 1.0, 1e-12);
  for (std::size_t k = 1; k < rep.training_error.size(); ++k)
    EXPECT_LE(rep.training_error[k], rep.training_error[k - 1] + 0.05);
  EXPECT_LT(rep.training_error.back(), rep.training_error.front());
}

TEST(Adaboost, RejectsEmptyClasses) {
  std::vector<CensusDescriptor> none, one{constant_descriptor(1796, 0)};
  EXPECT_THROW(train_detector(none, one, 0, 0), InsufficientDataError);
  EXPECT_THROW(train_detector(one, none, 0, 0), InsufficientDataError);
}

TEST(ResponseMap, ZeroLutsGiveZeroMap) {
  GrayImage img(80, 80, 90);
  const IntegralImage integral(img, 40);
  AdaboostDetector det;
  det.weak.resize(3);
  for (auto& w : det.weak) w.alpha = 1.0;
  const auto map = response_map(integral, det, {20, 20, 10, 10}, 1.0);
  EXPECT_EQ(map.cols, 11);
  EXPECT_EQ(map.rows, 11);
  for (double s : map.scores) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(map.position(3, 2), Point(23, 22));
}

TEST(ResponseMap, MatchesDirectMultiscaleScores) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> px(0, 255);
  GrayImage img(120, 100);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(px(rng));
  const IntegralImage integral(img, 40);
  const auto layout = DescriptorLayout::hierarchical();
  const CensusSampler sampler(integral, layout);
  std::vector<CensusDescriptor> pos{sampler.describe(Point(60, 50), 35)}, neg{sampler.describe(Point(70, 50), 35)};
  AdaboostOptions opts;
  opts.rounds = 15;
  const auto det = train_detector(pos, neg, 0, 0, opts, nullptr, layout);
  const double step = 0.8;
  const auto map = response_map(integral, det, {50, 40, 12, 10}, step);
  ASSERT_GT(map.cols, 0);
  double worst = 0.0;
  for (int r = 0; r < map.rows; ++r)
    for (int c = 0; c < map.cols; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      for (double s : {0.9, 1.0, 1.1}) best = std::max(best, det.score_at(integral, map.position(c, r), 35 * step * s));
      worst = std::max(worst, std::abs(best - map.at(c, r)));
    }
  EXPECT_LT(worst, 1e-12);
  EXPECT_EQ(map.step, step);
}

TEST(ResponseMap, ScaleOnlyRescalesAScaleFreePattern) {
  // a centred disc: every scale peaks at the disc centre
  GrayImage img(100, 100, 40);
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x)
      if ((Point(x + 0.5, y + 0.5) - Point(50, 50)).norm() < 9) img.at(x, y) = 220;
  const IntegralImage integral(img, 40);
  const auto layout = DescriptorLayout::hierarchical();
  const CensusSampler sampler(integral, layout);
  std::vector<CensusDescriptor> pos{sampler.describe(Point(50, 50), 35)}, neg;
  for (int d = 2; d <= 10; d += 2)
    for (const Point& o : {Point(d, 0), Point(-d, 0), Point(0, d), Point(0, -d)})
      neg.push_back(sampler.describe(Point(50, 50) + o, 35));
  const auto det = train_detector(pos, neg, 0, 0, {}, nullptr, layout);
  const auto argmax_at = [&](double scale) {
    ResponseMapOptions o;
    o.scales = {scale};
    const auto map = response_map(integral, det, {40, 40, 20, 20}, 1.0, o);
    int best = 0;
    for (std::size_t k = 1; k < map.scores.size(); ++k)
      if (map.scores[k] > map.scores[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
    return map.position(best % map.cols, best / map.cols);
  };
  // the disc is symmetric, so a one-cell tie is the only allowed difference
  EXPECT_LE((argmax_at(0.9) - argmax_at(1.0)).norm(), 1.0);
  EXPECT_LE((argmax_at(1.0) - Point(50, 50)).norm(), 1.0);
}

TEST(Candidates, QuadraticBowlRecoversHessian) {
  const Eigen::Matrix2d H{{0.8, 0.3}, {0.3, 0.5}};
  const Point c0(10.3, 8.7);
  ResponseMap map;
  map.cols = 21;
  map.rows = 19;
  map.scores.resize(21 * 19);
  for (int r = 0; r < map.rows; ++r)
    for (int c = 0; c < map.cols; ++c) {
      const Point d = map.position(c, r) - c0;
      map.at(c, r) = 100.0 - d.dot(H * d);
    }
  CandidateExtractionOptions opts;
  opts.threshold = 0.0;
  const auto list = extract_candidates(map, opts);
  ASSERT_EQ(list.size(), 1u);
  EXPECT_LT((list[0].quadratic.A - H).norm(), 1e-6);
  EXPECT_LT((list[0].mean - c0).norm(), 1e-6);
  EXPECT_GT(list[0].confidence, 0.0);
}

TEST(Candidates, TwoBumpsTwoCandidates) {
  const Point a(8, 9), b(30.4, 12.2);
  ResponseMap map;
  map.cols = 40;
  map.rows = 22;
  map.scores.resize(40 * 22);
  for (int r = 0; r < map.rows; ++r)
    for (int c = 0; c < map.cols; ++c) {
      const Point p = map.position(c, r);
      map.at(c, r) = std::exp(-(p - a).squaredNorm() / 8.0) + std::exp(-(p - b).squaredNorm() / 8.0);
    }
  CandidateExtractionOptions opts;
  opts.threshold = 0.2;
  const auto list = extract_candidates(map, opts);
  ASSERT_EQ(list.size(), 2u);
  const bool order = list[0].mean.x() < list[1].mean.x();
  EXPECT_LT((list[order ? 0 : 1].mean - a).norm(), 0.5);
  EXPECT_LT((list[order ? 1 : 0].mean - b).norm(), 0.5);
  for (const auto& c : list)
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(c.quadratic.A).eigenvalues().minCoeff(), -1e-10);
}

TEST(Candidates, BelowThresholdIsEmpty) {
  ResponseMap map;
  map.cols = map.rows = 10;
  map.scores.assign(100, 0.5 - 1e-9);
  CandidateExtractionOptions opts;
  opts.threshold = 0.5;
  EXPECT_TRUE(extract_candidates(map, opts).empty());
}

TEST(Candidates, PlantedModeCount) {
  // modes separated by more than 3 bandwidths
  for (int modes = 1; modes <= 4; ++modes) {
    ResponseMap map;
    map.cols = 25 * modes;
    map.rows = 20;
    map.scores.assign(static_cast<std::size_t>(map.cols) * map.rows, 0.0);
    for (int r = 0; r < map.rows; ++r)
      for (int c = 0; c < map.cols; ++c)
        for (int k = 0; k < modes; ++k)
          map.at(c, r) += std::exp(-(map.position(c, r) - Point(12 + 25 * k, 10)).squaredNorm() / 6.0);
    CandidateExtractionOptions opts;
    opts.threshold = 0.1;
    EXPECT_EQ(extract_candidates(map, opts).size(), static_cast<std::size_t>(modes));
  }
}

TEST(Candidates, FitQuadraticIsPsd) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  for (int k = 0; k < 100; ++k) {
    std::vector<Point> pos;
    std::vector<double> v;
    for (int j = 0; j < 12; ++j) {
      pos.emplace_back(g(rng), g(rng));
      v.push_back(g(rng));
    }
    const auto q = fit_quadratic(pos, v, Point::Zero());
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(q.A).eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(Merge, Rules) {
  const auto c = [](double x, double conf) { return gaussian_candidate(Point(x, 0), Eigen::Matrix2d::Identity(), conf); };
  const std::vector<CandidateList> single{{c(0, 1), c(5, 2)}};
  const auto same = merge_expression_candidates(single);
  ASSERT_EQ(same.size(), 2u);
  EXPECT_EQ(same[0].mean, Point(0, 0));
  EXPECT_EQ(same[1].mean, Point(5, 0));

  const std::vector<CandidateList> dup{{c(0, 1)}, {c(0.5, 3)}};
  const auto merged = merge_expression_candidates(dup);
  ASSERT_EQ(merged.size(), 1u);
  EXPECT_EQ(merged[0].confidence, 3.0);

  const std::vector<CandidateList> apart{{c(0, 1)}, {c(10, 1)}};
  EXPECT_EQ(merge_expression_candidates(apart).size(), 2u);
}

TEST(Gaussian, QuadraticMatchesCovariance) {
  const Eigen::Matrix2d S{{2.0, 0.5}, {0.5, 1.0}};
  const auto c = gaussian_candidate(Point(3, 4), S, 0.7);
  EXPECT_LT((c.quadratic.A * S - Eigen::Matrix2d::Identity()).norm(), 1e-12);
  EXPECT_LT((c.quadratic.A.inverse() * c.quadratic.b - Point(3, 4)).norm(), 1e-12);
}
