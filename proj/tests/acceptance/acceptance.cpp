// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit when any fails.

#include "erclm/appearance.hpp"
#include "erclm/error.hpp"
#include "erclm/evaluation.hpp"
#include "erclm/fitter.hpp"
#include "erclm/pipeline_io.hpp"
#include "erclm/synthetic.hpp"
#include "erclm/training.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

using namespace erclm;

namespace {

int failures = 0;

void report(bool pass, const std::string& name, const std::string& detail, double seconds) {
  std::printf("%s %s: %s (%.1f s)\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

void run(const std::string& name, const std::function<bool(std::string&)>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool pass = false;
  try {
    pass = check(detail);
  } catch (const std::exception& e) {
    detail = std::string("exception: ") + e.what();
  }
  report(pass, name, detail, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Independent census code on integer pixels: bit j set when 9 * pixel j exceeds the block sum.
int oracle_census(const std::array<double, 9>& b) {
  const long sum = std::accumulate(b.begin(), b.end(), 0L, [](long a, double v) { return a + std::lround(v); });
  int code = 0;
  for (int j = 0; j < 9; ++j)
    if (9 * std::lround(b[static_cast<std::size_t>(j)]) > sum) code |= 1 << j;
  return code;
}

// Shape-only ensemble over the synthetic shape corpus.
ModelEnsemble shape_ensemble(const SyntheticFaceOptions& faces, int per_mode, std::uint64_t seed) {
  ModelEnsemble e;
  const auto corpus = synthetic_shape_corpus(per_mode, faces, seed);
  for (std::size_t k = 0; k < corpus.size(); k += static_cast<std::size_t>(per_mode)) {
    std::vector<Shape> shapes;
    for (std::size_t j = k; j < k + static_cast<std::size_t>(per_mode); ++j) shapes.push_back(corpus[j].shape);
    ShapeTrainingOptions o;
    o.seed = k;
    e.modes.push_back(train_mode_shape(shapes, corpus[k].mode, LandmarkScheme::frontal68(), o));
  }
  return e;
}

bool descriptor_lengths(std::string& detail) {
  std::mt19937_64 rng(1);
  std::vector<double> patch(kPatchSize * kPatchSize);
  for (auto& v : patch) v = std::uniform_real_distribution<double>(0, 255)(rng);
  const auto h = hierarchical_descriptor(patch, kPatchSize).codes.size();
  const auto s = hierarchical_descriptor(patch, kPatchSize, DescriptorLayout::single_level()).codes.size();
  detail = fmt("hierarchical %zu, single-level %zu", h, s);
  return h == 1796 && s == 1089 && DescriptorLayout::hierarchical().length == 1796;
}

bool census_properties(std::string& detail) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> px(0, 255), shift(-300, 300), exponent(-3, 3);
  int violations = 0;
  for (int k = 0; k < 100000; ++k) {
    std::array<double, 9> b, t, flat;
    for (std::size_t j = 0; j < 9; ++j) b[j] = px(rng);
    const double gain = std::ldexp(1.0, exponent(rng)), bias = shift(rng);
    for (std::size_t j = 0; j < 9; ++j) t[j] = gain * b[j] + bias;
    flat.fill(b[0]);
    const int code = census_code(b);
    violations += code < 0 || code > 510;
    violations += code != oracle_census(b);
    violations += census_code(t) != code;
    violations += census_code(flat) != 0;
  }
  detail = fmt("%d violations over 1e5 blocks", violations);
  return violations == 0;
}

bool hallucination_oracle(std::string& detail) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  double worst = 0.0;
  int singular = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(3, 40)(rng);
    const int visible_count = std::uniform_int_distribution<int>(3, n)(rng);
    const int d = std::uniform_int_distribution<int>(1, std::min(12, 2 * visible_count))(rng);
    Eigen::MatrixXd raw(2 * n, d);
    for (Eigen::Index r = 0; r < raw.rows(); ++r)
      for (Eigen::Index c = 0; c < d; ++c) raw(r, c) = g(rng);
    const Eigen::MatrixXd basis = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ() *
                                  Eigen::MatrixXd::Identity(2 * n, d);
    std::vector<Eigen::Matrix2d> A(static_cast<std::size_t>(n));
    std::vector<Eigen::Vector2d> b(static_cast<std::size_t>(n));
    for (auto& a : A) {
      Eigen::Matrix2d m;
      m << g(rng), g(rng), g(rng), g(rng);
      a = m * m.transpose() + 0.05 * Eigen::Matrix2d::Identity();
    }
    for (auto& v : b) v = Eigen::Vector2d(g(rng), g(rng));
    std::vector<std::uint8_t> visible(static_cast<std::size_t>(n), 0);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < visible_count; ++k) visible[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = 1;

    bool regularized = false;
    const Eigen::VectorXd q = solve_deformation(basis, A, b, visible, &regularized);
    singular += regularized;

    // oracle: whitened stacked least squares, |L^T Phi q - L^-1 b|^2 with A = L L^T
    Eigen::MatrixXd M(2 * visible_count, d);
    Eigen::VectorXd y(2 * visible_count);
    int row = 0;
    for (int i = 0; i < n; ++i) {
      if (!visible[static_cast<std::size_t>(i)]) continue;
      const Eigen::Matrix2d L = Eigen::LLT<Eigen::Matrix2d>(A[static_cast<std::size_t>(i)]).matrixL();
      M.middleRows(row, 2) = L.transpose() * basis.middleRows(2 * i, 2);
      y.segment(row, 2) = L.triangularView<Eigen::Lower>().solve(b[static_cast<std::size_t>(i)]);
      row += 2;
    }
    const Eigen::VectorXd oracle = M.colPivHouseholderQr().solve(y);
    worst = std::max(worst, (q - oracle).norm() / std::max(1.0, oracle.norm()));
  }
  detail = fmt("worst relative difference %.2e over 1000 instances (%d regularized)", worst, singular);
  return worst < 1e-8;
}

bool robust_recovery(std::string& detail, const ModelEnsemble& shapes) {
  const auto trial = [&](double occlusion, int& ok, double& mean_error) {
    SynthInstanceOptions opts;
    opts.occlusion_rate = occlusion;
    opts.clutter = 3;
    opts.clutter_min = 20.0;
    opts.noise = 0.5;
    ok = 0;
    mean_error = 0.0;
    int fitted = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto inst = synth_generate(shapes, opts, 1000 + seed);
      const auto& mode = shapes.modes[static_cast<std::size_t>(inst.mode_index)];
      FitConfig cfg;
      cfg.max_iterations = 2000;
      cfg.seed = seed;
      const auto r = fit_mode(mode, inst.candidates, cfg, inst.mode_index);
      if (r.status != FitStatus::ok) continue;
      const double err = mahalanobis_shape_error(mode.shape.base, inst.transform, r.shape, inst.shape);
      mean_error += err;
      ++fitted;
      ok += err < 1.5;
    }
    mean_error = fitted ? mean_error / fitted : INFINITY;
  };
  int ok40 = 0, ok0 = 0;
  double e40 = 0, e0 = 0;
  trial(0.4, ok40, e40);
  trial(0.0, ok0, e0);
  detail = fmt("40%% occlusion: %d/100 recovered, mean error %.3f; 0%% occlusion: %d/100, mean error %.3f", ok40, e40,
               ok0, e0);
  return ok40 >= 99 && e40 < 1.5 && ok0 == 100 && e0 < 1.5;
}

bool median_breakdown(std::string& detail) {
  // every subset of floor(N/2) - 1 = 4 of N = 10 errors corrupted by +1e6
  std::mt19937_64 rng(5);
  std::exponential_distribution<double> ex(1.0);
  const int n = 10, corrupt = n / 2 - 1;
  long subsets = 0, violations = 0, outside_bracket = 0;
  double worst_ratio = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> clean(n);
    for (auto& e : clean) e = ex(rng);
    const double d = median_mismatch(clean);
    std::vector<double> sorted = clean;
    std::sort(sorted.begin(), sorted.end());
    double gap = 0.0;
    for (int k = 1; k < n; ++k) gap = std::max(gap, sorted[static_cast<std::size_t>(k)] - sorted[static_cast<std::size_t>(k - 1)]);
    for (int mask = 0; mask < (1 << n); ++mask) {
      if (__builtin_popcount(static_cast<unsigned>(mask)) != corrupt) continue;
      std::vector<double> e = clean;
      for (int k = 0; k < n; ++k)
        if (mask & (1 << k)) e[static_cast<std::size_t>(k)] += 1e6;
      const double dc = median_mismatch(e);
      ++subsets;
      if (!(std::abs(dc - d) < gap)) ++violations;
      worst_ratio = std::max(worst_ratio, std::abs(dc - d) / gap);
      // what does hold: the corrupted median stays between clean order statistics m and m + corrupt
      const auto m = static_cast<std::size_t>((n - 1) / 2);
      if (dc < sorted[m] || dc > sorted[m + static_cast<std::size_t>(corrupt)]) ++outside_bracket;
    }
  }
  detail = fmt("%ld/%ld corruptions moved d by >= the largest clean gap (worst %.2fx); bounded by clean order "
               "statistics in %ld/%ld",
               violations, subsets, worst_ratio, subsets - outside_bracket, subsets);
  return violations == 0;
}

bool mode_selection(std::string& detail) {
  std::mt19937_64 rng(6);
  int mismatches = 0;
  for (int t = 0; t < 10000; ++t) {
    const int poses = std::uniform_int_distribution<int>(1, 5)(rng);
    std::vector<ModeFitResult> results;
    for (int p = 0; p < poses; ++p) {
      const int expressions = std::uniform_int_distribution<int>(1, 3)(rng);
      for (int m = 0; m < expressions; ++m) {
        ModeFitResult r;
        r.mode = {p, m};
        r.status = std::uniform_int_distribution<int>(0, 9)(rng) == 0 ? FitStatus::failed : FitStatus::ok;
        // small integer ranges force ties
        r.inliers = std::uniform_int_distribution<int>(3, 8)(rng);
        r.inlier_error = 0.5 * std::uniform_int_distribution<int>(1, 4)(rng);
        results.push_back(r);
      }
    }
    bool any = false;
    for (const auto& r : results) any = any || r.status == FitStatus::ok;
    if (!any) {
      try {
        select_mode(results);
        ++mismatches;
      } catch (const UnalignableError&) {
      }
      continue;
    }
    // brute force: enumerate every (pose, expression) and keep the lexicographic best
    std::vector<double> score(static_cast<std::size_t>(poses), 0.0);
    for (const auto& r : results)
      if (r.status == FitStatus::ok) score[static_cast<std::size_t>(r.mode.pose)] += r.inliers / r.inlier_error;
    int best = -1;
    for (int k = 0; k < static_cast<int>(results.size()); ++k) {
      const auto& r = results[static_cast<std::size_t>(k)];
      if (r.status != FitStatus::ok) continue;
      if (best < 0) {
        best = k;
        continue;
      }
      const auto& b = results[static_cast<std::size_t>(best)];
      const double sr = score[static_cast<std::size_t>(r.mode.pose)], sb = score[static_cast<std::size_t>(b.mode.pose)];
      if (sr > sb || (sr == sb && r.mode.pose < b.mode.pose) ||
          (r.mode.pose == b.mode.pose && r.inliers > b.inliers))
        best = k;
    }
    mismatches += select_mode(results).chosen != best;
  }
  detail = fmt("%d/10000 tables disagree with brute force", mismatches);
  return mismatches == 0;
}

bool compression_direction(std::string& detail) {
  SyntheticFaceOptions faces;
  faces.mouth_sigma = 0.08;  // variation concentrated in the mouth
  const auto corpus = synthetic_shape_corpus(60, faces, 7);
  const auto scheme = LandmarkScheme::frontal68();
  int subset_ok = 0, dense_ok = 0, modes = 0;
  std::string dims;
  for (std::size_t k = 0; k < corpus.size(); k += 60) {
    std::vector<Shape> shapes;
    for (std::size_t j = k; j < k + 60; ++j) shapes.push_back(corpus[j].shape);
    const auto dim = [&](bool subset, bool dense) {
      ShapeTrainingOptions o;
      o.subset_anchors = subset;
      o.slide_contours = dense;
      return train_mode_shape(shapes, corpus[k].mode, scheme, o).shape.base.dimension();
    };
    const auto all_dense = dim(false, true), subset_dense = dim(true, true), subset_sparse = dim(true, false);
    subset_ok += subset_dense <= all_dense;
    dense_ok += subset_dense <= subset_sparse;
    ++modes;
    dims += fmt(" %zu/%zu/%zu", all_dense, subset_dense, subset_sparse);
  }
  detail = fmt("subset <= all-point in %d/%d modes, dense <= sparse in %d/%d; d (all, subset, sparse):", subset_ok,
               modes, dense_ok, modes) +
           dims;
  return subset_ok == modes && dense_ok == modes;
}

bool ablation_direction(std::string& detail, const ModelEnsemble& shapes) {
  AblationOptions clean;
  clean.instances = 60;
  clean.budgets = {2000};
  clean.instance.occlusion_rate = 0.2;
  clean.instance.clutter = 3;
  clean.instance.noise = 0.5;
  clean.fit.refine = false;
  clean.seed = 11;
  const auto rows = run_ablation(shapes, clean);
  const double u = rows[0].median_hypotheses, c = rows[1].median_hypotheses, g = rows[2].median_hypotheses;

  AblationOptions adversarial = clean;
  adversarial.instance.adversarial = true;
  adversarial.strategies = {SamplingKind::uniform, SamplingKind::greedy};
  const auto adv = run_ablation(shapes, adversarial);
  detail = fmt("median hypotheses to success greedy %.1f, confidence %.1f, uniform %.1f; adversarial FR uniform %.3f, "
               "greedy %.3f",
               g, c, u, adv[0].failure_rate, adv[1].failure_rate);
  return g <= c && c <= u && adv[0].failure_rate <= adv[1].failure_rate;
}

struct PlantedFaces {
  ModelEnsemble ensemble;
  std::vector<RenderedFace> faces;
};

PlantedFaces planted_faces() {
  PlantedFaces out;
  SyntheticFaceOptions fo;
  RenderOptions ro;
  std::mt19937_64 rng(11);
  std::vector<TrainingSample> samples;
  for (int p = 0; p < fo.pose_count(); ++p)
    for (int x = 0; x < fo.expressions; ++x)
      for (int k = 0; k < 20; ++k) {
        auto f = render_synthetic_face({p, x}, fo, ro, rng);
        samples.push_back({std::move(f.image), f.shape, {p, x}});
      }
  EnsembleTrainingOptions eo;
  eo.detectors.boost.rounds = 30;
  eo.detectors.sharing = DetectorSharing::all;
  eo.detectors.harvest.negatives_per_positive = 10;
  out.ensemble = train_ensemble(samples, LandmarkScheme::frontal68(), eo);
  std::mt19937_64 trng(99);
  for (int k = 0; k < 100; ++k)
    out.faces.push_back(render_synthetic_face({k % 5, (k / 5) % 2}, fo, ro, trng));
  return out;
}

bool determinism(std::string& detail, const PlantedFaces& planted) {
  int differing = 0, compared = 0;
  for (int k = 0; k < 6; ++k) {
    const auto& f = planted.faces[static_cast<std::size_t>(k)];
    std::string reference;
    for (int threads : {1, 3, 1, 4}) {
      FitConfig cfg;
      cfg.seed = 42 + static_cast<std::uint64_t>(k);
      cfg.threads = threads;
      const auto line = to_json_line(make_result_record("face", 0, align_face(f.image, f.face, planted.ensemble, cfg)));
      if (reference.empty()) reference = line;
      else differing += line != reference;
      ++compared;
    }
  }
  detail = fmt("%d of %d repeated alignments differ from the first (threads 1, 3, 1, 4)", differing, compared - 6);
  return differing == 0;
}

bool visible_precision(std::string& detail, const ModelEnsemble& shapes) {
  SynthInstanceOptions opts;
  opts.occlusion_rate = 0.4;
  opts.clutter = 3;
  opts.noise = 0.5;
  long labeled = 0, correct = 0, unlabeled = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = synth_generate(shapes, opts, 5000 + seed);
    const auto& mode = shapes.modes[static_cast<std::size_t>(inst.mode_index)];
    FitConfig cfg;
    cfg.seed = seed;
    const auto r = fit_mode(mode, inst.candidates, cfg, inst.mode_index);
    if (r.labels.visible.size() != inst.visible.size()) ++unlabeled;
    for (std::size_t i = 0; i < r.labels.visible.size(); ++i)
      if (r.labels.visible[i]) {
        ++labeled;
        correct += inst.visible[i] && r.matched_candidate[i] == inst.true_candidate[i];
      }
  }
  const double precision = labeled ? static_cast<double>(correct) / labeled : 0.0;
  detail = fmt("precision %.4f over %ld labeled-visible landmarks, %ld results without full labels", precision, labeled,
               unlabeled);
  return precision >= 0.9 && unlabeled == 0;
}

bool end_to_end(std::string& detail, const PlantedFaces& planted) {
  int correct = 0, aligned = 0;
  double sum = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto& f = planted.faces[static_cast<std::size_t>(k)];
    FitConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(k);
    const auto r = align_face(f.image, f.face, planted.ensemble, cfg);
    if (r.status != AlignmentStatus::ok) continue;
    ++aligned;
    correct += r.mode == f.mode;
    sum += mnle(r.shape, f.shape);
  }
  const double mean = aligned ? sum / aligned : INFINITY;
  detail = fmt("planted mode recovered in %d/100 faces, %d aligned, MNLE %.4f", correct, aligned, mean);
  return correct >= 95 && mean < 0.03;
}

}  // namespace

int main() {
  run("descriptor-dimensions", descriptor_lengths);
  run("census-properties", census_properties);
  run("hallucination-oracle", hallucination_oracle);

  const auto shapes = shape_ensemble({}, 40, 7);
  run("robust-recovery", [&](std::string& d) { return robust_recovery(d, shapes); });
  run("median-breakdown", median_breakdown);
  run("mode-selection", mode_selection);
  run("subset-gpa-compression", compression_direction);
  run("sampling-ablation-direction", [&](std::string& d) { return ablation_direction(d, shapes); });

  const auto t0 = std::chrono::steady_clock::now();
  const auto planted = planted_faces();
  std::printf("# trained planted ensemble in %.1f s\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  run("determinism", [&](std::string& d) { return determinism(d, planted); });
  run("occlusion-visible-precision", [&](std::string& d) { return visible_precision(d, shapes); });
  run("end-to-end-planted", [&](std::string& d) { return end_to_end(d, planted); });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
