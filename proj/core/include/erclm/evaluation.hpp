#pragma once

#include "erclm/ensemble.hpp"
#include "erclm/fitter.hpp"
#include "erclm/pipeline_io.hpp"
#include "erclm/shape_model.hpp"
#include "erclm/synthetic.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace erclm {

inline constexpr double kFailureThreshold = 0.1;

/// 68 = every landmark, 51 = without the jawline.
enum class LandmarkSubset { all, no_jaw };

LandmarkSubset parse_subset(int count);
int subset_size(LandmarkSubset subset);
std::vector<int> subset_indices(const LandmarkScheme& scheme, LandmarkSubset subset);

/// Mean Euclidean landmark error divided by the outer-eye-corner distance of the
/// ground truth. Throws when that distance is zero or the shapes differ in size.
double mnle(const Shape& predicted, const Shape& truth, LandmarkSubset subset = LandmarkSubset::all,
            const LandmarkScheme& scheme = LandmarkScheme::frontal68());

/// Fraction of errors strictly above `threshold`; infinite errors are failures.
double failure_rate(std::span<const double> errors, double threshold = kFailureThreshold);

struct CedPoint {
  double threshold = 0.0;
  double fraction = 0.0;
};

/// Fraction of errors <= each threshold.
std::vector<CedPoint> ced_curve(std::span<const double> errors, std::span<const double> thresholds);
/// 0, 0.005, ..., 0.3
std::vector<double> default_ced_thresholds();

struct EvalReport {
  LandmarkSubset subset = LandmarkSubset::all;
  std::vector<std::string> images;
  std::vector<double> errors;  ///< per face, infinite when alignment failed
  int faces = 0;
  int unaligned = 0;
  double mnle = 0.0;           ///< over aligned faces
  double failure_rate = 0.0;   ///< over all faces, unaligned ones count as failures
  std::vector<CedPoint> ced;
};

EvalReport make_report(std::vector<std::string> images, std::vector<double> errors, LandmarkSubset subset,
                       std::span<const double> thresholds);

/// Matches results to annotations by image path (several faces per image: the
/// annotation nearest to the predicted centroid).
EvalReport evaluate(std::span<const ResultRecord> results, std::span<const AnnotationRecord> truth,
                    LandmarkSubset subset, const LandmarkScheme& scheme = LandmarkScheme::frontal68());

std::string report_json(const EvalReport& report);
/// "threshold,fraction" lines with a header.
std::string ced_csv(const EvalReport& report);

struct AblationOptions {
  std::vector<SamplingKind> strategies = {SamplingKind::uniform, SamplingKind::confidence, SamplingKind::greedy};
  std::vector<int> budgets = {2000};
  int instances = 50;
  SynthInstanceOptions instance;
  FitConfig fit;  ///< strategy and max_iterations are overridden per row
  std::uint64_t seed = 0;
  int threads = 1;
};

struct AblationRow {
  SamplingKind strategy = SamplingKind::uniform;
  int budget = 0;
  int instances = 0;
  double mnle = 0.0;                 ///< over successful fits
  double failure_rate = 0.0;
  double median_hypotheses = 0.0;    ///< to the first all-true hypothesis; budget + 1 when never
  double mean_shape_error = 0.0;     ///< Mahalanobis, over successful fits
  std::vector<int> hypotheses_to_success;
};

/// Every (strategy, budget) row runs on the same seeded instances.
std::vector<AblationRow> run_ablation(const ModelEnsemble& ensemble, const AblationOptions& options);

std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace erclm
