#pragma once

#include "erclm/appearance.hpp"
#include "erclm/ensemble.hpp"
#include "erclm/geometry.hpp"
#include "erclm/image.hpp"
#include "erclm/shape_model.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace erclm {

inline constexpr double kInfiniteMismatch = std::numeric_limits<double>::infinity();

enum class SamplingKind { uniform, confidence, greedy };

const char* to_string(SamplingKind kind) noexcept;
/// Parses "uniform", "confidence" or "greedy".
SamplingKind parse_sampling_kind(const std::string& name);

/// Dense element and candidate that explain one landmark under a hypothesis.
struct ElementMatch {
  int element = -1;    ///< slot in the landmark's dense group
  int candidate = -1;  ///< index into the landmark's candidate list, -1 when none
  double error = kInfiniteMismatch;
};

struct Hypothesis {
  std::array<int, 2> landmarks{-1, -1};
  std::array<int, 2> candidates{-1, -1};
  SimilarityTransform transform;
  double mismatch = kInfiniteMismatch;
  std::vector<ElementMatch> selection;  ///< per landmark
};

/// Draws (landmark, candidate) pairs. Stochastic kinds own one generator; greedy
/// enumerates landmark pairs in confidence order and runs out eventually.
class HypothesisSampler {
public:
  HypothesisSampler(const CandidateSet& candidates, SamplingKind kind, std::uint64_t seed);

  /// Next skeleton (landmarks and candidates only); nullopt once greedy is exhausted.
  std::optional<Hypothesis> next();

  /// Probability of picking landmark i first (stochastic kinds).
  const std::vector<double>& landmark_probabilities() const noexcept { return landmark_p_; }

private:
  int draw_candidate(int landmark);

  const CandidateSet* candidates_;
  SamplingKind kind_;
  std::mt19937_64 rng_;
  std::vector<int> detectable_;
  std::vector<double> landmark_p_;
  std::vector<std::vector<double>> candidate_p_;
  std::vector<int> ranked_;  // greedy order
  int greedy_i_ = 0, greedy_j_ = 1;
};

/// One-shot convenience around HypothesisSampler. Throws UnalignableError when fewer
/// than two landmarks have candidates.
Hypothesis sample_hypothesis(const CandidateSet& candidates, SamplingKind kind, std::mt19937_64& rng);

/// Lower median (element (n-1)/2 of the sorted values); infinities count as values.
double median_mismatch(std::span<const double> errors);

struct MismatchResult {
  double degree = kInfiniteMismatch;
  std::vector<ElementMatch> selection;
};

/// Median over landmarks of the smallest Mahalanobis distance (under Delta_i, in the
/// model frame) between any dense element of the landmark and any of its candidates
/// mapped back through `transform`.
MismatchResult mismatch_degree(const DensePdm& model, const SimilarityTransform& transform,
                               const CandidateSet& candidates);

/// Same, for explicit dense groups (model frame) and covariances.
MismatchResult mismatch_degree(std::span<const DenseGroup> groups, std::span<const Eigen::Matrix2d> covariance,
                               const SimilarityTransform& transform, const CandidateSet& candidates);

/// The floor(N/2) landmarks with the smallest errors; ties go to the lower index.
/// Landmarks with infinite error are never selected. Throws UnalignableError when
/// fewer than `minimum` landmarks have a finite error.
std::vector<int> select_inliers(std::span<const ElementMatch> selection, int minimum = 3);

struct OcclusionLabels {
  std::vector<std::uint8_t> visible;  ///< o_i, one per landmark

  int visible_count() const;
};

struct ExemplarFilterResult {
  OcclusionLabels labels;
  std::vector<int> candidate;  ///< chosen candidate per landmark, -1 for occluded
  int exemplar = -1;
  /// Exemplar frame -> image.
  SimilarityTransform transform;
  double mean_error = 0.0;  ///< over the exemplar's refit set, normalized units
  bool fell_back = false;
  std::string warning;
};

/// Picks the exemplar that best explains the provisional inliers and relabels every
/// landmark by whether one of its candidates lies within the exemplar radius.
/// `provisional_candidates` gives the candidate used for each provisional inlier.
/// Contour landmarks are compared against the exemplar's dense group.
ExemplarFilterResult exemplar_filter(std::span<const int> provisional, std::span<const int> provisional_candidates,
                                     const ExemplarSet& exemplars, const DensePdm& model,
                                     const CandidateSet& candidates);

/// q = (Phi^T A Phi)^-1 Phi^T b with the blocks of invisible landmarks zeroed.
/// A singular system gets a ridge of 1e-6 * trace / d and sets `*regularized`.
Eigen::VectorXd solve_deformation(const Eigen::MatrixXd& basis, std::span<const Eigen::Matrix2d> A,
                                  std::span<const Eigen::Vector2d> b, std::span<const std::uint8_t> visible,
                                  bool* regularized = nullptr);

struct Hallucination {
  Eigen::VectorXd q;
  Shape shape;  ///< model frame, all landmarks
  bool regularized = false;
  bool clamped = false;
};

/// Deformation from the visible quadratic terms (model frame), clamped to
/// +-3 sqrt(lambda), and the full hallucinated shape. Needs at least 3 visible.
Hallucination hallucinate(const PointDistributionModel& pdm, const OcclusionLabels& labels,
                          std::span<const Eigen::Matrix2d> A, std::span<const Eigen::Vector2d> b);

using HypothesisObserver = std::function<void(int index, const Hypothesis&)>;

struct FitConfig {
  SamplingKind strategy = SamplingKind::uniform;
  int max_iterations = 2000;
  double early_exit = 0.05;
  double inlier_threshold = 3.0;  ///< tau, Mahalanobis
  int min_inliers = 3;
  int ranked_modes = 3;
  int hallucination_rounds = 3;
  int reestimation_rounds = 5;  ///< refits from the tau-inliers while they grow
  bool refine = true;
  double refine_search = 10.0;  ///< tangent search half-length, reference pixels
  std::uint64_t seed = 0;
  int threads = 1;
  HypothesisObserver observer;  ///< sees every evaluated hypothesis (single-mode use)
};

enum class FitStatus { ok, failed };

struct ModeFitResult {
  ModeId mode;
  int mode_index = -1;
  FitStatus status = FitStatus::failed;
  std::string message;
  Shape shape;        ///< image frame
  Shape model_shape;  ///< model frame, mean + Phi q
  SimilarityTransform transform;  ///< model -> image
  Eigen::VectorXd q;
  OcclusionLabels labels;
  std::vector<int> matched_candidate;  ///< per landmark, -1 when not an inlier
  std::vector<double> landmark_error;  ///< per landmark Mahalanobis, infinite without candidates
  int inliers = 0;                     ///< V
  double inlier_error = 0.0;           ///< E
  double mismatch = kInfiniteMismatch;  ///< d of the best hypothesis
  double residual_mismatch = kInfiniteMismatch;  ///< d of the fitted shape
  int hypotheses = 0;
  Hypothesis best;
};

/// Hypothesize-and-test fit of one mode to a candidate set (image frame).
ModeFitResult fit_mode(const ModeModel& mode, const CandidateSet& candidates, const FitConfig& config,
                       int mode_index = 0);

/// Same, from just a dense model and exemplars.
ModeFitResult fit_mode(const DensePdm& model, const ExemplarSet& exemplars, const CandidateSet& candidates,
                       const FitConfig& config, int mode_index = 0);

/// Seed of mode `mode_index` derived from the global seed.
std::uint64_t mode_seed(std::uint64_t seed, int mode_index);

/// Per landmark, smallest Mahalanobis distance (Delta_i, model frame) between a dense
/// element of `model_shape` and a candidate, with the candidate index.
void landmark_errors(const DensePdm& model, const Shape& model_shape, const SimilarityTransform& transform,
                     const CandidateSet& candidates, std::vector<double>& errors, std::vector<int>& which);

struct ModeSelection {
  int chosen = -1;           ///< index into the result list
  std::vector<int> ranking;  ///< successful modes, best first
  std::vector<double> pose_scores;
};

/// n0 = argmax_n sum_m V/E over successful modes, then m0 = argmax V within n0.
/// Lowest index wins ties. Throws UnalignableError if every mode failed.
ModeSelection select_mode(std::span<const ModeFitResult> results);

/// Detector score of `landmark` at an image point, used by the tangent-line search.
using LandmarkScore = std::function<double(int landmark, const Point& image_point)>;

struct RefineContext {
  LandmarkScore score;
  std::vector<double> thresholds;  ///< per landmark peak threshold
  double step = 1.0;               ///< image pixels per reference pixel
};

enum class AlignmentStatus { ok, failed };

struct AlignmentResult {
  AlignmentStatus status = AlignmentStatus::failed;
  std::string message;
  Shape shape;
  OcclusionLabels labels;
  ModeId mode;
  int mode_index = -1;
  double mismatch = kInfiniteMismatch;
  int inliers = 0;
  double inlier_error = 0.0;
  bool refined = false;
  std::vector<ModeFitResult> ranked;  ///< top-R successful modes, best first
};

/// Tangent-line peak search for contour landmarks and the final weighted solve.
/// Keeps the hallucinated shape when refinement would raise the inlier mean error.
AlignmentResult refine(const ModeFitResult& selected, const DensePdm& model, const CandidateSet& candidates,
                       const RefineContext& context, const FitConfig& config);

/// Candidates of every landmark of every mode for a face box, one response map per
/// detector over the union of the modes' search regions.
std::vector<CandidateSet> detect_candidates(const IntegralImage& integral, const Box& face,
                                            const ModelEnsemble& ensemble, double threshold_fraction = 0.35,
                                            int threads = 1);

/// Full pipeline for one face.
AlignmentResult align_face(const GrayImage& image, const Box& face, const ModelEnsemble& ensemble,
                           const FitConfig& config);

/// Builds the refinement context of a mode; empty when no image is available.
using RefineProvider = std::function<RefineContext(int mode_index)>;

/// Fit every mode on precomputed candidates (one set per mode), select and refine.
/// Without a provider the selected hallucination is reported unrefined.
AlignmentResult align_candidates(std::span<const CandidateSet> candidates, const ModelEnsemble& ensemble,
                                 const FitConfig& config, const RefineProvider& provider = {});

}  // namespace erclm
