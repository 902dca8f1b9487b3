#pragma once

#include "erclm/geometry.hpp"
#include "erclm/image.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace erclm {

inline constexpr int kPatchSize = 35;
inline constexpr int kCensusCodeCount = 511;
inline constexpr int kHierarchicalLength = 1796;
inline constexpr int kSingleLevelLength = 1089;
/// Reference face width the patch geometry is defined at.
inline constexpr double kReferenceFaceWidth = 150.0;

/// Modified census transform of a 3x3 block given row-major. Bit j is set when
/// block[j] is strictly above the block mean; the centre is bit 4.
std::uint16_t census_code(std::span<const double, 9> block);

/// Flat index <-> (level, row, col) of a concatenated census descriptor.
struct DescriptorLayout {
  std::vector<int> levels;   ///< level sizes, e.g. {35, 25, 15, 5}
  std::vector<int> offsets;  ///< first descriptor index of each level
  int length = 0;

  struct Entry {
    int level = 0;  ///< position in `levels`
    int row = 0;
    int col = 0;
  };
  std::vector<Entry> entries;  ///< locate() of every index

  static DescriptorLayout hierarchical();
  static DescriptorLayout single_level(int size = kPatchSize);
  static DescriptorLayout from_levels(std::vector<int> levels);

  Entry locate(int index) const;
  int index(int level, int row, int col) const;
};

struct CensusDescriptor {
  std::vector<std::uint16_t> codes;
};

/// Descriptor of a square patch (row-major, side `patch_size`). Each level is the
/// patch area-averaged to the level size; codes are taken at every interior pixel.
CensusDescriptor hierarchical_descriptor(std::span<const double> patch, int patch_size,
                                         const DescriptorLayout& layout = DescriptorLayout::hierarchical());

/// Census codes of a square footprint read straight from an integral image.
class CensusSampler {
public:
  CensusSampler(const IntegralImage& integral, const DescriptorLayout& layout)
      : integral_(&integral), layout_(&layout) {}

  /// Code at descriptor `index` for the footprint with top-left (x0, y0) and side `side`.
  std::uint16_t code(int index, double x0, double y0, double side) const;
  CensusDescriptor describe(const Point& center, double side) const;

private:
  const IntegralImage* integral_;
  const DescriptorLayout* layout_;
};

struct WeakClassifier {
  int position = 0;
  std::vector<double> lut = std::vector<double>(kCensusCodeCount, 0.0);
  double alpha = 0.0;
};

/// Boosted landmark detector over census codes.
struct AdaboostDetector {
  std::vector<WeakClassifier> weak;
  int landmark = 0;
  int expression_tag = 0;
  int patch_size = kPatchSize;
  double face_width = kReferenceFaceWidth;
  std::vector<int> levels = {35, 25, 15, 5};

  DescriptorLayout layout() const { return DescriptorLayout::from_levels(levels); }
  double score(const CensusDescriptor& d) const;
  /// Score of the footprint of side `side` centred on `center`.
  double score_at(const IntegralImage& integral, const Point& center, double side) const;
  /// Highest score any patch can reach.
  double max_score() const;
};

struct AdaboostOptions {
  int rounds = 100;
};

struct AdaboostReport {
  std::vector<double> training_error;   ///< strong-classifier error after each round
  std::vector<double> weighted_error;   ///< chosen weak classifier's weighted error
  std::vector<double> weight_sums;      ///< sample-weight sum after renormalization
  bool early_stopped = false;
  std::string warning;
};

/// Discrete Adaboost with one position-indexed LUT per round.
AdaboostDetector train_detector(std::span<const CensusDescriptor> positives,
                                std::span<const CensusDescriptor> negatives, int landmark, int expression_tag,
                                const AdaboostOptions& options = {}, AdaboostReport* report = nullptr,
                                const DescriptorLayout& layout = DescriptorLayout::hierarchical());

struct HarvestOptions {
  double negative_inner_radius = 5.0;   ///< reference pixels
  double negative_outer_radius = 20.0;  ///< reference pixels
  int negatives_per_positive = 3;
};

/// Samples negative descriptors uniformly in the ring around `landmark`.
/// `step` is image pixels per reference pixel.
void harvest_negatives(const IntegralImage& integral, const Point& landmark, double step,
                       const HarvestOptions& options, const DescriptorLayout& layout, std::mt19937_64& rng,
                       std::vector<CensusDescriptor>& out);

/// Detector scores on a regular grid; cell (c, r) sits at origin + step * (c, r).
struct ResponseMap {
  Point origin = Point::Zero();
  double step = 1.0;
  int cols = 0;
  int rows = 0;
  std::vector<double> scores;
  bool clipped = false;

  double at(int c, int r) const { return scores[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int c, int r) { return scores[static_cast<std::size_t>(r) * cols + c]; }
  Point position(int c, int r) const { return origin + step * Point(c, r); }
};

struct ResponseMapOptions {
  std::vector<double> scales = {0.9, 1.0, 1.1};
};

/// Max over scales of the detector score at one point; footprint side is
/// patch_size * step * scale.
double multiscale_score(const CensusSampler& sampler, const AdaboostDetector& detector, const Point& center,
                        double step, std::span<const double> scales);

/// Max over scales of the detector score on the grid covering `region`. `step`
/// is image pixels per reference pixel (face width / 150).
ResponseMap response_map(const IntegralImage& integral, const AdaboostDetector& detector, const Box& region,
                         double step, const ResponseMapOptions& options = {});

/// Convex quadratic E(origin + d) ~ d^T A d - 2 b^T d + c of the inverted score.
struct QuadraticFit {
  Eigen::Matrix2d A = Eigen::Matrix2d::Identity();
  Eigen::Vector2d b = Eigen::Vector2d::Zero();
  double c = 0.0;
  Point origin = Point::Zero();
};

struct Candidate {
  Point mean = Point::Zero();
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
  double confidence = 0.0;
  QuadraticFit quadratic;
};

using CandidateList = std::vector<Candidate>;

/// Per-landmark candidate lists; an empty list is valid (undetected / occluded).
struct CandidateSet {
  std::vector<CandidateList> landmarks;

  std::size_t landmark_count() const noexcept { return landmarks.size(); }
};

/// Candidate built from a Gaussian: A = covariance^-1, b = A * mean about origin 0.
Candidate gaussian_candidate(const Point& mean, const Eigen::Matrix2d& covariance, double confidence);

struct CandidateExtractionOptions {
  double threshold = 0.0;
  double bandwidth = 2.5;  ///< reference pixels
  int min_fit_cells = 6;
};

/// Mean-shift segmentation of the thresholded map followed by a PSD quadratic fit per segment.
CandidateList extract_candidates(const ResponseMap& map, const CandidateExtractionOptions& options);

/// Least-squares fit of E = d^T A d - 2 b^T d + c over samples; A projected to the PSD cone.
QuadraticFit fit_quadratic(std::span<const Point> positions, std::span<const double> inverted_scores,
                           const Point& origin);

/// Concatenates the lists and merges candidates closer than `radius`, keeping the more confident.
CandidateList merge_expression_candidates(std::span<const CandidateList> lists, double radius = 1.0);

}  // namespace erclm
