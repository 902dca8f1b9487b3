#pragma once

#include "erclm/geometry.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace erclm {

/// Point-like landmarks are localized directly; contour-like landmarks may slide
/// along their contour and are densified.
enum class LandmarkKind : std::uint8_t { point = 0, contour = 1 };

/// (pose, expression) cell of the ensemble, 0-based.
struct ModeId {
  int pose = 0;
  int expression = 0;

  friend bool operator==(const ModeId&, const ModeId&) = default;
  friend auto operator<=>(const ModeId&, const ModeId&) = default;
};

/// Landmarking configuration: which landmarks are contours, how contours are
/// ordered, which points normalize the shapes, and which metric points to use.
struct LandmarkScheme {
  std::string name;
  int landmark_count = 0;
  std::vector<LandmarkKind> kinds;
  std::vector<std::vector<int>> contours;
  std::vector<int> anchor_indices;
  int left_outer_eye = -1;
  int right_outer_eye = -1;
  std::vector<int> jawline;
  /// For each landmark, the corresponding index in the 68-point frontal scheme (-1 if none).
  std::vector<int> frontal_correspondence;

  /// 68-point frontal scheme; jawline (0..16) is the only contour.
  static LandmarkScheme frontal68();
  /// 40-point profile scheme.
  static LandmarkScheme profile40();
  /// 29-point scheme; ingestion only, no frontal mapping is provided.
  static LandmarkScheme lfpw29();
  static LandmarkScheme for_count(int landmark_count);

  void validate() const;
};

struct PointDistributionModel {
  Shape mean_shape;                               ///< normalized frame
  Eigen::MatrixXd basis;                          ///< 2N x d, orthonormal columns
  Eigen::VectorXd eigenvalues;                    ///< length d, nonincreasing, positive
  std::vector<Eigen::Matrix2d> landmark_covariance;  ///< Delta_i, normalized frame
  std::vector<LandmarkKind> kinds;
  std::vector<std::vector<int>> contours;
  std::vector<int> anchor_indices;
  ModeId mode;

  std::size_t landmark_count() const noexcept { return mean_shape.size(); }
  std::size_t dimension() const noexcept { return static_cast<std::size_t>(basis.cols()); }

  /// Rows 2i, 2i+1 of the basis.
  auto basis_rows(std::size_t i) const { return basis.middleRows(static_cast<Eigen::Index>(2 * i), 2); }

  /// Throws DimensionError / InvalidArgument-style Error when an invariant fails.
  void validate() const;
};

struct PdmParameter {
  SimilarityTransform transform;
  Eigen::VectorXd q;
};

/// x_i = s R (mean_i + Phi_i q) + t
Shape instantiate(const PointDistributionModel& pdm, const PdmParameter& params);

/// Model-frame shape mean + Phi q.
Shape deform(const PointDistributionModel& pdm, const Eigen::VectorXd& q);

/// Phi^T (x - mean) for a normalized-frame shape.
Eigen::VectorXd project(const PointDistributionModel& pdm, const Shape& normalized);

struct ProcrustesOptions {
  double tolerance = 1e-8;
  int max_iterations = 100;
};

struct ProcrustesResult {
  std::vector<Shape> normalized;
  Shape mean;
  /// Maps each input shape into the normalized frame.
  std::vector<SimilarityTransform> transforms;
  int iterations = 0;
  double final_change = 0.0;
};

/// Generalized Procrustes analysis driven only by `anchor_indices`. Pass every
/// index for conventional GPA (see `all_indices`).
ProcrustesResult procrustes_align(std::span<const Shape> shapes, std::span<const int> anchor_indices,
                                  const ProcrustesOptions& options = {});

std::vector<int> all_indices(std::size_t n);

struct PdmTrainingOptions {
  double variance_fraction = 0.95;
  double covariance_regularization = 1e-3;
};

PointDistributionModel train_pdm(std::span<const Shape> normalized, const LandmarkScheme& scheme,
                                 ModeId mode, const PdmTrainingOptions& options = {});

/// One landmark's dense group. `elements` holds the interpolated samples plus the
/// representative, ordered along the contour; `representative_slot` indexes it.
struct DenseGroup {
  std::vector<Point> elements;
  int representative_slot = 0;
};

struct DensePdm {
  PointDistributionModel base;
  int samples_per_contour = 7;
  std::map<int, int> sample_overrides;  ///< landmark -> N_s
  std::vector<DenseGroup> mean_groups;  ///< groups of the mean shape

  std::size_t dense_count() const;
  int samples_for(int landmark) const;
  /// Densifies an arbitrary shape that follows this model's landmark order.
  std::vector<DenseGroup> groups_for(const Shape& shape) const;
  Shape dense_mean() const;
};

DensePdm densify(const PointDistributionModel& pdm, int samples_per_contour = 7,
                 std::map<int, int> sample_overrides = {});

/// Samples for one landmark. `prev`/`next` may be null at the end of a contour, in
/// which case the curve runs one-sided towards the existing neighbour and the
/// representative sits at the end of the group.
DenseGroup interpolate_contour(const Point* prev, const Point& current, const Point* next, int samples);

/// Distance from `p` to the interpolating curve of `interpolate_contour`.
double distance_to_contour_curve(const Point* prev, const Point& current, const Point* next,
                                 const Point& p);

/// Arc-length position of every point of `contour` along the polyline through it, 0 to 1.
std::vector<double> contour_fractions(const Shape& shape, const std::vector<int>& contour);

/// Moves the interior contour-kind landmarks of every contour to the given
/// arc-length fractions (one list per contour, as from contour_fractions) along
/// the polyline through the contour; end points stay. Without fractions the
/// points are spread evenly. Removes the along-contour annotation slack before
/// training a dense model.
Shape slide_contours(const Shape& shape, std::span<const std::vector<int>> contours,
                     std::span<const LandmarkKind> kinds, std::span<const std::vector<double>> fractions = {});

struct ExemplarSet {
  std::vector<Shape> centers;
  double radius = 0.0;  ///< normalized units
};

ExemplarSet cluster_exemplars(std::span<const Shape> normalized, int cluster_count,
                              std::uint64_t seed = 0, double radius_percentile = 0.95);

}  // namespace erclm
