#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace erclm {

using Point = Eigen::Vector2d;

/// Ordered 2-D landmark coordinates.
struct Shape {
  std::vector<Point> points;

  Shape() = default;
  explicit Shape(std::vector<Point> pts) : points(std::move(pts)) {}

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  Point& operator[](std::size_t i) { return points[i]; }
  const Point& operator[](std::size_t i) const { return points[i]; }

  /// Interleaved [x0, y0, x1, y1, ...].
  Eigen::VectorXd flatten() const;
  static Shape from_flat(const Eigen::VectorXd& flat);

  bool all_finite() const;

  friend bool operator==(const Shape& a, const Shape& b) { return a.points == b.points; }
};

/// x -> s R(theta) x + t
struct SimilarityTransform {
  double scale = 1.0;
  double angle = 0.0;
  Point translation = Point::Zero();

  Eigen::Matrix2d rotation() const;
  /// s R as a single 2x2 matrix.
  Eigen::Matrix2d linear() const { return scale * rotation(); }

  Point apply(const Point& p) const;
  Shape apply(const Shape& s) const;
  SimilarityTransform inverse() const;
  /// (this * other)(x) = this(other(x))
  SimilarityTransform compose(const SimilarityTransform& other) const;

  static SimilarityTransform identity() { return {}; }
};

/// Closed-form similarity mapping two model points exactly onto two observed points.
/// Throws SingularConfigurationError when either pair is coincident.
SimilarityTransform estimate_similarity(const Point& model_a, const Point& model_b,
                                        const Point& observed_a, const Point& observed_b);

/// Least-squares similarity from `source` onto `target` (2-D Umeyama, complex form).
/// Optional non-negative per-point weights.
SimilarityTransform fit_similarity(std::span<const Point> source, std::span<const Point> target,
                                   std::span<const double> weights = {});

double wrap_angle(double radians);

}  // namespace erclm
