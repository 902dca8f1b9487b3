#include "erclm/geometry.hpp"

#include "erclm/error.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <complex>
#include <numbers>

namespace erclm {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::singular_configuration: return "singular-configuration";
    case ErrorCode::insufficient_data: return "insufficient-data";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::unalignable: return "unalignable";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
    case ErrorCode::checksum: return "checksum";
    case ErrorCode::version: return "version";
    case ErrorCode::truncated: return "truncated";
  }
  return "unknown";
}

Eigen::VectorXd Shape::flatten() const {
  Eigen::VectorXd out(2 * points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[2 * i] = points[i].x();
    out[2 * i + 1] = points[i].y();
  }
  return out;
}

Shape Shape::from_flat(const Eigen::VectorXd& flat) {
  if (flat.size() % 2 != 0) throw DimensionError("flattened shape has odd length");
  Shape s;
  s.points.resize(static_cast<std::size_t>(flat.size() / 2));
  for (std::size_t i = 0; i < s.points.size(); ++i) s.points[i] = Point(flat[2 * i], flat[2 * i + 1]);
  return s;
}

bool Shape::all_finite() const {
  for (const auto& p : points)
    if (!p.allFinite()) return false;
  return true;
}

Eigen::Matrix2d SimilarityTransform::rotation() const {
  return Eigen::Rotation2Dd(angle).toRotationMatrix();
}

Point SimilarityTransform::apply(const Point& p) const { return linear() * p + translation; }

Shape SimilarityTransform::apply(const Shape& s) const {
  const Eigen::Matrix2d m = linear();
  Shape out;
  out.points.reserve(s.size());
  for (const auto& p : s.points) out.points.emplace_back(m * p + translation);
  return out;
}

SimilarityTransform SimilarityTransform::inverse() const {
  SimilarityTransform inv;
  inv.scale = 1.0 / scale;
  inv.angle = wrap_angle(-angle);
  inv.translation = -(inv.linear() * translation);
  return inv;
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& other) const {
  SimilarityTransform out;
  out.scale = scale * other.scale;
  out.angle = wrap_angle(angle + other.angle);
  out.translation = linear() * other.translation + translation;
  return out;
}

double wrap_angle(double radians) {
  const double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(radians + std::numbers::pi, two_pi);
  if (a < 0) a += two_pi;
  return a - std::numbers::pi;
}

namespace {

using Complex = std::complex<double>;

Complex as_complex(const Point& p) { return {p.x(), p.y()}; }

SimilarityTransform from_complex(Complex z, Complex t) {
  SimilarityTransform out;
  out.scale = std::abs(z);
  out.angle = std::arg(z);
  out.translation = Point(t.real(), t.imag());
  return out;
}

}  // namespace

SimilarityTransform estimate_similarity(const Point& model_a, const Point& model_b,
                                        const Point& observed_a, const Point& observed_b) {
  const Complex dm = as_complex(model_b) - as_complex(model_a);
  const Complex dobs = as_complex(observed_b) - as_complex(observed_a);
  if (std::abs(dm) < 1e-12) throw SingularConfigurationError("coincident model points");
  if (std::abs(dobs) < 1e-12) throw SingularConfigurationError("coincident observed points");
  const Complex z = dobs / dm;
  return from_complex(z, as_complex(observed_a) - z * as_complex(model_a));
}

SimilarityTransform fit_similarity(std::span<const Point> source, std::span<const Point> target,
                                   std::span<const double> weights) {
  if (source.size() != target.size()) throw DimensionError("point count mismatch");
  if (!weights.empty() && weights.size() != source.size())
    throw DimensionError("weight count mismatch");
  const auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  double wsum = 0.0;
  Complex src_mean = 0.0, dst_mean = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    wsum += w(i);
    src_mean += w(i) * as_complex(source[i]);
    dst_mean += w(i) * as_complex(target[i]);
  }
  if (wsum <= 0.0) throw SingularConfigurationError("no weighted points");
  src_mean /= wsum;
  dst_mean /= wsum;

  Complex num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Complex a = as_complex(source[i]) - src_mean;
    const Complex b = as_complex(target[i]) - dst_mean;
    num += w(i) * std::conj(a) * b;
    den += w(i) * std::norm(a);
  }
  if (den < 1e-24) throw SingularConfigurationError("source points are coincident");
  const Complex z = num / den;
  if (std::abs(z) < 1e-300) throw SingularConfigurationError("target points are coincident");
  return from_complex(z, dst_mean - z * src_mean);
}

}  // namespace erclm
