#pragma once

#include "erclm/geometry.hpp"

#include <cstdint>
#include <vector>

namespace erclm {

/// 8-bit grayscale raster, row-major. Pixel (x, y) covers [x, x+1) x [y, y+1).
class GrayImage {
public:
  GrayImage() = default;
  GrayImage(int width, int height, std::uint8_t fill = 0);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  /// Edge-replicated access.
  std::uint8_t clamped(int x, int y) const;
  /// Bilinear sample at continuous coordinates (pixel centres at +0.5).
  double sample(double x, double y) const;

  const std::vector<std::uint8_t>& data() const noexcept { return pixels_; }
  std::vector<std::uint8_t>& data() noexcept { return pixels_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Rotates `src` by `radians` about `center`; output has the same size.
GrayImage rotate_image(const GrayImage& src, const Point& center, double radians);

/// Axis-aligned box in continuous image coordinates.
struct Box {
  double x = 0, y = 0, width = 0, height = 0;

  Point center() const { return {x + width / 2, y + height / 2}; }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Summed-area table over an edge-replicated, padded copy of an image. Box sums
/// accept fractional corners and are exact for the piecewise-constant image.
class IntegralImage {
public:
  IntegralImage() = default;
  IntegralImage(const GrayImage& image, int padding);
  /// Builds from a dense row-major float raster (tests, patches).
  IntegralImage(const std::vector<double>& values, int width, int height, int padding);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int padding() const noexcept { return pad_; }

  /// Integral of the image over [0,x) x [0,y) in image coordinates (may be negative
  /// down to -padding); coordinates beyond the padded area are clamped.
  double cumulative(double x, double y) const;
  /// cumulative() at every (xs[j], ys[i]) into out[i][j].
  void cumulative_grid(const double (&xs)[4], const double (&ys)[4], double (&out)[4][4]) const;
  double box_sum(double x0, double y0, double x1, double y1) const;
  double box_mean(double x0, double y0, double x1, double y1) const;
  /// True when [x0,x1) x [y0,y1) lies inside the padded area.
  bool covers(double x0, double y0, double x1, double y1) const;

private:
  double table(int ix, int iy) const { return sat_[static_cast<std::size_t>(iy) * stride_ + ix]; }
  void build(const std::vector<double>& padded, int pw, int ph);

  int width_ = 0, height_ = 0, pad_ = 0, stride_ = 0, rows_ = 0;
  std::vector<double> sat_;
};

}  // namespace erclm
