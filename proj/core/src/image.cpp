#include "erclm/image.hpp"

#include "erclm/error.hpp"

#include <algorithm>
#include <cmath>

namespace erclm {

GrayImage::GrayImage(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw DimensionError("negative image size");
  pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

std::uint8_t GrayImage::clamped(int x, int y) const {
  return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
}

double GrayImage::sample(double x, double y) const {
  const double fx = x - 0.5, fy = y - 0.5;
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  return (1 - ax) * (1 - ay) * clamped(x0, y0) + ax * (1 - ay) * clamped(x0 + 1, y0) +
         (1 - ax) * ay * clamped(x0, y0 + 1) + ax * ay * clamped(x0 + 1, y0 + 1);
}

GrayImage rotate_image(const GrayImage& src, const Point& center, double radians) {
  GrayImage out(src.width(), src.height());
  const double c = std::cos(radians), s = std::sin(radians);
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) {
      // inverse map output pixel centre into the source
      const double dx = x + 0.5 - center.x(), dy = y + 0.5 - center.y();
      const double sx = c * dx + s * dy + center.x();
      const double sy = -s * dx + c * dy + center.y();
      out.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(src.sample(sx, sy)), 0L, 255L));
    }
  }
  return out;
}

IntegralImage::IntegralImage(const GrayImage& image, int padding)
    : width_(image.width()), height_(image.height()), pad_(padding) {
  if (image.empty()) throw DimensionError("empty image");
  const int pw = width_ + 2 * pad_, ph = height_ + 2 * pad_;
  std::vector<double> padded(static_cast<std::size_t>(pw) * ph);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x)
      padded[static_cast<std::size_t>(y) * pw + x] = image.clamped(x - pad_, y - pad_);
  build(padded, pw, ph);
}

IntegralImage::IntegralImage(const std::vector<double>& values, int width, int height, int padding)
    : width_(width), height_(height), pad_(padding) {
  if (static_cast<std::size_t>(width) * height != values.size() || width <= 0 || height <= 0)
    throw DimensionError("raster size mismatch");
  const int pw = width_ + 2 * pad_, ph = height_ + 2 * pad_;
  std::vector<double> padded(static_cast<std::size_t>(pw) * ph);
  for (int y = 0; y < ph; ++y) {
    const int sy = std::clamp(y - pad_, 0, height - 1);
    for (int x = 0; x < pw; ++x) {
      const int sx = std::clamp(x - pad_, 0, width - 1);
      padded[static_cast<std::size_t>(y) * pw + x] = values[static_cast<std::size_t>(sy) * width + sx];
    }
  }
  build(padded, pw, ph);
}

void IntegralImage::build(const std::vector<double>& padded, int pw, int ph) {
  stride_ = pw + 1;
  rows_ = ph + 1;
  sat_.assign(static_cast<std::size_t>(stride_) * rows_, 0.0);
  for (int y = 0; y < ph; ++y) {
    double row = 0.0;
    for (int x = 0; x < pw; ++x) {
      row += padded[static_cast<std::size_t>(y) * pw + x];
      sat_[static_cast<std::size_t>(y + 1) * stride_ + x + 1] = sat_[static_cast<std::size_t>(y) * stride_ + x + 1] + row;
    }
  }
}

double IntegralImage::cumulative(double x, double y) const {
  const double px = std::clamp(x + pad_, 0.0, static_cast<double>(stride_ - 1));
  const double py = std::clamp(y + pad_, 0.0, static_cast<double>(rows_ - 1));
  const int ix = std::min(static_cast<int>(px), stride_ - 2);
  const int iy = std::min(static_cast<int>(py), rows_ - 2);
  const double fx = px - ix, fy = py - iy;
  return (1 - fx) * (1 - fy) * table(ix, iy) + fx * (1 - fy) * table(ix + 1, iy) +
         (1 - fx) * fy * table(ix, iy + 1) + fx * fy * table(ix + 1, iy + 1);
}

void IntegralImage::cumulative_grid(const double (&xs)[4], const double (&ys)[4], double (&out)[4][4]) const {
  int ix[4], iy[4];
  double fx[4], fy[4];
  for (int k = 0; k < 4; ++k) {
    const double px = std::clamp(xs[k] + pad_, 0.0, static_cast<double>(stride_ - 1));
    const double py = std::clamp(ys[k] + pad_, 0.0, static_cast<double>(rows_ - 1));
    ix[k] = std::min(static_cast<int>(px), stride_ - 2);
    iy[k] = std::min(static_cast<int>(py), rows_ - 2);
    fx[k] = px - ix[k];
    fy[k] = py - iy[k];
  }
  for (int i = 0; i < 4; ++i) {
    const double* r0 = sat_.data() + static_cast<std::size_t>(iy[i]) * stride_;
    const double* r1 = r0 + stride_;
    for (int j = 0; j < 4; ++j) {
      const double top = r0[ix[j]] + fx[j] * (r0[ix[j] + 1] - r0[ix[j]]);
      const double bottom = r1[ix[j]] + fx[j] * (r1[ix[j] + 1] - r1[ix[j]]);
      out[i][j] = top + fy[i] * (bottom - top);
    }
  }
}

double IntegralImage::box_sum(double x0, double y0, double x1, double y1) const {
  return cumulative(x1, y1) - cumulative(x0, y1) - cumulative(x1, y0) + cumulative(x0, y0);
}

double IntegralImage::box_mean(double x0, double y0, double x1, double y1) const {
  const double area = (x1 - x0) * (y1 - y0);
  return area > 0 ? box_sum(x0, y0, x1, y1) / area : 0.0;
}

bool IntegralImage::covers(double x0, double y0, double x1, double y1) const {
  return x0 >= -pad_ && y0 >= -pad_ && x1 <= width_ + pad_ && y1 <= height_ + pad_;
}

}  // namespace erclm
