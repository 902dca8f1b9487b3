#include "erclm/appearance.hpp"

#include "erclm/error.hpp"

#include <algorithm>

namespace erclm {

std::uint16_t census_code(std::span<const double, 9> block) {
  double sum = 0.0;
  for (double v : block) sum += v;
  // v > sum / 9, written without the division so that integer-valued blocks
  // compare exactly
  std::uint16_t code = 0;
  for (int j = 0; j < 9; ++j)
    if (9.0 * block[static_cast<std::size_t>(j)] > sum) code |= static_cast<std::uint16_t>(1u << j);
  return code;
}

DescriptorLayout DescriptorLayout::from_levels(std::vector<int> levels) {
  DescriptorLayout layout;
  layout.levels = std::move(levels);
  for (int n : layout.levels) {
    if (n < 3) throw DimensionError("pyramid level smaller than 3x3");
    layout.offsets.push_back(layout.length);
    layout.length += (n - 2) * (n - 2);
  }
  for (std::size_t l = 0; l < layout.levels.size(); ++l) {
    const int inner = layout.levels[l] - 2;
    for (int r = 0; r < inner; ++r)
      for (int c = 0; c < inner; ++c) layout.entries.push_back({static_cast<int>(l), r, c});
  }
  return layout;
}

DescriptorLayout DescriptorLayout::hierarchical() { return from_levels({35, 25, 15, 5}); }

DescriptorLayout DescriptorLayout::single_level(int size) { return from_levels({size}); }

DescriptorLayout::Entry DescriptorLayout::locate(int index) const {
  if (index < 0 || index >= length) throw DimensionError("descriptor index out of range");
  int level = static_cast<int>(levels.size()) - 1;
  while (offsets[static_cast<std::size_t>(level)] > index) --level;
  const int inner = levels[static_cast<std::size_t>(level)] - 2;
  const int local = index - offsets[static_cast<std::size_t>(level)];
  return {level, local / inner, local % inner};
}

int DescriptorLayout::index(int level, int row, int col) const {
  const int inner = levels.at(static_cast<std::size_t>(level)) - 2;
  if (row < 0 || col < 0 || row >= inner || col >= inner) throw DimensionError("descriptor cell out of range");
  return offsets[static_cast<std::size_t>(level)] + row * inner + col;
}

std::uint16_t CensusSampler::code(int index, double x0, double y0, double side) const {
  const auto& e = layout_->entries.at(static_cast<std::size_t>(index));
  const double cell = side / layout_->levels[static_cast<std::size_t>(e.level)];
  double xs[4], ys[4], cum[4][4];
  for (int k = 0; k < 4; ++k) {
    xs[k] = x0 + (e.col + k) * cell;
    ys[k] = y0 + (e.row + k) * cell;
  }
  integral_->cumulative_grid(xs, ys, cum);
  std::array<double, 9> block;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      block[static_cast<std::size_t>(3 * i + j)] = cum[i + 1][j + 1] - cum[i][j + 1] - cum[i + 1][j] + cum[i][j];
  return census_code(std::span<const double, 9>(block));
}

CensusDescriptor CensusSampler::describe(const Point& center, double side) const {
  CensusDescriptor d;
  d.codes.resize(static_cast<std::size_t>(layout_->length));
  const double x0 = center.x() - side / 2, y0 = center.y() - side / 2;
  for (int k = 0; k < layout_->length; ++k) d.codes[static_cast<std::size_t>(k)] = code(k, x0, y0, side);
  return d;
}

CensusDescriptor hierarchical_descriptor(std::span<const double> patch, int patch_size, const DescriptorLayout& layout) {
  if (patch_size <= 0 || patch.size() != static_cast<std::size_t>(patch_size) * patch_size)
    throw DimensionError("patch buffer does not match its declared size");
  if (layout.levels.empty() || layout.levels.front() != patch_size)
    throw DimensionError("patch must be " + std::to_string(layout.levels.empty() ? 0 : layout.levels.front()) +
                         " pixels square");
  const IntegralImage integral(std::vector<double>(patch.begin(), patch.end()), patch_size, patch_size, 0);
  const CensusSampler sampler(integral, layout);
  return sampler.describe(Point(patch_size / 2.0, patch_size / 2.0), patch_size);
}

}  // namespace erclm
