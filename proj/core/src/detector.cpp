#include "erclm/appearance.hpp"

#include "erclm/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace erclm {

double AdaboostDetector::score(const CensusDescriptor& d) const {
  double s = 0.0;
  for (const auto& w : weak) s += w.alpha * w.lut[d.codes.at(static_cast<std::size_t>(w.position))];
  return s;
}

double AdaboostDetector::score_at(const IntegralImage& integral, const Point& center, double side) const {
  const DescriptorLayout l = layout();
  const CensusSampler sampler(integral, l);
  const double x0 = center.x() - side / 2, y0 = center.y() - side / 2;
  double s = 0.0;
  for (const auto& w : weak) s += w.alpha * w.lut[sampler.code(w.position, x0, y0, side)];
  return s;
}

double AdaboostDetector::max_score() const {
  double s = 0.0;
  for (const auto& w : weak) {
    const double hi = *std::max_element(w.lut.begin(), w.lut.end());
    const double lo = *std::min_element(w.lut.begin(), w.lut.end());
    s += w.alpha >= 0 ? w.alpha * hi : w.alpha * lo;
  }
  return s;
}

namespace {

// Class-balanced error of the strong classifier, score > 0 meaning positive.
double balanced_error(const std::vector<double>& scores, std::size_t positives) {
  std::size_t fn = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > 0.0;
    if (i < positives && !predicted) ++fn;
    if (i >= positives && predicted) ++fp;
  }
  const std::size_t negatives = scores.size() - positives;
  return 0.5 * (static_cast<double>(fn) / static_cast<double>(positives) +
                static_cast<double>(fp) / static_cast<double>(negatives));
}

}  // namespace

AdaboostDetector train_detector(std::span<const CensusDescriptor> positives,
                                std::span<const CensusDescriptor> negatives, int landmark, int expression_tag,
                                const AdaboostOptions& options, AdaboostReport* report,
                                const DescriptorLayout& layout) {
  if (positives.empty() || negatives.empty())
    throw InsufficientDataError("detector training needs positive and negative samples");
  if (options.rounds < 1) throw Error(ErrorCode::invalid_argument, "at least one boosting round is required");
  const std::size_t n_pos = positives.size();
  const std::size_t n = n_pos + negatives.size();
  const auto dims = static_cast<std::size_t>(layout.length);

  // codes[position][sample]
  std::vector<std::uint16_t> codes(dims * n);
  std::vector<signed char> label(n);
  for (std::size_t s = 0; s < n; ++s) {
    const auto& d = s < n_pos ? positives[s] : negatives[s - n_pos];
    if (d.codes.size() != dims) throw DimensionError("descriptor length does not match the layout");
    for (std::size_t p = 0; p < dims; ++p) {
      if (d.codes[p] >= kCensusCodeCount) throw DimensionError("census code out of range");
      codes[p * n + s] = d.codes[p];
    }
    label[s] = s < n_pos ? 1 : -1;
  }

  std::vector<double> w(n);
  for (std::size_t s = 0; s < n; ++s)
    w[s] = s < n_pos ? 0.5 / static_cast<double>(n_pos) : 0.5 / static_cast<double>(n - n_pos);

  AdaboostDetector det;
  det.landmark = landmark;
  det.expression_tag = expression_tag;
  det.patch_size = layout.levels.front();
  det.levels = layout.levels;

  AdaboostReport local;
  AdaboostReport& rep = report ? *report : local;
  rep = {};

  std::vector<double> strong(n, 0.0);
  std::vector<double> wp(kCensusCodeCount), wn(kCensusCodeCount);

  for (int round = 0; round < options.rounds; ++round) {
    double best_err = std::numeric_limits<double>::infinity();
    std::size_t best_pos = 0;
    for (std::size_t p = 0; p < dims; ++p) {
      std::fill(wp.begin(), wp.end(), 0.0);
      std::fill(wn.begin(), wn.end(), 0.0);
      const std::uint16_t* row = &codes[p * n];
      for (std::size_t s = 0; s < n; ++s) (label[s] > 0 ? wp : wn)[row[s]] += w[s];
      double err = 0.0;
      for (int c = 0; c < kCensusCodeCount; ++c) err += std::min(wp[static_cast<std::size_t>(c)], wn[static_cast<std::size_t>(c)]);
      if (err < best_err) {
        best_err = err;
        best_pos = p;
      }
    }

    if (best_err >= 0.5 - 1e-12) {
      rep.early_stopped = true;
      rep.warning = "round " + std::to_string(round + 1) + ": no weak classifier beats chance (weighted error " +
                    std::to_string(best_err) + ")";
      if (det.weak.empty()) {
        WeakClassifier wc;
        wc.position = static_cast<int>(best_pos);
        wc.alpha = 0.0;
        det.weak.push_back(std::move(wc));
        rep.weighted_error.push_back(best_err);
        rep.training_error.push_back(balanced_error(strong, n_pos));
        rep.weight_sums.push_back(1.0);
      }
      break;
    }

    WeakClassifier wc;
    wc.position = static_cast<int>(best_pos);
    std::fill(wp.begin(), wp.end(), 0.0);
    std::fill(wn.begin(), wn.end(), 0.0);
    const std::uint16_t* row = &codes[best_pos * n];
    std::vector<bool> seen(kCensusCodeCount, false);
    for (std::size_t s = 0; s < n; ++s) {
      (label[s] > 0 ? wp : wn)[row[s]] += w[s];
      seen[row[s]] = true;
    }
    for (int c = 0; c < kCensusCodeCount; ++c) {
      const auto cu = static_cast<std::size_t>(c);
      if (seen[cu]) wc.lut[cu] = wp[cu] > wn[cu] ? 1.0 : -1.0;
    }
    const double eps = std::max(best_err, 1e-10);
    wc.alpha = 0.5 * std::log((1.0 - eps) / eps);

    double total = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const double h = wc.lut[row[s]];
      strong[s] += wc.alpha * h;
      w[s] *= std::exp(-wc.alpha * label[s] * h);
      total += w[s];
    }
    double renormalized = 0.0;
    for (auto& v : w) {
      v /= total;
      renormalized += v;
    }
    det.weak.push_back(std::move(wc));
    rep.weighted_error.push_back(best_err);
    rep.training_error.push_back(balanced_error(strong, n_pos));
    rep.weight_sums.push_back(renormalized);

    if (best_err <= 1e-12) break;  // separable: further rounds cannot change the labels
  }
  return det;
}

void harvest_negatives(const IntegralImage& integral, const Point& landmark, double step,
                       const HarvestOptions& options, const DescriptorLayout& layout, std::mt19937_64& rng,
                       std::vector<CensusDescriptor>& out) {
  const double r0 = options.negative_inner_radius, r1 = options.negative_outer_radius;
  std::uniform_real_distribution<double> area(r0 * r0, r1 * r1);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const CensusSampler sampler(integral, layout);
  const double side = layout.levels.front() * step;
  for (int k = 0; k < options.negatives_per_positive; ++k) {
    const double r = std::sqrt(area(rng)) * step;
    const double a = angle(rng);
    out.push_back(sampler.describe(landmark + r * Point(std::cos(a), std::sin(a)), side));
  }
}

double multiscale_score(const CensusSampler& sampler, const AdaboostDetector& detector, const Point& center,
                        double step, std::span<const double> scales) {
  double best = -std::numeric_limits<double>::infinity();
  for (double scale : scales) {
    const double side = detector.patch_size * step * scale;
    const double x0 = center.x() - side / 2, y0 = center.y() - side / 2;
    double s = 0.0;
    for (const auto& w : detector.weak) s += w.alpha * w.lut[sampler.code(w.position, x0, y0, side)];
    best = std::max(best, s);
  }
  return best;
}

ResponseMap response_map(const IntegralImage& integral, const AdaboostDetector& detector, const Box& region,
                         double step, const ResponseMapOptions& options) {
  if (!(step > 0) || !(region.width >= 0) || !(region.height >= 0))
    throw Error(ErrorCode::invalid_argument, "response map needs a positive step and a valid region");
  if (options.scales.empty()) throw Error(ErrorCode::invalid_argument, "no response-map scales");
  ResponseMap map;
  map.origin = Point(region.x, region.y);
  map.step = step;
  map.cols = static_cast<int>(std::floor(region.width / step + 1e-9)) + 1;
  map.rows = static_cast<int>(std::floor(region.height / step + 1e-9)) + 1;
  map.scores.assign(static_cast<std::size_t>(map.cols) * map.rows, -std::numeric_limits<double>::infinity());

  const DescriptorLayout layout = detector.layout();
  const CensusSampler sampler(integral, layout);
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      const Point p = map.position(c, r);
      if (p.x() < 0 || p.y() < 0 || p.x() >= integral.width() || p.y() >= integral.height()) map.clipped = true;
      for (double scale : options.scales) {
        const double side = detector.patch_size * step * scale;
        const double x0 = p.x() - side / 2, y0 = p.y() - side / 2;
        if (!integral.covers(x0, y0, x0 + side, y0 + side)) map.clipped = true;
      }
      map.at(c, r) = multiscale_score(sampler, detector, p, step, options.scales);
    }
  }
  return map;
}

}  // namespace erclm
