#include "erclm/training.hpp"

#include "erclm/error.hpp"
#include "erclm/fitter.hpp"
#include "erclm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace erclm {

const char* to_string(DetectorSharing sharing) noexcept {
  switch (sharing) {
    case DetectorSharing::mode: return "mode";
    case DetectorSharing::pose: return "pose";
    case DetectorSharing::all: return "all";
  }
  return "?";
}

DetectorSharing parse_detector_sharing(const std::string& name) {
  if (name == "mode") return DetectorSharing::mode;
  if (name == "pose") return DetectorSharing::pose;
  if (name == "all") return DetectorSharing::all;
  throw Error(ErrorCode::invalid_argument, "unknown detector sharing '" + name + "'");
}

ModeModel train_mode_shape(std::span<const Shape> shapes, ModeId id, const LandmarkScheme& scheme,
                           const ShapeTrainingOptions& options) {
  scheme.validate();
  if (shapes.size() < 2) throw InsufficientDataError("a mode needs at least 2 training shapes");
  const auto n = static_cast<std::size_t>(scheme.landmark_count);
  for (const auto& s : shapes) {
    if (s.size() != n) throw DimensionError("training shape does not match the landmark scheme");
    if (!s.all_finite()) throw Error(ErrorCode::invalid_argument, "training shape has non-finite points");
  }

  std::vector<Shape> prepared(shapes.begin(), shapes.end());
  if (options.slide_contours) {
    // every contour resampled at the mode's mean arc-length positions
    std::vector<std::vector<double>> fractions;
    for (const auto& contour : scheme.contours) {
      std::vector<double> mean(contour.size(), 0.0);
      for (const auto& s : prepared) {
        const auto f = contour_fractions(s, contour);
        for (std::size_t k = 0; k < f.size(); ++k) mean[k] += f[k] / static_cast<double>(prepared.size());
      }
      fractions.push_back(std::move(mean));
    }
    for (auto& s : prepared) s = slide_contours(s, scheme.contours, scheme.kinds, fractions);
  }
  const auto anchors = options.subset_anchors ? scheme.anchor_indices : all_indices(n);
  const auto gpa = procrustes_align(prepared, anchors);

  ModeModel mode;
  mode.id = id;
  mode.scheme = scheme.name;
  mode.shape = densify(train_pdm(gpa.normalized, scheme, id, options.pdm), options.samples_per_contour);
  const int clusters = std::clamp(options.exemplar_count, 1, static_cast<int>(gpa.normalized.size()));
  mode.exemplars = cluster_exemplars(gpa.normalized, clusters, options.seed, options.exemplar_percentile);

  // landmark positions relative to the face box
  std::vector<Shape> boxed;
  for (const auto& s : shapes) {
    const Box b = face_box_from_shape(s);
    Shape u;
    for (const auto& p : s.points) u.points.push_back((p - Point(b.x, b.y)) / b.width);
    boxed.push_back(std::move(u));
  }
  mode.box_mean.points.assign(n, Point::Zero());
  for (const auto& u : boxed)
    for (std::size_t i = 0; i < n; ++i) mode.box_mean[i] += u[i] / static_cast<double>(boxed.size());
  mode.search_radius.assign(n, 0.0);
  for (const auto& u : boxed)
    for (std::size_t i = 0; i < n; ++i)
      mode.search_radius[i] = std::max(mode.search_radius[i], (u[i] - mode.box_mean[i]).lpNorm<Eigen::Infinity>());
  for (auto& r : mode.search_radius) r += options.search_margin;

  mode.detectors.assign(n, {});
  return mode;
}

namespace {

struct PreparedImage {
  IntegralImage integral;
  Shape shape;
  double step = 1.0;
};

}  // namespace

ModelEnsemble train_ensemble(std::span<const TrainingSample> samples, const LandmarkScheme& scheme,
                             const EnsembleTrainingOptions& options, std::vector<AdaboostReport>* reports) {
  if (samples.empty()) throw InsufficientDataError("no training samples");
  std::map<ModeId, std::vector<std::size_t>> by_mode;
  for (std::size_t k = 0; k < samples.size(); ++k) by_mode[samples[k].mode].push_back(k);

  ModelEnsemble e;
  for (const auto& [id, members] : by_mode) {
    std::vector<Shape> shapes;
    for (auto k : members) shapes.push_back(samples[k].shape);
    ShapeTrainingOptions so = options.shape;
    so.seed = mode_seed(options.shape.seed, static_cast<int>(e.modes.size()));
    e.modes.push_back(train_mode_shape(shapes, id, scheme, so));
  }

  // integral images of every sample, plus rotated copies
  const auto& dopt = options.detectors;
  std::vector<std::vector<PreparedImage>> prepared(samples.size());
  const std::vector<double> angles =
      dopt.rotation_augment ? std::vector<double>{0.0, -10.0, 10.0} : std::vector<double>{0.0};
  parallel_for(samples.size(), dopt.threads, [&](std::size_t k) {
    const auto& s = samples[k];
    const Box face = face_box_from_shape(s.shape);
    const double step = face.width / kReferenceFaceWidth;
    const int padding = static_cast<int>(std::ceil(kPatchSize * step)) + 2;
    for (double deg : angles) {
      PreparedImage p;
      p.step = step;
      if (deg == 0.0) {
        p.integral = IntegralImage(s.image, padding);
        p.shape = s.shape;
      } else {
        const double a = deg * std::numbers::pi / 180.0;
        SimilarityTransform t;
        t.angle = a;
        t.translation = face.center() - t.rotation() * face.center();
        p.integral = IntegralImage(rotate_image(s.image, face.center(), a), padding);
        p.shape = t.apply(s.shape);
      }
      prepared[k].push_back(std::move(p));
    }
  });

  // detector groups: the modes whose samples train one set of detectors
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> group_of(e.modes.size());
  for (std::size_t m = 0; m < e.modes.size(); ++m) {
    std::size_t g = groups.size();
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const auto& other = e.modes[groups[k].front()].id;
      const bool joins = dopt.sharing == DetectorSharing::all ||
                         (dopt.sharing == DetectorSharing::pose && other.pose == e.modes[m].id.pose);
      if (joins) g = k;
    }
    if (g == groups.size()) groups.emplace_back();
    groups[g].push_back(m);
    group_of[m] = g;
  }

  const auto n = static_cast<std::size_t>(scheme.landmark_count);
  const auto total = groups.size() * n;
  e.detectors.resize(total);
  std::vector<AdaboostReport> local_reports(total);
  const DescriptorLayout layout = DescriptorLayout::hierarchical();
  parallel_for(total, dopt.threads, [&](std::size_t d) {
    const std::size_t g = d / n, i = d % n;
    std::mt19937_64 rng(mode_seed(dopt.seed, static_cast<int>(d)));
    std::vector<CensusDescriptor> pos, neg;
    for (auto m : groups[g]) {
      for (auto k : by_mode.at(e.modes[m].id)) {
        for (const auto& p : prepared[k]) {
          const CensusSampler sampler(p.integral, layout);
          pos.push_back(sampler.describe(p.shape[i], kPatchSize * p.step));
        }
        const auto& base = prepared[k].front();
        harvest_negatives(base.integral, base.shape[i], base.step, dopt.harvest, layout, rng, neg);
      }
    }
    if (dopt.max_positives > 0 && pos.size() > static_cast<std::size_t>(dopt.max_positives))
      pos.resize(static_cast<std::size_t>(dopt.max_positives));
    const int tag = groups[g].size() == 1 ? e.modes[groups[g].front()].id.expression : -1;
    e.detectors[d] = train_detector(pos, neg, static_cast<int>(i), tag, dopt.boost, &local_reports[d], layout);
  });

  for (std::size_t m = 0; m < e.modes.size(); ++m)
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const bool own = g == group_of[m];
      const auto& lead = e.modes[groups[g].front()].id;
      const bool sibling = dopt.sharing == DetectorSharing::mode && dopt.share_expressions &&
                           lead.pose == e.modes[m].id.pose;
      if (own || sibling)
        for (std::size_t i = 0; i < n; ++i) e.modes[m].detectors[i].push_back(static_cast<int>(g * n + i));
    }

  e.config["scheme"] = scheme.name;
  e.config["boost_rounds"] = std::to_string(dopt.boost.rounds);
  e.config["samples_per_contour"] = std::to_string(options.shape.samples_per_contour);
  e.config["subset_anchors"] = options.shape.subset_anchors ? "true" : "false";
  e.config["detector_sharing"] = to_string(dopt.sharing);
  e.config["share_expressions"] = dopt.share_expressions ? "true" : "false";
  e.config["training_samples"] = std::to_string(samples.size());
  e.validate();
  if (reports) *reports = std::move(local_reports);
  return e;
}

}  // namespace erclm
