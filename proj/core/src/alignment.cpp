#include "erclm/ensemble.hpp"
#include "erclm/error.hpp"
#include "erclm/fitter.hpp"
#include "erclm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace erclm {

int ModelEnsemble::pose_count() const {
  std::set<int> poses;
  for (const auto& m : modes) poses.insert(m.id.pose);
  return static_cast<int>(poses.size());
}

std::vector<int> ModelEnsemble::expressions_per_pose() const {
  int max_pose = -1;
  for (const auto& m : modes) max_pose = std::max(max_pose, m.id.pose);
  std::vector<int> counts(static_cast<std::size_t>(max_pose + 1), 0);
  for (const auto& m : modes) ++counts[static_cast<std::size_t>(m.id.pose)];
  return counts;
}

void ModelEnsemble::validate() const {
  if (modes.empty()) throw InsufficientDataError("ensemble has no modes");
  std::set<ModeId> seen;
  for (const auto& m : modes) {
    if (!seen.insert(m.id).second) throw Error(ErrorCode::invalid_argument, "duplicate mode id");
    m.shape.base.validate();
    const auto n = m.landmark_count();
    if (m.shape.mean_groups.size() != n) throw DimensionError("dense groups do not match the landmark count");
    if (m.detectors.size() != n || m.box_mean.size() != n || m.search_radius.size() != n)
      throw DimensionError("mode bindings do not match the landmark count");
    for (const auto& list : m.detectors)
      for (int d : list)
        if (d < 0 || d >= static_cast<int>(detectors.size()))
          throw DimensionError("detector handle out of range");
    for (const auto& c : m.exemplars.centers)
      if (c.size() != n) throw DimensionError("exemplar does not match the landmark count");
  }
}

Box face_box_from_shape(const Shape& shape, double margin) {
  if (shape.empty()) throw DimensionError("empty shape");
  Point lo = shape[0], hi = shape[0];
  for (const auto& p : shape.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Point c = 0.5 * (lo + hi);
  const double side = (hi - lo).maxCoeff() * (1.0 + 2.0 * margin);
  return {c.x() - side / 2, c.y() - side / 2, side, side};
}

Box search_region(const ModeModel& mode, std::size_t landmark, const Box& face) {
  const Point c = Point(face.x, face.y) + face.width * mode.box_mean[landmark];
  const double r = face.width * mode.search_radius[landmark];
  return {c.x() - r, c.y() - r, 2 * r, 2 * r};
}

namespace {

struct CellRect {
  int c0, r0, c1, r1;  // inclusive
};

// Detector scores on the face-box grid, evaluated once per cell.
struct ScoreGrid {
  CellRect bounds{0, 0, -1, -1};
  std::vector<double> scores;
  std::vector<std::uint8_t> needed;

  std::size_t slot(int c, int r) const {
    return static_cast<std::size_t>(r - bounds.r0) * static_cast<std::size_t>(bounds.c1 - bounds.c0 + 1) +
           static_cast<std::size_t>(c - bounds.c0);
  }
};

CellRect to_cells(const Box& region, const Point& origin, double step) {
  return {static_cast<int>(std::floor((region.x - origin.x()) / step)),
          static_cast<int>(std::floor((region.y - origin.y()) / step)),
          static_cast<int>(std::ceil((region.x + region.width - origin.x()) / step)),
          static_cast<int>(std::ceil((region.y + region.height - origin.y()) / step))};
}

const std::vector<double> kScales = {0.9, 1.0, 1.1};

}  // namespace

std::vector<CandidateSet> detect_candidates(const IntegralImage& integral, const Box& face,
                                            const ModelEnsemble& ensemble, double threshold_fraction,
                                            int threads) {
  const double step = face.width / kReferenceFaceWidth;
  const Point origin(face.x, face.y);
  const auto nd = ensemble.detectors.size();

  // requested cells per detector
  std::vector<ScoreGrid> grids(nd);
  std::vector<std::vector<CellRect>> requests(nd);
  for (const auto& mode : ensemble.modes)
    for (std::size_t i = 0; i < mode.landmark_count(); ++i)
      for (int d : mode.detectors[i])
        requests[static_cast<std::size_t>(d)].push_back(to_cells(search_region(mode, i, face), origin, step));

  parallel_for(nd, threads, [&](std::size_t d) {
    auto& g = grids[d];
    const auto& reqs = requests[d];
    if (reqs.empty()) return;
    g.bounds = reqs.front();
    for (const auto& r : reqs) {
      g.bounds.c0 = std::min(g.bounds.c0, r.c0);
      g.bounds.r0 = std::min(g.bounds.r0, r.r0);
      g.bounds.c1 = std::max(g.bounds.c1, r.c1);
      g.bounds.r1 = std::max(g.bounds.r1, r.r1);
    }
    const auto cells = static_cast<std::size_t>(g.bounds.c1 - g.bounds.c0 + 1) *
                       static_cast<std::size_t>(g.bounds.r1 - g.bounds.r0 + 1);
    g.scores.assign(cells, 0.0);
    g.needed.assign(cells, 0);
    for (const auto& r : reqs)
      for (int y = r.r0; y <= r.r1; ++y)
        for (int x = r.c0; x <= r.c1; ++x) g.needed[g.slot(x, y)] = 1;
    const auto& det = ensemble.detectors[d];
    const DescriptorLayout layout = det.layout();
    const CensusSampler sampler(integral, layout);
    for (int y = g.bounds.r0; y <= g.bounds.r1; ++y)
      for (int x = g.bounds.c0; x <= g.bounds.c1; ++x)
        if (g.needed[g.slot(x, y)])
          g.scores[g.slot(x, y)] = multiscale_score(sampler, det, origin + step * Point(x, y), step, kScales);
  });

  std::vector<double> thresholds(nd);
  for (std::size_t d = 0; d < nd; ++d) thresholds[d] = threshold_fraction * ensemble.detectors[d].max_score();

  std::vector<CandidateSet> out(ensemble.modes.size());
  parallel_for(ensemble.modes.size(), threads, [&](std::size_t m) {
    const auto& mode = ensemble.modes[m];
    auto& set = out[m];
    set.landmarks.resize(mode.landmark_count());
    for (std::size_t i = 0; i < mode.landmark_count(); ++i) {
      const CellRect rect = to_cells(search_region(mode, i, face), origin, step);
      std::vector<CandidateList> lists;
      for (int d : mode.detectors[i]) {
        const auto& g = grids[static_cast<std::size_t>(d)];
        ResponseMap map;
        map.origin = origin + step * Point(rect.c0, rect.r0);
        map.step = step;
        map.cols = rect.c1 - rect.c0 + 1;
        map.rows = rect.r1 - rect.r0 + 1;
        map.scores.resize(static_cast<std::size_t>(map.cols) * static_cast<std::size_t>(map.rows));
        for (int y = rect.r0; y <= rect.r1; ++y)
          for (int x = rect.c0; x <= rect.c1; ++x) map.at(x - rect.c0, y - rect.r0) = g.scores[g.slot(x, y)];
        CandidateExtractionOptions opts;
        opts.threshold = thresholds[static_cast<std::size_t>(d)];
        lists.push_back(extract_candidates(map, opts));
      }
      set.landmarks[i] = merge_expression_candidates(lists);
    }
  });
  return out;
}

AlignmentResult align_candidates(std::span<const CandidateSet> candidates, const ModelEnsemble& ensemble,
                                 const FitConfig& config, const RefineProvider& provider) {
  if (candidates.size() != ensemble.modes.size()) throw DimensionError("one candidate set per mode is required");
  std::vector<ModeFitResult> results(ensemble.modes.size());
  parallel_for(ensemble.modes.size(), config.threads, [&](std::size_t m) {
    results[m] = fit_mode(ensemble.modes[m], candidates[m], config, static_cast<int>(m));
  });

  AlignmentResult out;
  ModeSelection sel;
  try {
    sel = select_mode(results);
  } catch (const UnalignableError& e) {
    out.status = AlignmentStatus::failed;
    out.message = e.what();
    return out;
  }
  const auto chosen = static_cast<std::size_t>(sel.chosen);
  const ModeFitResult& best = results[chosen];
  if (config.refine && provider) {
    out = refine(best, ensemble.modes[chosen].shape, candidates[chosen], provider(sel.chosen), config);
  } else {
    out.status = AlignmentStatus::ok;
    out.shape = best.shape;
    out.labels = best.labels;
    out.mode = best.mode;
    out.mode_index = best.mode_index;
    out.mismatch = best.mismatch;
    out.inliers = best.inliers;
    out.inlier_error = best.inlier_error;
  }
  out.mode = best.mode;
  const auto keep = std::min<std::size_t>(sel.ranking.size(), static_cast<std::size_t>(std::max(config.ranked_modes, 1)));
  for (std::size_t k = 0; k < keep; ++k) out.ranked.push_back(results[static_cast<std::size_t>(sel.ranking[k])]);
  return out;
}

AlignmentResult align_face(const GrayImage& image, const Box& face, const ModelEnsemble& ensemble,
                           const FitConfig& config) {
  AlignmentResult failed;
  if (image.empty() || !(face.width > 0) || !(face.height > 0)) {
    failed.message = "empty image or face box";
    return failed;
  }
  const double step = face.width / kReferenceFaceWidth;
  const int padding = static_cast<int>(std::ceil(0.6 * kPatchSize * step * kScales.back())) + 2;
  const IntegralImage integral(image, padding);
  const auto candidates = detect_candidates(integral, face, ensemble, 0.35, config.threads);

  std::vector<DescriptorLayout> layouts;
  for (const auto& d : ensemble.detectors) layouts.push_back(d.layout());
  const RefineProvider provider = [&](int mode_index) {
    const auto& mode = ensemble.modes[static_cast<std::size_t>(mode_index)];
    RefineContext ctx;
    ctx.step = step;
    ctx.thresholds.assign(mode.landmark_count(), 0.0);
    ctx.score = [&, mode_index](int landmark, const Point& p) {
      const auto& m = ensemble.modes[static_cast<std::size_t>(mode_index)];
      double best = -std::numeric_limits<double>::infinity();
      for (int d : m.detectors[static_cast<std::size_t>(landmark)]) {
        const auto& det = ensemble.detectors[static_cast<std::size_t>(d)];
        const CensusSampler sampler(integral, layouts[static_cast<std::size_t>(d)]);
        best = std::max(best, multiscale_score(sampler, det, p, step, kScales) - 0.35 * det.max_score());
      }
      return best;
    };
    return ctx;
  };
  return align_candidates(candidates, ensemble, config, provider);
}

}  // namespace erclm
