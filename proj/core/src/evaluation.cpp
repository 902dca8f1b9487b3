#include "erclm/evaluation.hpp"

#include "erclm/error.hpp"
#include "erclm/parallel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>

namespace erclm {

LandmarkSubset parse_subset(int count) {
  if (count == 68) return LandmarkSubset::all;
  if (count == 51) return LandmarkSubset::no_jaw;
  throw Error(ErrorCode::invalid_argument, "subset must be 68 or 51");
}

int subset_size(LandmarkSubset subset) { return subset == LandmarkSubset::all ? 68 : 51; }

std::vector<int> subset_indices(const LandmarkScheme& scheme, LandmarkSubset subset) {
  std::vector<int> out;
  for (int i = 0; i < scheme.landmark_count; ++i)
    if (subset == LandmarkSubset::all || std::find(scheme.jawline.begin(), scheme.jawline.end(), i) == scheme.jawline.end())
      out.push_back(i);
  return out;
}

double mnle(const Shape& predicted, const Shape& truth, LandmarkSubset subset, const LandmarkScheme& scheme) {
  if (predicted.size() != truth.size() || truth.size() != static_cast<std::size_t>(scheme.landmark_count))
    throw DimensionError("prediction, ground truth and scheme differ in size");
  if (scheme.left_outer_eye < 0 || scheme.right_outer_eye < 0)
    throw Error(ErrorCode::invalid_argument, "scheme has no outer eye corners");
  const double iod = (truth[static_cast<std::size_t>(scheme.left_outer_eye)] -
                      truth[static_cast<std::size_t>(scheme.right_outer_eye)]).norm();
  if (!(iod > 0)) throw Error(ErrorCode::invalid_argument, "interocular distance is zero");
  const auto idx = subset_indices(scheme, subset);
  double sum = 0.0;
  for (int i : idx) sum += (predicted[static_cast<std::size_t>(i)] - truth[static_cast<std::size_t>(i)]).norm();
  return sum / static_cast<double>(idx.size()) / iod;
}

double failure_rate(std::span<const double> errors, double threshold) {
  if (errors.empty()) return 0.0;
  const auto failed = std::count_if(errors.begin(), errors.end(), [&](double e) { return !(e <= threshold); });
  return static_cast<double>(failed) / static_cast<double>(errors.size());
}

std::vector<CedPoint> ced_curve(std::span<const double> errors, std::span<const double> thresholds) {
  std::vector<double> sorted(errors.begin(), errors.end());
  for (auto& e : sorted)
    if (std::isnan(e)) e = std::numeric_limits<double>::infinity();
  std::sort(sorted.begin(), sorted.end());
  std::vector<CedPoint> out;
  for (double t : thresholds) {
    const auto below = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back({t, sorted.empty() ? 0.0 : static_cast<double>(below) / static_cast<double>(sorted.size())});
  }
  return out;
}

std::vector<double> default_ced_thresholds() {
  std::vector<double> t;
  for (int k = 0; k <= 60; ++k) t.push_back(0.005 * k);
  return t;
}

EvalReport make_report(std::vector<std::string> images, std::vector<double> errors, LandmarkSubset subset,
                       std::span<const double> thresholds) {
  EvalReport r;
  r.subset = subset;
  r.images = std::move(images);
  r.errors = std::move(errors);
  r.faces = static_cast<int>(r.errors.size());
  double sum = 0.0;
  int aligned = 0;
  for (double e : r.errors) {
    if (std::isfinite(e)) {
      sum += e;
      ++aligned;
    }
  }
  r.unaligned = r.faces - aligned;
  r.mnle = aligned > 0 ? sum / aligned : std::numeric_limits<double>::infinity();
  r.failure_rate = failure_rate(r.errors);
  r.ced = ced_curve(r.errors, thresholds);
  return r;
}

namespace {

std::string path_key(const std::string& p) {
  std::error_code ec;
  const auto abs = std::filesystem::absolute(p, ec);
  return (ec ? std::filesystem::path(p) : abs).lexically_normal().string();
}

Point centroid(const std::vector<Point>& pts) {
  Point c = Point::Zero();
  for (const auto& p : pts) c += p / static_cast<double>(pts.size());
  return c;
}

}  // namespace

EvalReport evaluate(std::span<const ResultRecord> results, std::span<const AnnotationRecord> truth,
                    LandmarkSubset subset, const LandmarkScheme& scheme) {
  std::map<std::string, std::vector<const AnnotationRecord*>> by_image;
  for (const auto& a : truth) by_image[path_key(a.image_path)].push_back(&a);
  std::vector<std::string> images;
  std::vector<double> errors;
  for (const auto& r : results) {
    const auto it = by_image.find(path_key(r.image_path));
    if (it == by_image.end()) throw Error(ErrorCode::invalid_argument, "no annotation for '" + r.image_path + "'");
    images.push_back(r.image_path);
    if (!r.ok || r.points.empty()) {
      errors.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    const Point c = centroid(r.points);
    const AnnotationRecord* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto* a : it->second) {
      const double d = (centroid(a->points.points) - c).norm();
      if (d < best_d) {
        best_d = d;
        best = a;
      }
    }
    errors.push_back(mnle(Shape(r.points), best->points, subset, scheme));
  }
  const auto t = default_ced_thresholds();
  return make_report(std::move(images), std::move(errors), subset, t);
}

namespace {

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

std::string fmt(double v) {
  if (!std::isfinite(v)) return v > 0 ? "inf" : "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["subset"] = subset_size(r.subset);
  j["faces"] = r.faces;
  j["unaligned"] = r.unaligned;
  j["mnle"] = number(r.mnle);
  j["failure_rate"] = r.failure_rate;
  j["failure_threshold"] = kFailureThreshold;
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t k = 0; k < r.errors.size(); ++k)
    per.push_back({{"image", k < r.images.size() ? r.images[k] : ""}, {"error", number(r.errors[k])}});
  j["per_face"] = per;
  nlohmann::json ced = nlohmann::json::array();
  for (const auto& p : r.ced) ced.push_back({p.threshold, p.fraction});
  j["ced"] = ced;
  return j.dump(2) + "\n";
}

std::string ced_csv(const EvalReport& r) {
  std::string s = "threshold,fraction\n";
  for (const auto& p : r.ced) s += fmt(p.threshold) + "," + fmt(p.fraction) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> run_ablation(const ModelEnsemble& ensemble, const AblationOptions& options) {
  if (options.strategies.empty() || options.budgets.empty())
    throw Error(ErrorCode::invalid_argument, "ablation needs at least one strategy and one budget");
  if (options.instances < 1) throw Error(ErrorCode::invalid_argument, "ablation needs at least one instance");
  ensemble.validate();

  std::vector<SyntheticInstance> instances(static_cast<std::size_t>(options.instances));
  parallel_for(instances.size(), options.threads, [&](std::size_t k) {
    instances[k] = synth_generate(ensemble, options.instance, mode_seed(options.seed, static_cast<int>(k)));
  });

  std::vector<AblationRow> rows;
  for (auto strategy : options.strategies) {
    for (int budget : options.budgets) {
      AblationRow row;
      row.strategy = strategy;
      row.budget = budget;
      row.instances = options.instances;
      std::vector<double> errors(instances.size()), shape_errors(instances.size());
      row.hypotheses_to_success.assign(instances.size(), budget + 1);
      parallel_for(instances.size(), options.threads, [&](std::size_t k) {
        const auto& inst = instances[k];
        const auto& mode = ensemble.modes[static_cast<std::size_t>(inst.mode_index)];
        FitConfig cfg = options.fit;
        cfg.strategy = strategy;
        cfg.max_iterations = budget;
        cfg.seed = mode_seed(options.seed ^ 0x5bd1e995ULL, static_cast<int>(k));
        int& first = row.hypotheses_to_success[k];
        cfg.observer = [&](int index, const Hypothesis& h) {
          if (first <= budget) return;
          bool all_true = true;
          for (int j = 0; j < 2; ++j)
            all_true = all_true && h.candidates[static_cast<std::size_t>(j)] ==
                                       inst.true_candidate[static_cast<std::size_t>(h.landmarks[static_cast<std::size_t>(j)])];
          if (all_true) first = index + 1;
        };
        const auto fit = fit_mode(mode, inst.candidates, cfg, inst.mode_index);
        if (fit.status != FitStatus::ok) {
          errors[k] = shape_errors[k] = std::numeric_limits<double>::infinity();
          return;
        }
        const auto scheme = LandmarkScheme::for_count(static_cast<int>(mode.landmark_count()));
        errors[k] = mnle(fit.shape, inst.shape, LandmarkSubset::all, scheme);
        shape_errors[k] = mahalanobis_shape_error(mode.shape.base, inst.transform, fit.shape, inst.shape);
      });
      double sum = 0.0, shape_sum = 0.0;
      int ok = 0;
      for (std::size_t k = 0; k < instances.size(); ++k)
        if (std::isfinite(errors[k])) {
          sum += errors[k];
          shape_sum += shape_errors[k];
          ++ok;
        }
      row.mnle = ok ? sum / ok : std::numeric_limits<double>::infinity();
      row.mean_shape_error = ok ? shape_sum / ok : std::numeric_limits<double>::infinity();
      row.failure_rate = failure_rate(errors);
      std::vector<int> h = row.hypotheses_to_success;
      std::sort(h.begin(), h.end());
      const std::size_t mid = h.size() / 2;
      row.median_hypotheses = h.size() % 2 ? h[mid] : 0.5 * (h[mid - 1] + h[mid]);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string s = "strategy,budget,instances,mnle,failure_rate,median_hypotheses,mean_shape_error\n";
  for (const auto& r : rows)
    s += std::string(to_string(r.strategy)) + "," + std::to_string(r.budget) + "," + std::to_string(r.instances) +
         "," + fmt(r.mnle) + "," + fmt(r.failure_rate) + "," + fmt(r.median_hypotheses) + "," +
         fmt(r.mean_shape_error) + "\n";
  return s;
}

}  // namespace erclm
