#include "erclm/error.hpp"
#include "erclm/evaluation.hpp"
#include "erclm/parallel.hpp"
#include "erclm/pipeline_io.hpp"
#include "erclm/synthetic.hpp"
#include "erclm/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace erclm;

namespace {

std::string pad_index(int k) {
  std::ostringstream s;
  s.width(4);
  s.fill('0');
  s << k;
  return s.str();
}

std::vector<SamplingKind> parse_strategies(const std::vector<std::string>& names) {
  std::vector<SamplingKind> out;
  for (const auto& n : names) out.push_back(parse_sampling_kind(n));
  return out;
}

struct TrainArgs {
  std::string annotations, out;
  int rounds = 30;
  std::string sharing = "all";
  int negatives = 10;
  int samples_per_contour = 7;
  bool all_point_gpa = false;
  int threads = 1;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  const auto records = load_annotation_list(a.annotations);
  std::vector<TrainingSample> samples;
  for (const auto& r : records) {
    if (!r.mode) throw Error(ErrorCode::invalid_argument, "annotation for '" + r.image_path + "' has no mode label");
    samples.push_back({read_image(r.image_path), r.points, *r.mode});
  }
  EnsembleTrainingOptions opts;
  opts.shape.samples_per_contour = a.samples_per_contour;
  opts.shape.subset_anchors = !a.all_point_gpa;
  opts.shape.seed = a.seed;
  opts.detectors.boost.rounds = a.rounds;
  opts.detectors.sharing = parse_detector_sharing(a.sharing);
  opts.detectors.harvest.negatives_per_positive = a.negatives;
  opts.detectors.threads = a.threads;
  opts.detectors.seed = a.seed;
  const auto scheme = LandmarkScheme::for_count(static_cast<int>(samples.front().shape.size()));
  const auto ensemble = train_ensemble(samples, scheme, opts);
  save_model_file(a.out, ensemble);
  std::cerr << "trained " << ensemble.modes.size() << " modes, " << ensemble.detectors.size() << " detectors\n";
  return 0;
}

struct AlignArgs {
  std::string model, boxes, images, out;
  std::string strategy = "uniform";
  int max_iter = 2000;
  int threads = 1;
  bool no_refine = false;
  std::uint64_t seed = 0;
};

int run_align(const AlignArgs& a) {
  const auto ensemble = load_model_file(a.model);
  std::vector<std::string> diagnostics;
  auto boxes = load_face_boxes(a.boxes, &diagnostics);
  for (const auto& d : diagnostics) std::cerr << "warning: " << d << "\n";
  const fs::path base = a.images.empty() ? fs::path(a.boxes).parent_path() : fs::path(a.images);
  for (auto& b : boxes) {
    const fs::path p(b.image_path);
    if (p.is_relative()) b.image_path = (base / p).string();
  }

  // face index within its image, in list order
  std::vector<int> face_index(boxes.size());
  std::map<std::string, int> seen;
  for (std::size_t k = 0; k < boxes.size(); ++k) face_index[k] = seen[boxes[k].image_path]++;

  std::vector<ResultRecord> results(boxes.size());
  std::vector<std::string> errors(boxes.size());
  parallel_for(boxes.size(), a.threads, [&](std::size_t k) {
    FitConfig cfg;
    cfg.strategy = parse_sampling_kind(a.strategy);
    cfg.max_iterations = a.max_iter;
    cfg.refine = !a.no_refine;
    cfg.seed = mode_seed(a.seed, static_cast<int>(k));
    try {
      const auto image = read_image(boxes[k].image_path);
      const auto r = align_face(image, boxes[k].box, ensemble, cfg);
      results[k] = make_result_record(boxes[k].image_path, face_index[k], r);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });
  for (std::size_t k = 0; k < errors.size(); ++k)
    if (!errors[k].empty()) throw Error(ErrorCode::io, boxes[k].image_path + ": " + errors[k]);
  write_results(a.out, results);
  int ok = 0;
  for (const auto& r : results) ok += r.ok;
  std::cerr << "aligned " << ok << "/" << results.size() << " faces\n";
  return 0;
}

struct EvalArgs {
  std::string results, annotations, out, ced;
  int subset = 68;
};

int run_eval(const EvalArgs& a) {
  const auto subset = parse_subset(a.subset);
  const auto results = read_results(a.results);
  const auto truth = load_annotation_list(a.annotations);
  if (truth.empty()) throw InsufficientDataError("no annotations");
  const auto scheme = LandmarkScheme::for_count(static_cast<int>(truth.front().points.size()));
  const auto report = evaluate(results, truth, subset, scheme);
  const auto json = report_json(report);
  if (a.out.empty())
    std::cout << json;
  else
    write_text(a.out, json);
  if (!a.ced.empty()) write_text(a.ced, ced_csv(report));
  return 0;
}

struct SynthArgs {
  std::string kind = "faces";
  std::string model, out;
  int per_mode = 4;
  int count = 10;
  double occlusion_rate = 0.0;
  int clutter = 0;
  double noise = 0.0;
  bool adversarial = false;
  double occluder = 0.0;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  if (a.kind == "faces") {
    fs::create_directories(a.out);
    SyntheticFaceOptions fo;
    RenderOptions ro;
    ro.occluder_probability = a.occluder;
    std::mt19937_64 rng(a.seed);
    std::string list, boxes;
    int k = 0;
    for (int p = 0; p < fo.pose_count(); ++p)
      for (int x = 0; x < fo.expressions; ++x)
        for (int j = 0; j < a.per_mode; ++j, ++k) {
          const auto face = render_synthetic_face({p, x}, fo, ro, rng);
          const std::string stem = "face_" + pad_index(k);
          write_image((fs::path(a.out) / (stem + ".pgm")).string(), face.image);
          AnnotationRecord rec;
          rec.points = face.shape;
          rec.occluded = face.occluded;
          write_text((fs::path(a.out) / (stem + ".pts")).string(), format_pts(rec));
          list += stem + ".pgm " + stem + ".pts " + std::to_string(p) + " " + std::to_string(x) + "\n";
          const FaceBoxRecord box{stem + ".pgm", face.face};
          boxes += format_face_boxes(std::span<const FaceBoxRecord>(&box, 1));
        }
    write_text((fs::path(a.out) / "annotations.txt").string(), list);
    write_text((fs::path(a.out) / "boxes.txt").string(), boxes);
    return 0;
  }
  if (a.kind == "instances") {
    if (a.model.empty()) throw Error(ErrorCode::invalid_argument, "--kind instances needs --model");
    const auto ensemble = load_model_file(a.model);
    SynthInstanceOptions io;
    io.occlusion_rate = a.occlusion_rate;
    io.clutter = a.clutter;
    io.noise = a.noise;
    io.adversarial = a.adversarial;
    std::string text;
    for (int k = 0; k < a.count; ++k)
      text += instance_json(synth_generate(ensemble, io, mode_seed(a.seed, k))) + "\n";
    write_text(a.out, text);
    return 0;
  }
  throw Error(ErrorCode::invalid_argument, "unknown synth kind '" + a.kind + "'");
}

struct AblateArgs {
  std::string model, out;
  std::vector<std::string> strategies = {"uniform", "confidence", "greedy"};
  std::vector<int> budgets = {2000};
  int instances = 50;
  double occlusion_rate = 0.0;
  int clutter = 3;
  double noise = 1.0;
  bool adversarial = false;
  int threads = 1;
  std::uint64_t seed = 0;
};

int run_ablate(const AblateArgs& a) {
  const auto ensemble = load_model_file(a.model);
  AblationOptions opts;
  opts.strategies = parse_strategies(a.strategies);
  opts.budgets = a.budgets;
  opts.instances = a.instances;
  opts.instance.occlusion_rate = a.occlusion_rate;
  opts.instance.clutter = a.clutter;
  opts.instance.noise = a.noise;
  opts.instance.adversarial = a.adversarial;
  opts.fit.refine = false;
  opts.seed = a.seed;
  opts.threads = a.threads;
  const auto csv = ablation_csv(run_ablation(ensemble, opts));
  if (a.out.empty())
    std::cout << csv;
  else
    write_text(a.out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occlusion-robust facial landmark alignment"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model container from annotated images");
  t->add_option("--annotations", train.annotations, "List of 'image pts pose expression' lines")
      ->required()->check(CLI::ExistingFile);
  t->add_option("--out", train.out, "Output model container")->required();
  t->add_option("--rounds", train.rounds, "Boosting rounds per detector")->capture_default_str();
  t->add_option("--sharing", train.sharing, "Detector pooling: mode, pose or all")->capture_default_str();
  t->add_option("--negatives", train.negatives, "Negatives per positive")->capture_default_str();
  t->add_option("--samples-per-contour", train.samples_per_contour)->capture_default_str();
  t->add_flag("--all-point-gpa", train.all_point_gpa, "Normalize on every landmark");
  t->add_option("--threads", train.threads)->capture_default_str();
  t->add_option("--seed", train.seed)->capture_default_str();

  AlignArgs align;
  auto* al = app.add_subcommand("align", "Align faces given face boxes");
  al->add_option("--model", align.model)->required()->check(CLI::ExistingFile);
  al->add_option("--boxes", align.boxes, "Lines of 'image x y w h'")->required()->check(CLI::ExistingFile);
  al->add_option("--images", align.images, "Directory relative image paths resolve against");
  al->add_option("--out", align.out, "Result records, one JSON object per line")->required();
  al->add_option("--strategy", align.strategy)->check(CLI::IsMember({"uniform", "confidence", "greedy"}))
      ->capture_default_str();
  al->add_option("--max-iter", align.max_iter)->check(CLI::PositiveNumber)->capture_default_str();
  al->add_flag("--no-refine", align.no_refine);
  al->add_option("--threads", align.threads)->capture_default_str();
  al->add_option("--seed", align.seed)->capture_default_str();

  EvalArgs eval;
  auto* ev = app.add_subcommand("eval", "Score result records against ground truth");
  ev->add_option("--results", eval.results)->required()->check(CLI::ExistingFile);
  ev->add_option("--annotations", eval.annotations)->required()->check(CLI::ExistingFile);
  ev->add_option("--subset", eval.subset, "68, or 51 without the jawline")->check(CLI::IsMember({68, 51}))
      ->capture_default_str();
  ev->add_option("--out", eval.out, "Report JSON (stdout when omitted)");
  ev->add_option("--ced", eval.ced, "CED curve samples as CSV");

  SynthArgs synth;
  auto* sy = app.add_subcommand("synth", "Generate rendered faces or candidate-level instances");
  sy->add_option("--kind", synth.kind)->check(CLI::IsMember({"faces", "instances"}))->capture_default_str();
  sy->add_option("--model", synth.model, "Model container (instances)");
  sy->add_option("--out", synth.out, "Directory (faces) or JSONL file (instances)")->required();
  sy->add_option("--per-mode", synth.per_mode, "Faces per pose and expression")->capture_default_str();
  sy->add_option("--count", synth.count, "Instances")->capture_default_str();
  sy->add_option("--occlusion-rate", synth.occlusion_rate)->capture_default_str();
  sy->add_option("--clutter", synth.clutter)->capture_default_str();
  sy->add_option("--noise", synth.noise, "Candidate noise, pixels")->capture_default_str();
  sy->add_flag("--adversarial", synth.adversarial);
  sy->add_option("--occluder", synth.occluder, "Probability of an occluding patch per face")->capture_default_str();
  sy->add_option("--seed", synth.seed)->capture_default_str();

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "Compare hypothesis sampling strategies");
  ab->add_option("--model", ablate.model)->required()->check(CLI::ExistingFile);
  ab->add_option("--out", ablate.out, "CSV (stdout when omitted)");
  ab->add_option("--strategy", ablate.strategies)->check(CLI::IsMember({"uniform", "confidence", "greedy"}))
      ->capture_default_str();
  ab->add_option("--max-iter", ablate.budgets, "Hypothesis budgets")->check(CLI::PositiveNumber)->capture_default_str();
  ab->add_option("--instances", ablate.instances)->capture_default_str();
  ab->add_option("--occlusion-rate", ablate.occlusion_rate)->capture_default_str();
  ab->add_option("--clutter", ablate.clutter)->capture_default_str();
  ab->add_option("--noise", ablate.noise)->capture_default_str();
  ab->add_flag("--adversarial", ablate.adversarial);
  ab->add_option("--threads", ablate.threads)->capture_default_str();
  ab->add_option("--seed", ablate.seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (t->parsed()) return run_train(train);
    if (al->parsed()) return run_align(align);
    if (ev->parsed()) return run_eval(eval);
    if (sy->parsed()) return run_synth(synth);
    if (ab->parsed()) return run_ablate(ablate);
  } catch (const std::exception& e) {
    std::cerr << "erclm: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
