#pragma once

#include "erclm/appearance.hpp"
#include "erclm/ensemble.hpp"
#include "erclm/image.hpp"
#include "erclm/shape_model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace erclm {

struct ShapeTrainingOptions {
  PdmTrainingOptions pdm;
  bool subset_anchors = true;   ///< normalize on the scheme anchors instead of every point
  bool slide_contours = true;   ///< resample contours before training the dense model
  int samples_per_contour = 7;
  int exemplar_count = 8;
  double exemplar_percentile = 0.95;
  double search_margin = 0.03;  ///< face-box units added to the observed spread
  std::uint64_t seed = 0;
};

/// Shape side of one mode from image-frame training shapes: normalization, PDM,
/// dense groups, exemplars and face-box statistics. Detector bindings stay empty.
ModeModel train_mode_shape(std::span<const Shape> shapes, ModeId id, const LandmarkScheme& scheme,
                           const ShapeTrainingOptions& options = {});

struct TrainingSample {
  GrayImage image;
  Shape shape;  ///< image pixels
  ModeId mode;
};

/// Which modes pool their samples into one detector per landmark.
enum class DetectorSharing {
  mode,  ///< one detector set per (pose, expression)
  pose,  ///< one set per pose
  all,   ///< one set for the whole ensemble
};

const char* to_string(DetectorSharing sharing) noexcept;
DetectorSharing parse_detector_sharing(const std::string& name);

struct DetectorTrainingOptions {
  AdaboostOptions boost;
  HarvestOptions harvest;
  DetectorSharing sharing = DetectorSharing::all;
  bool rotation_augment = true;   ///< extra positives from +-10 degree rotations
  bool share_expressions = true;  ///< with per-mode sets, a mode also uses its pose's other expression sets
  int max_positives = 0;          ///< per detector, 0 keeps all
  int threads = 1;
  std::uint64_t seed = 0;
};

struct EnsembleTrainingOptions {
  ShapeTrainingOptions shape;
  DetectorTrainingOptions detectors;
};

/// One detector per (detector group, landmark), trained on the group's samples.
ModelEnsemble train_ensemble(std::span<const TrainingSample> samples, const LandmarkScheme& scheme,
                             const EnsembleTrainingOptions& options = {},
                             std::vector<AdaboostReport>* reports = nullptr);

}  // namespace erclm
