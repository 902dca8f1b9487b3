#pragma once

#include "erclm/appearance.hpp"
#include "erclm/shape_model.hpp"

#include <map>
#include <string>
#include <vector>

namespace erclm {

/// One (pose, expression) cell: dense shape model, exemplars, detector bindings and
/// where its landmarks sit relative to a face box.
struct ModeModel {
  ModeId id;
  std::string scheme;  ///< landmark scheme name
  DensePdm shape;
  ExemplarSet exemplars;
  /// Per landmark, indices into ModelEnsemble::detectors; several entries are merged.
  std::vector<std::vector<int>> detectors;
  /// Mean landmark positions in face-box units: (p - box corner) / box width.
  Shape box_mean;
  /// Per landmark search half-size in face-box units.
  std::vector<double> search_radius;

  std::size_t landmark_count() const noexcept { return shape.base.landmark_count(); }
};

struct ModelEnsemble {
  std::vector<ModeModel> modes;
  std::vector<AdaboostDetector> detectors;
  /// Free-form settings recorded at training time.
  std::map<std::string, std::string> config;

  int pose_count() const;
  /// Number of expression modes of each pose, indexed by pose.
  std::vector<int> expressions_per_pose() const;
  void validate() const;
};

/// Face box convention shared by training and synthesis: the landmark bounding box
/// grown by `margin` times its width on every side, made square.
Box face_box_from_shape(const Shape& shape, double margin = 0.1);

/// Search region of landmark `i` of `mode` for a face box.
Box search_region(const ModeModel& mode, std::size_t landmark, const Box& face);

}  // namespace erclm
