#pragma once

#include "erclm/appearance.hpp"
#include "erclm/ensemble.hpp"
#include "erclm/geometry.hpp"
#include "erclm/image.hpp"
#include "erclm/shape_model.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace erclm {

/// Parametric 68-point face (frontal scheme ordering) seen under yaw.
struct SyntheticFaceOptions {
  std::vector<double> yaw_degrees = {-40, -20, 0, 20, 40};  ///< one entry per pose
  int expressions = 2;          ///< 0 neutral, 1 open smile
  double yaw_jitter = 4.0;      ///< degrees, uniform within the pose bin
  double identity_sigma = 0.04; ///< relative spread of face proportions
  double mouth_sigma = 0.02;    ///< mouth opening, width and corner lift
  double contour_slide = 0.15;  ///< jaw landmark jitter along the contour, in spacings
  double point_noise = 0.004;   ///< isotropic annotation noise, template units

  int pose_count() const { return static_cast<int>(yaw_degrees.size()); }
};

/// 3-D template of one expression; x right, y down, z towards the camera.
std::vector<Eigen::Vector3d> face_template(int expression);

/// Noise-free projection of the template at the pose's nominal yaw.
Shape mean_face_shape(ModeId mode, const SyntheticFaceOptions& options = {});

/// Random identity, expression detail and annotation noise for one face.
Shape sample_face_shape(ModeId mode, const SyntheticFaceOptions& options, std::mt19937_64& rng);

struct LabeledShape {
  ModeId mode;
  Shape shape;
};

/// `per_mode` shapes of every (pose, expression), in mode order.
std::vector<LabeledShape> synthetic_shape_corpus(int per_mode, const SyntheticFaceOptions& options,
                                                 std::uint64_t seed);

struct RenderOptions {
  int image_size = 256;
  double face_width = 150.0;     ///< nominal face-box width, pixels
  double scale_jitter = 0.08;    ///< relative
  double max_roll_degrees = 5.0;
  double pixel_noise = 3.0;
  double box_jitter = 0.02;      ///< face-box corner jitter relative to its width
  double occluder_probability = 0.0;
  double occluder_size = 0.45;   ///< relative to the face box
};

struct RenderedFace {
  GrayImage image;
  ModeId mode;
  Shape shape;                       ///< ground truth, image pixels
  std::vector<std::uint8_t> occluded;  ///< per landmark
  Box face;                          ///< jittered face box
};

/// Draws the face structure (contours, parts and landmark-specific blobs) over a
/// textured background. Landmarks inside `occluder` (when non-empty) are covered.
GrayImage render_face_image(const Shape& shape, int width, int height, double face_width, const Box& occluder,
                            double pixel_noise, std::mt19937_64& rng);

RenderedFace render_synthetic_face(ModeId mode, const SyntheticFaceOptions& face, const RenderOptions& render,
                                   std::mt19937_64& rng);

struct SynthInstanceOptions {
  double occlusion_rate = 0.0;  ///< fraction of landmarks without a true candidate, < 0.5
  int clutter = 0;              ///< outlier candidates per landmark
  double noise = 0.0;           ///< true-candidate perturbation, image pixels
  bool adversarial = false;     ///< outliers get the highest confidences
  double face_width = 150.0;    ///< image pixels per face-box width
  double clutter_min = 20.0;    ///< Mahalanobis distance from every dense element
  double clutter_max = 40.0;
  int mode = -1;                ///< fixed mode index, -1 draws one
};

/// Candidate-level test instance with everything that was planted.
struct SyntheticInstance {
  std::uint64_t seed = 0;
  int mode_index = 0;
  ModeId mode;
  SimilarityTransform transform;  ///< model -> image
  Eigen::VectorXd q;
  Shape shape;                    ///< true landmarks, image frame
  std::vector<std::uint8_t> visible;
  std::vector<int> true_candidate;  ///< per landmark, -1 when occluded
  CandidateSet candidates;
};

/// Draws a mode, a pose and q (Gaussian per component, truncated to +-3 sqrt(lambda)),
/// then plants candidates. Exactly floor(rate * N) landmarks are occluded.
/// Throws InvalidArgument-coded Error when rate >= 0.5.
SyntheticInstance synth_generate(const ModelEnsemble& ensemble, const SynthInstanceOptions& options,
                                 std::uint64_t seed);
SyntheticInstance synth_generate(const ModeModel& mode, int mode_index, const SynthInstanceOptions& options,
                                 std::uint64_t seed);

/// Exact JSON rendering (shortest round-trip doubles), one line.
std::string instance_json(const SyntheticInstance& instance);

/// Mean over landmarks of the Mahalanobis distance, under Delta_i in the model frame
/// of `transform`, between `fitted` and `truth` (both image frame).
double mahalanobis_shape_error(const PointDistributionModel& pdm, const SimilarityTransform& transform,
                               const Shape& fitted, const Shape& truth);

}  // namespace erclm
