#pragma once

#include "erclm/ensemble.hpp"
#include "erclm/synthetic.hpp"
#include "erclm/training.hpp"

#include <Eigen/Core>
#include <Eigen/QR>

#include <random>
#include <vector>

namespace erclm::testing {

inline Shape random_shape(std::size_t n, std::mt19937_64& rng, double spread = 10.0) {
  std::normal_distribution<double> g(0.0, spread);
  Shape s;
  for (std::size_t i = 0; i < n; ++i) s.points.emplace_back(g(rng), g(rng));
  return s;
}

inline Eigen::Matrix2d random_spd(std::mt19937_64& rng, double floor = 0.1) {
  std::normal_distribution<double> g;
  Eigen::Matrix2d m;
  m << g(rng), g(rng), g(rng), g(rng);
  return m * m.transpose() + floor * Eigen::Matrix2d::Identity();
}

/// Random orthonormal 2n x d basis.
inline Eigen::MatrixXd random_basis(std::size_t n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(2 * n), d);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  return qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), d);
}

/// Shape-only ensemble over the synthetic faces: all 10 modes, no detectors.
inline const ModelEnsemble& shape_ensemble() {
  static const ModelEnsemble e = [] {
    ModelEnsemble out;
    const auto corpus = synthetic_shape_corpus(40, {}, 7);
    const auto scheme = LandmarkScheme::frontal68();
    for (std::size_t k = 0; k < corpus.size(); k += 40) {
      std::vector<Shape> shapes;
      for (std::size_t j = k; j < k + 40; ++j) shapes.push_back(corpus[j].shape);
      ShapeTrainingOptions opts;
      opts.seed = k;
      out.modes.push_back(train_mode_shape(shapes, corpus[k].mode, scheme, opts));
    }
    return out;
  }();
  return e;
}

}  // namespace erclm::testing
