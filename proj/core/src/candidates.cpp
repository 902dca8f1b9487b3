#include "erclm/appearance.hpp"

#include "erclm/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace erclm {

Candidate gaussian_candidate(const Point& mean, const Eigen::Matrix2d& covariance, double confidence) {
  Candidate c;
  c.mean = mean;
  c.covariance = covariance;
  c.confidence = confidence;
  c.quadratic.A = covariance.inverse();
  c.quadratic.b = c.quadratic.A * mean;
  c.quadratic.c = mean.dot(c.quadratic.b);
  c.quadratic.origin = Point::Zero();
  return c;
}

QuadraticFit fit_quadratic(std::span<const Point> positions, std::span<const double> inverted_scores,
                           const Point& origin) {
  if (positions.size() != inverted_scores.size()) throw DimensionError("positions and scores differ in length");
  if (positions.size() < 6) throw InsufficientDataError("a quadratic fit needs at least 6 samples");
  const auto n = static_cast<Eigen::Index>(positions.size());
  Eigen::MatrixXd M(n, 6);
  Eigen::VectorXd y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Point d = positions[static_cast<std::size_t>(k)] - origin;
    M.row(k) << d.x() * d.x(), 2 * d.x() * d.y(), d.y() * d.y(), -2 * d.x(), -2 * d.y(), 1.0;
    y(k) = inverted_scores[static_cast<std::size_t>(k)];
  }
  const Eigen::VectorXd sol = M.completeOrthogonalDecomposition().solve(y);
  QuadraticFit fit;
  fit.origin = origin;
  Eigen::Matrix2d A;
  A << sol(0), sol(1), sol(1), sol(2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(A);
  const Eigen::Vector2d ev = es.eigenvalues().cwiseMax(0.0);
  fit.A = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  fit.A = 0.5 * (fit.A + fit.A.transpose());
  fit.b = Eigen::Vector2d(sol(3), sol(4));
  fit.c = sol(5);
  return fit;
}

namespace {

struct Cell {
  Point position;
  double score;
  double weight;
};

Eigen::Matrix2d pseudo_inverse(const Eigen::Matrix2d& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(A);
  const double tol = 1e-12 * std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  Eigen::Vector2d inv = Eigen::Vector2d::Zero();
  for (int k = 0; k < 2; ++k)
    if (es.eigenvalues()(k) > tol) inv(k) = 1.0 / es.eigenvalues()(k);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

CandidateList extract_candidates(const ResponseMap& map, const CandidateExtractionOptions& options) {
  const double thr = options.threshold;
  std::vector<Cell> cells;
  for (int r = 0; r < map.rows; ++r)
    for (int c = 0; c < map.cols; ++c) {
      const double s = map.at(c, r);
      if (!std::isfinite(s)) throw DimensionError("response map contains non-finite scores");
      if (s > thr) cells.push_back({map.position(c, r), s, s - thr});
    }
  if (cells.empty()) return {};

  // flat-kernel mean shift on the weighted cells, neighbours looked up on the grid
  const double h = options.bandwidth * map.step;
  const double h2 = h * h;
  std::vector<int> index(static_cast<std::size_t>(map.cols) * map.rows, -1);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Point g = (cells[i].position - map.origin) / map.step;
    index[static_cast<std::size_t>(std::lround(g.y())) * map.cols + static_cast<std::size_t>(std::lround(g.x()))] =
        static_cast<int>(i);
  }
  const int reach = static_cast<int>(std::ceil(options.bandwidth)) + 1;
  std::vector<Point> modes(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    Point y = cells[i].position;
    for (int it = 0; it < 200; ++it) {
      const Point g = (y - map.origin) / map.step;
      const int gc = static_cast<int>(std::lround(g.x())), gr = static_cast<int>(std::lround(g.y()));
      Point acc = Point::Zero();
      double wsum = 0.0;
      for (int r = std::max(0, gr - reach); r <= std::min(map.rows - 1, gr + reach); ++r)
        for (int c = std::max(0, gc - reach); c <= std::min(map.cols - 1, gc + reach); ++c) {
          const int k = index[static_cast<std::size_t>(r) * map.cols + static_cast<std::size_t>(c)];
          if (k < 0) continue;
          const auto& cell = cells[static_cast<std::size_t>(k)];
          if ((cell.position - y).squaredNorm() <= h2) {
            acc += cell.weight * cell.position;
            wsum += cell.weight;
          }
        }
      if (wsum <= 0) break;
      const Point next = acc / wsum;
      const double shift = (next - y).norm();
      y = next;
      if (shift < 1e-4 * map.step) break;
    }
    modes[i] = y;
  }

  // merge modes closer than h/2; cells inherit their mode's segment
  std::vector<Point> centers;
  std::vector<int> segment(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    int found = -1;
    for (std::size_t k = 0; k < centers.size(); ++k)
      if ((centers[k] - modes[i]).norm() < h / 2) {
        found = static_cast<int>(k);
        break;
      }
    if (found < 0) {
      found = static_cast<int>(centers.size());
      centers.push_back(modes[i]);
    }
    segment[i] = found;
  }

  // A flat kernel on a lattice stalls on gentle slopes. A segment whose best cell
  // has a strictly higher neighbour in another segment is not a peak of its own
  // and joins the segment it climbs into.
  std::vector<int> parent(centers.size());
  std::iota(parent.begin(), parent.end(), 0);
  const auto root = [&](int k) {
    while (parent[static_cast<std::size_t>(k)] != k) k = parent[static_cast<std::size_t>(k)];
    return k;
  };
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<int> best(centers.size(), -1);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      auto& b = best[static_cast<std::size_t>(root(segment[i]))];
      if (b < 0 || cells[i].score > cells[static_cast<std::size_t>(b)].score) b = static_cast<int>(i);
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const int top = best[k];
      if (top < 0) continue;
      const Cell& cell = cells[static_cast<std::size_t>(top)];
      const Point g = (cell.position - map.origin) / map.step;
      const int gc = static_cast<int>(std::lround(g.x())), gr = static_cast<int>(std::lround(g.y()));
      int climb = -1;
      for (int r = std::max(0, gr - 1); r <= std::min(map.rows - 1, gr + 1); ++r)
        for (int c = std::max(0, gc - 1); c <= std::min(map.cols - 1, gc + 1); ++c) {
          const int n = index[static_cast<std::size_t>(r) * map.cols + static_cast<std::size_t>(c)];
          if (n < 0 || cells[static_cast<std::size_t>(n)].score <= cell.score) continue;
          if (climb < 0 || cells[static_cast<std::size_t>(n)].score > cells[static_cast<std::size_t>(climb)].score)
            climb = n;
        }
      if (climb < 0) continue;
      const int into = root(segment[static_cast<std::size_t>(climb)]);
      if (into == static_cast<int>(k)) continue;
      parent[k] = into;
      changed = true;
    }
  }
  for (auto& sgm : segment) sgm = root(sgm);

  CandidateList out;
  for (std::size_t k = 0; k < centers.size(); ++k) {
    if (root(static_cast<int>(k)) != static_cast<int>(k)) continue;
    std::vector<Point> pos;
    std::vector<double> inv;
    double mass = 0.0, peak = -std::numeric_limits<double>::infinity(), floor = std::numeric_limits<double>::infinity();
    Point peak_pos = Point::Zero(), centroid = Point::Zero();
    Point lo = Point::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (segment[i] != static_cast<int>(k)) continue;
      pos.push_back(cells[i].position);
      inv.push_back(-cells[i].score);
      mass += cells[i].weight;
      floor = std::min(floor, cells[i].score);
      centroid += cells[i].weight * cells[i].position;
      lo = lo.cwiseMin(cells[i].position);
      hi = hi.cwiseMax(cells[i].position);
      if (cells[i].score > peak) {
        peak = cells[i].score;
        peak_pos = cells[i].position;
      }
    }
    centroid /= mass;
    // a plateau has no mode to localize
    if (pos.size() > 1 && peak - floor <= 1e-9 * std::max(1.0, std::abs(peak))) continue;

    Candidate cand;
    cand.confidence = mass * map.step * map.step;
    const double depth = peak - thr;
    bool fitted = false;
    if (static_cast<int>(pos.size()) >= std::max(options.min_fit_cells, 6)) {
      QuadraticFit q = fit_quadratic(pos, inv, peak_pos);
      const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(q.A);
      if (es.eigenvalues()(0) > 1e-12 * std::max(es.eigenvalues()(1), 1e-300) && es.eigenvalues()(1) > 0) {
        const Point mean = q.origin + pseudo_inverse(q.A) * q.b;
        const Point slack = Point::Constant(map.step);
        if ((mean.array() >= (lo - slack).array()).all() && (mean.array() <= (hi + slack).array()).all()) {
          cand.mean = mean;
          cand.quadratic = q;
          const double ridge = 1e-9 * q.A.trace();
          cand.covariance = depth / 4.0 * (q.A + ridge * Eigen::Matrix2d::Identity()).inverse();
          fitted = true;
        }
      }
    }
    if (!fitted) {
      // too few cells or a degenerate bowl: isotropic bowl at the weighted centroid
      const double a = depth / (map.step * map.step);
      cand.mean = centroid;
      cand.quadratic.origin = peak_pos;
      cand.quadratic.A = a * Eigen::Matrix2d::Identity();
      cand.quadratic.b = cand.quadratic.A * (centroid - peak_pos);
      cand.quadratic.c = -peak;
      cand.covariance = 0.25 * map.step * map.step * Eigen::Matrix2d::Identity();
    }
    out.push_back(std::move(cand));
  }
  return out;
}

CandidateList merge_expression_candidates(std::span<const CandidateList> lists, double radius) {
  CandidateList all;
  for (const auto& l : lists) all.insert(all.end(), l.begin(), l.end());
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return all[a].confidence > all[b].confidence; });
  std::vector<bool> keep(all.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool dup = false;
    for (std::size_t k : kept)
      if ((all[k].mean - all[i].mean).norm() <= radius) {
        dup = true;
        break;
      }
    if (!dup) {
      kept.push_back(i);
      keep[i] = true;
    }
  }
  CandidateList out;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (keep[i]) out.push_back(all[i]);
  return out;
}

}  // namespace erclm
