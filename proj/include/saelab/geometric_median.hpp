#pragma once

#include <cmath>
#include <cstddef>

#include <Eigen/Dense>

#include "saelab/error.hpp"

namespace saelab {

struct GeometricMedianOptions {
  int max_iterations = 100;
  double tolerance = 1e-6;
  // Distances below this count as the iterate sitting on a sample.
  double coincidence_radius = 1e-12;
};

// Weiszfeld iteration for argmin_m sum_i ||x_i - m||_2 over the columns of
// `samples`, started from the centroid. When an iterate lands on a sample the
// Vardi-Zhang correction is applied: the sample is kept if it is optimal,
// otherwise the iterate steps off it along the descent direction.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> geometric_median(
    const Eigen::MatrixBase<Derived>& samples, const GeometricMedianOptions& opt = {}) {
  using Scalar = typename Derived::Scalar;
  using Vec = Eigen::VectorXd;
  const Eigen::Index d = samples.rows();
  const Eigen::Index m = samples.cols();
  if (m == 0) fail(ErrorCode::EmptyInput, "geometric_median: no samples");

  const Eigen::MatrixXd pts = samples.template cast<double>();
  Vec y = pts.rowwise().mean();
  if (m == 1) return pts.col(0).template cast<Scalar>();

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    Vec numer = Vec::Zero(d);
    Vec pull = Vec::Zero(d);  // sum of unit vectors towards non-coincident samples
    double denom = 0.0;
    double coincident = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Vec diff = pts.col(i) - y;
      const double dist = diff.norm();
      if (dist <= opt.coincidence_radius) {
        coincident += 1.0;
        continue;
      }
      numer += pts.col(i) / dist;
      pull += diff / dist;
      denom += 1.0 / dist;
    }
    if (denom == 0.0) break;  // every sample coincides with y

    Vec next = numer / denom;
    if (coincident > 0.0) {
      const double r = pull.norm();
      if (r <= coincident) break;  // y is a sample and satisfies optimality
      const double keep = coincident / r;
      next = (1.0 - keep) * next + keep * y;
    }
    const double step = (next - y).norm();
    y = std::move(next);
    if (step <= opt.tolerance) break;
  }
  return y.template cast<Scalar>();
}

}  // namespace saelab
