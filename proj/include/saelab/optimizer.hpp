#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace saelab {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a single dense parameter block.
template <typename Scalar>
class Adam {
 public:
  using Block = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Adam() = default;
  Adam(Eigen::Index rows, Eigen::Index cols, AdamOptions opt)
      : opt_(opt), m_(Block::Zero(rows, cols)), v_(Block::Zero(rows, cols)) {}

  template <typename P, typename G>
  void step(Eigen::MatrixBase<P>& param, const Eigen::MatrixBase<G>& grad) {
    ++t_;
    const Scalar b1 = static_cast<Scalar>(opt_.beta1);
    const Scalar b2 = static_cast<Scalar>(opt_.beta2);
    m_.array() = b1 * m_.array() + (Scalar(1) - b1) * grad.array();
    v_.array() = b2 * v_.array() + (Scalar(1) - b2) * grad.array().square();
    const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(opt_.beta1, t_));
    const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(opt_.beta2, t_));
    const Scalar lr = static_cast<Scalar>(opt_.learning_rate);
    const Scalar eps = static_cast<Scalar>(opt_.epsilon);
    param.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  }

  long steps() const { return t_; }

 private:
  AdamOptions opt_;
  Block m_;
  Block v_;
  long t_ = 0;
};

// Scales every block in place so their joint L2 norm is at most `max_norm`.
// Returns the norm before clipping.
template <typename Scalar, typename... Blocks>
double clip_global_norm(double max_norm, Blocks&... blocks) {
  const double norm = std::sqrt((0.0 + ... + blocks.template cast<double>().squaredNorm()));
  if (norm > max_norm && norm > 0.0) {
    const Scalar scale = static_cast<Scalar>(max_norm / norm);
    ((blocks *= scale), ...);
  }
  return norm;
}

}  // namespace saelab
