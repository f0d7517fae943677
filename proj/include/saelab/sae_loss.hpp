#pragma once

// Batch forward pass, loss and analytic gradients of the TopK/AuxK objective
//
//   L = mean_i [ ||x_i - x^_i||^2 + alpha * ||e~_i - e^_aux,i||^2 ] / C_MSE
//
// where e~ = x~ - W_dec z is the residual in normalized space and e^_aux is
// the reconstruction of that residual from the top-k_aux pre-activations of
// dead features (ReLU applied after selection). Since x - x^ = s * e~ with
// s the saved norm, the first term equals s^2 ||e~||^2.
//
// Gradients follow the full chain rule through the per-sample centering and
// norm. The TopK supports are held fixed (straight-through on the support) and
// ReLU contributes zero gradient where the selected pre-activation is <= 0.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "saelab/error.hpp"
#include "saelab/sae.hpp"

namespace saelab {

struct LossTerms {
  double total = 0.0;
  double mse_term = 0.0;  // ||x - x^||^2 / C_MSE, batch mean
  double aux_term = 0.0;  // alpha * ||e~ - e^_aux||^2 / C_MSE, batch mean
};

template <typename Scalar>
struct Gradients {
  Mat<Scalar> encoder;
  Mat<Scalar> decoder;
  Vec<Scalar> pre_bias;

  double norm() const {
    return std::sqrt(encoder.template cast<double>().squaredNorm() +
                     decoder.template cast<double>().squaredNorm() +
                     pre_bias.template cast<double>().squaredNorm());
  }
};

template <typename Scalar>
struct ForwardPass {
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  Mat<Scalar> normalized;  // d x B
  Row norms;               // saved L2 norm per sample
  Row weights;             // 1 for usable samples, 0 for degenerate ones
  Mat<Scalar> pre;         // n x B
  Mat<Scalar> z;           // n x B
  Mat<Scalar> z_aux;       // n x B, empty when no feature is dead
  Mat<Scalar> residual;    // e~, d x B
  Mat<Scalar> aux_error;   // e~ - e^_aux, d x B
  Eigen::Index used = 0;
  LossTerms terms;
};

struct LossOptions {
  double c_mse = 1.0;
  double aux_coefficient = 1.0 / 32.0;
};

// `batch` holds one raw activation per column. `dead` may be empty (no dead
// features) or hold one flag per feature.
template <typename Scalar, typename Derived>
ForwardPass<Scalar> forward(const SaeModel<Scalar>& model, const Eigen::MatrixBase<Derived>& batch,
                            const std::vector<bool>& dead, const LossOptions& opt) {
  if (!(opt.c_mse > 0.0)) fail(ErrorCode::InvalidNormalizer, "C_MSE must be positive");
  if (batch.rows() != model.decoder.rows()) {
    fail(ErrorCode::DimensionMismatch, "batch dimension differs from model");
  }
  const std::size_t n = model.num_features();
  if (!dead.empty() && dead.size() != n) {
    fail(ErrorCode::DimensionMismatch, "dead mask size differs from feature count");
  }

  ForwardPass<Scalar> fp;
  const Eigen::Index cols = batch.cols();
  fp.normalized = batch.template cast<Scalar>();
  fp.normalized.colwise() -= model.pre_bias;
  const typename ForwardPass<Scalar>::Row mu = fp.normalized.colwise().mean();
  fp.normalized.rowwise() -= mu;
  fp.norms = fp.normalized.colwise().norm();
  fp.weights = ForwardPass<Scalar>::Row::Zero(cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    if (fp.norms(c) > Scalar(0)) {
      fp.normalized.col(c) /= fp.norms(c);
      fp.weights(c) = Scalar(1);
      ++fp.used;
    } else {
      fp.normalized.col(c).setZero();
    }
  }

  fp.pre = model.encoder * fp.normalized;
  fp.z = Mat<Scalar>::Zero(static_cast<Eigen::Index>(n), cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    if (fp.weights(c) == Scalar(0)) continue;
    auto col = fp.z.col(c);
    topk_relu<Scalar>(fp.pre.col(c), model.k, col, [](std::size_t) { return true; });
  }
  fp.residual = fp.normalized - model.decoder * fp.z;

  bool any_dead = false;
  for (bool b : dead) any_dead = any_dead || b;
  const double inv = fp.used > 0 ? 1.0 / (static_cast<double>(fp.used) * opt.c_mse) : 0.0;
  const Eigen::Array<double, 1, Eigen::Dynamic> scaled =
      fp.norms.template cast<double>().array().square() *
      fp.residual.template cast<double>().colwise().squaredNorm().array();
  fp.terms.mse_term = scaled.sum() * inv;

  if (any_dead && model.k_aux > 0) {
    fp.z_aux = Mat<Scalar>::Zero(static_cast<Eigen::Index>(n), cols);
    const auto is_dead = [&dead](std::size_t j) { return static_cast<bool>(dead[j]); };
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (fp.weights(c) == Scalar(0)) continue;
      auto col = fp.z_aux.col(c);
      topk_relu<Scalar>(fp.pre.col(c), model.k_aux, col, is_dead);
    }
    fp.aux_error = fp.residual - model.decoder * fp.z_aux;
    fp.aux_error.array().rowwise() *= fp.weights.array();
    fp.terms.aux_term = opt.aux_coefficient *
                        fp.aux_error.template cast<double>().squaredNorm() * inv;
  }
  fp.terms.total = fp.terms.mse_term + fp.terms.aux_term;
  return fp;
}

template <typename Scalar, typename Derived>
LossTerms loss(const SaeModel<Scalar>& model, const Eigen::MatrixBase<Derived>& batch,
               const std::vector<bool>& dead, const LossOptions& opt) {
  return forward(model, batch, dead, opt).terms;
}

template <typename Scalar>
Gradients<Scalar> backward(const SaeModel<Scalar>& model, const ForwardPass<Scalar>& fp,
                           const LossOptions& opt) {
  Gradients<Scalar> g;
  const Eigen::Index d = model.decoder.rows();
  const Eigen::Index cols = fp.z.cols();
  g.encoder = Mat<Scalar>::Zero(model.encoder.rows(), model.encoder.cols());
  g.decoder = Mat<Scalar>::Zero(d, model.decoder.cols());
  g.pre_bias = Vec<Scalar>::Zero(d);
  if (fp.used == 0) return g;

  const Scalar scale = static_cast<Scalar>(2.0 / (static_cast<double>(fp.used) * opt.c_mse));
  const Scalar alpha = static_cast<Scalar>(opt.aux_coefficient);
  const bool has_aux = fp.z_aux.size() > 0;

  // dL/de~ and dL/de^_aux, one column per sample.
  Mat<Scalar> grad_residual = fp.residual;
  grad_residual.array().rowwise() *= (fp.norms.array().square() * fp.weights.array());
  if (has_aux) grad_residual += alpha * fp.aux_error;
  grad_residual *= scale;

  g.decoder.noalias() = -grad_residual * fp.z.transpose();
  Mat<Scalar> grad_pre = -(model.decoder.transpose() * grad_residual);
  grad_pre = (fp.z.array() > Scalar(0)).select(grad_pre, Scalar(0));

  if (has_aux) {
    const Mat<Scalar> grad_aux_recon = -(scale * alpha) * fp.aux_error;
    g.decoder.noalias() += grad_aux_recon * fp.z_aux.transpose();
    Mat<Scalar> grad_pre_aux = model.decoder.transpose() * grad_aux_recon;
    grad_pre += (fp.z_aux.array() > Scalar(0)).select(grad_pre_aux, Scalar(0));
  }

  g.encoder.noalias() = grad_pre * fp.normalized.transpose();

  // Back through x~ = r / ||r||, r = c - mean(c), c = x - b_pre.
  Mat<Scalar> grad_normalized = grad_residual;
  grad_normalized.noalias() += model.encoder.transpose() * grad_pre;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> radial =
      (fp.normalized.array() * grad_normalized.array()).colwise().sum();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> grad_norm =
      scale * fp.norms.array() * fp.residual.colwise().squaredNorm().array() *
      fp.weights.array();
  Mat<Scalar> grad_r = grad_normalized - fp.normalized * radial.asDiagonal();
  for (Eigen::Index c = 0; c < cols; ++c) {
    if (fp.weights(c) == Scalar(0)) {
      grad_r.col(c).setZero();
      continue;
    }
    grad_r.col(c) /= fp.norms(c);
    grad_r.col(c) += grad_norm(c) * fp.normalized.col(c);
  }
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> col_mean = grad_r.colwise().mean();
  grad_r.rowwise() -= col_mean;
  g.pre_bias = -grad_r.rowwise().sum();
  return g;
}

// Removes from each decoder-gradient column its component along the matching
// (unit-norm) decoder column.
template <typename Scalar>
Mat<Scalar> project_decoder_gradient(const Mat<Scalar>& decoder, const Mat<Scalar>& grad) {
  if (decoder.rows() != grad.rows() || decoder.cols() != grad.cols()) {
    fail(ErrorCode::DimensionMismatch, "decoder gradient shape differs from decoder");
  }
  Mat<Scalar> out = grad;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> along =
      (decoder.array() * grad.array()).colwise().sum();
  out -= decoder * along.asDiagonal();
  return out;
}

}  // namespace saelab
