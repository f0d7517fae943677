#pragma once

// TopK sparse autoencoder: per-sample normalization, encoder, decoder.
//
//   x~ = ((x - b_pre) - mu) / ||(x - b_pre) - mu||     mu = mean over components
//   z  = ReLU(TopK(W_enc x~))
//   x^ = (W_dec z) * saved_norm + mu + b_pre
//
// There are no encoder or decoder biases. Decoder columns have unit L2 norm.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "saelab/error.hpp"

namespace saelab {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar = float>
struct SaeModel {
  Mat<Scalar> encoder;   // n_features x d
  Mat<Scalar> decoder;   // d x n_features, unit-norm columns
  Vec<Scalar> pre_bias;  // d
  std::size_t k = 0;
  std::size_t k_aux = 0;

  std::size_t dim() const { return static_cast<std::size_t>(decoder.rows()); }
  std::size_t num_features() const { return static_cast<std::size_t>(decoder.cols()); }

  // Largest deviation of any decoder column norm from 1.
  double max_decoder_norm_error() const {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < decoder.cols(); ++j) {
      const double norm = decoder.col(j).template cast<double>().norm();
      worst = std::max(worst, std::abs(norm - 1.0));
    }
    return worst;
  }

  void renormalize_decoder() {
    for (Eigen::Index j = 0; j < decoder.cols(); ++j) {
      const Scalar norm = decoder.col(j).norm();
      if (norm > Scalar(0)) decoder.col(j) /= norm;
    }
  }

  template <typename Other>
  SaeModel<Other> cast() const {
    SaeModel<Other> out;
    out.encoder = encoder.template cast<Other>();
    out.decoder = decoder.template cast<Other>();
    out.pre_bias = pre_bias.template cast<Other>();
    out.k = k;
    out.k_aux = k_aux;
    return out;
  }

  bool operator==(const SaeModel& o) const {
    return k == o.k && k_aux == o.k_aux && encoder == o.encoder &&
           decoder == o.decoder && pre_bias == o.pre_bias;
  }
};

template <typename Scalar>
struct NormState {
  Scalar saved_norm = Scalar(1);
  Scalar saved_mean = Scalar(0);
};

template <typename Scalar>
void check_model(const SaeModel<Scalar>& m) {
  const auto n = m.num_features();
  if (m.encoder.rows() != static_cast<Eigen::Index>(n) ||
      m.encoder.cols() != m.decoder.rows() ||
      m.pre_bias.size() != m.decoder.rows()) {
    fail(ErrorCode::DimensionMismatch, "inconsistent SAE parameter shapes");
  }
  if (m.k == 0 || m.k > n || m.k_aux > n) {
    fail(ErrorCode::InvalidConfig, "k and k_aux must satisfy 0 < k <= n, k_aux <= n");
  }
}

template <typename Scalar, typename Derived>
std::pair<Vec<Scalar>, NormState<Scalar>> normalize(const Eigen::MatrixBase<Derived>& x,
                                                    const Vec<Scalar>& pre_bias) {
  if (x.size() != pre_bias.size()) {
    fail(ErrorCode::DimensionMismatch, "normalize: input and pre-bias differ in size");
  }
  Vec<Scalar> centered = x.template cast<Scalar>() - pre_bias;
  NormState<Scalar> state;
  state.saved_mean = centered.mean();
  centered.array() -= state.saved_mean;
  state.saved_norm = centered.norm();
  if (!(state.saved_norm > Scalar(0))) {
    fail(ErrorCode::DegenerateSample, "normalize: sample is constant after centering");
  }
  centered /= state.saved_norm;
  return {std::move(centered), state};
}

template <typename Scalar, typename Derived>
Vec<Scalar> unnormalize(const Eigen::MatrixBase<Derived>& reconstruction,
                        const NormState<Scalar>& state, const Vec<Scalar>& pre_bias) {
  Vec<Scalar> out = reconstruction * state.saved_norm;
  out.array() += state.saved_mean;
  out += pre_bias;
  return out;
}

// Indices of the `count` largest entries of `values` among those where
// `eligible` is true, ordered by value descending; ties go to the lower index.
template <typename Scalar, typename Pred>
std::vector<Eigen::Index> select_top(std::span<const Scalar> values, std::size_t count,
                                     Pred eligible) {
  std::vector<Eigen::Index> idx;
  idx.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (eligible(i)) idx.push_back(static_cast<Eigen::Index>(i));
  }
  const auto before = [&](Eigen::Index a, Eigen::Index b) {
    const Scalar va = values[static_cast<std::size_t>(a)];
    const Scalar vb = values[static_cast<std::size_t>(b)];
    return va > vb || (va == vb && a < b);
  };
  if (count < idx.size()) {
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count),
                     idx.end(), before);
    idx.resize(count);
  }
  std::sort(idx.begin(), idx.end(), before);
  return idx;
}

template <typename Scalar>
std::vector<Eigen::Index> select_top(std::span<const Scalar> values, std::size_t count) {
  return select_top(values, count, [](std::size_t) { return true; });
}

// TopK followed by ReLU, written into `out` (which must be zero on entry).
template <typename Scalar, typename PreDerived, typename OutDerived, typename Pred>
void topk_relu(const Eigen::MatrixBase<PreDerived>& pre, std::size_t k,
               Eigen::MatrixBase<OutDerived>& out, Pred eligible) {
  const Vec<Scalar> p = pre;
  for (Eigen::Index j : select_top<Scalar>(std::span<const Scalar>(p.data(), p.size()), k,
                                           eligible)) {
    if (p(j) > Scalar(0)) out(j) = p(j);
  }
}

template <typename Scalar>
Vec<Scalar> pre_activations(const SaeModel<Scalar>& model, const Vec<Scalar>& normalized) {
  if (normalized.size() != model.encoder.cols()) {
    fail(ErrorCode::DimensionMismatch, "encode: input dimension differs from model");
  }
  return model.encoder * normalized;
}

// Applies TopK then ReLU to already computed pre-activations.
template <typename Scalar>
Vec<Scalar> sparsify(const Vec<Scalar>& pre, std::size_t k) {
  Vec<Scalar> z = Vec<Scalar>::Zero(pre.size());
  topk_relu<Scalar>(pre, k, z, [](std::size_t) { return true; });
  return z;
}

template <typename Scalar>
Vec<Scalar> encode(const SaeModel<Scalar>& model, const Vec<Scalar>& normalized) {
  return sparsify<Scalar>(pre_activations(model, normalized), model.k);
}

template <typename Scalar>
Vec<Scalar> decode(const SaeModel<Scalar>& model, const Vec<Scalar>& z) {
  if (z.size() != model.decoder.cols()) {
    fail(ErrorCode::DimensionMismatch, "decode: code size differs from model");
  }
  return model.decoder * z;
}

// Full round trip of one raw activation: normalize, encode, decode, restore.
template <typename Scalar, typename Derived>
Vec<Scalar> reconstruct(const SaeModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x) {
  auto [normalized, state] = normalize<Scalar>(x, model.pre_bias);
  return unnormalize<Scalar>(decode(model, encode(model, normalized)), state, model.pre_bias);
}

// Feature activations for every row of a row-major T x d block of raw
// activations. Rows that are constant after centering encode to all zeros.
template <typename Scalar>
Mat<Scalar> encode_rows(const SaeModel<Scalar>& model, std::span<const float> rows,
                        std::size_t num_rows) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  if (num_rows == 0 || rows.size() != num_rows * model.dim()) {
    fail(ErrorCode::DimensionMismatch, "encode_rows: block is not T x d");
  }
  Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic>> raw(
      rows.data(), d, static_cast<Eigen::Index>(num_rows));
  Mat<Scalar> x = raw.template cast<Scalar>();
  x.colwise() -= model.pre_bias;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> norms = x.colwise().norm();
  std::vector<bool> valid(num_rows);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    valid[static_cast<std::size_t>(c)] = norms(c) > Scalar(0);
    if (valid[static_cast<std::size_t>(c)]) x.col(c) /= norms(c);
  }
  const Mat<Scalar> pre = model.encoder * x;
  Mat<Scalar> z = Mat<Scalar>::Zero(pre.rows(), pre.cols());
  for (Eigen::Index c = 0; c < pre.cols(); ++c) {
    if (!valid[static_cast<std::size_t>(c)]) continue;
    auto col = z.col(c);
    topk_relu<Scalar>(pre.col(c), model.k, col, [](std::size_t) { return true; });
  }
  return z;  // n_features x T
}

}  // namespace saelab
