#pragma once

// Additive steering along a decoder column: y'_p = y_p + alpha * v at every
// position p, with v = W_dec[:, i].

#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saelab/error.hpp"
#include "saelab/format.hpp"
#include "saelab/keyvalue.hpp"
#include "saelab/sae.hpp"

namespace saelab {

inline constexpr std::size_t kDefaultSteeringStart = 10;
inline constexpr double kSteeringNormTolerance = 1e-6;

struct SteeringVector {
  std::size_t feature_id = 0;
  Eigen::VectorXd direction;
  double alpha = 0.0;
  std::string layer_name;
  std::size_t start_timestep = kDefaultSteeringStart;

  std::size_t dim() const { return static_cast<std::size_t>(direction.size()); }

  bool operator==(const SteeringVector& o) const {
    return feature_id == o.feature_id && direction == o.direction && alpha == o.alpha &&
           layer_name == o.layer_name && start_timestep == o.start_timestep;
  }
};

template <typename Scalar>
SteeringVector steering_vector(const SaeModel<Scalar>& model, std::size_t feature_id,
                               double alpha = 0.0, std::string layer_name = {}) {
  if (feature_id >= model.num_features()) {
    fail(ErrorCode::BadFeatureId, "feature " + std::to_string(feature_id) + " out of range (" +
                                      std::to_string(model.num_features()) + " features)");
  }
  SteeringVector sv;
  sv.feature_id = feature_id;
  sv.direction = model.decoder.col(static_cast<Eigen::Index>(feature_id)).template cast<double>();
  sv.alpha = alpha;
  sv.layer_name = std::move(layer_name);
  return sv;
}

// `y` holds one position per row and d columns.
template <typename Derived>
Mat<typename Derived::Scalar> apply(const Eigen::MatrixBase<Derived>& y, const SteeringVector& sv,
                                    double alpha) {
  using Scalar = typename Derived::Scalar;
  if (static_cast<std::size_t>(y.cols()) != sv.dim()) {
    fail(ErrorCode::DimensionMismatch, "steering: activation width differs from vector");
  }
  Mat<Scalar> out = y;
  if (alpha == 0.0) return out;  // keeps signed zeros intact
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> shift =
      (alpha * sv.direction).transpose().template cast<Scalar>();
  out.rowwise() += shift;
  return out;
}

// Change in feature i's pre-activation when x is moved by alpha * v_i. Both
// points go through the model's normalization.
template <typename Scalar, typename Derived>
Scalar reencode_delta(const SaeModel<Scalar>& model, const Eigen::MatrixBase<Derived>& x,
                      std::size_t feature_id, double alpha) {
  const SteeringVector sv = steering_vector(model, feature_id);
  const Vec<Scalar> base = x.template cast<Scalar>();
  if (static_cast<std::size_t>(base.size()) != model.dim()) {
    fail(ErrorCode::DimensionMismatch, "reencode_delta: input dimension differs from model");
  }
  const Vec<Scalar> moved = base + (alpha * sv.direction).template cast<Scalar>();
  const auto [nb, sb] = normalize<Scalar>(base, model.pre_bias);
  const auto [nm, sm] = normalize<Scalar>(moved, model.pre_bias);
  const auto row = model.encoder.row(static_cast<Eigen::Index>(feature_id));
  return row.dot(nm) - row.dot(nb);
}

// Hook spec: key=value text with layer_name, feature_id, alpha,
// start_timestep, d and vector (d numbers).
inline void write_hook_spec(const SteeringVector& sv, std::ostream& out) {
  out << "# saelab steering hook v1\n";
  out << "# y'[p] = y[p] + alpha * vector at every position, from start_timestep on\n";
  out << "layer_name=" << sv.layer_name << "\n";
  out << "feature_id=" << sv.feature_id << "\n";
  out << "alpha=" << format_number(sv.alpha) << "\n";
  out << "start_timestep=" << sv.start_timestep << "\n";
  out << "d=" << sv.dim() << "\n";
  out << "vector="
      << join_numbers(std::span<const double>(sv.direction.data(), sv.dim())) << "\n";
}

inline void export_hook_spec(const SteeringVector& sv, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  write_hook_spec(sv, out);
  if (!out) fail(ErrorCode::IoError, "short write to '" + path + "'");
}

inline SteeringVector hook_spec_from_keyvalues(const KeyValues& kv) {
  SteeringVector sv;
  sv.layer_name = kv.get("layer_name");
  sv.feature_id = kv.number<std::size_t>("feature_id");
  sv.alpha = kv.number<double>("alpha");
  sv.start_timestep = kv.number<std::size_t>("start_timestep");
  const auto d = kv.number<std::size_t>("d");
  const auto values = split_numbers<double>(kv.get("vector"), "vector");
  if (values.size() != d) fail(ErrorCode::FormatError, "hook spec vector length differs from d");
  sv.direction = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(d));
  if (std::abs(sv.direction.norm() - 1.0) > kSteeringNormTolerance) {
    fail(ErrorCode::InvariantViolation, "hook spec vector is not unit norm");
  }
  return sv;
}

inline SteeringVector load_hook_spec(const std::string& path) {
  return hook_spec_from_keyvalues(KeyValues::load(path));
}

}  // namespace saelab
