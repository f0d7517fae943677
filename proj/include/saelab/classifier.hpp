#pragma once

// Logistic generality classifier over the four temporal metrics:
//   P(general | m) = sigmoid(b0 + b1*o + b2*c + b3*a + b4*lr)
// Metrics are used unnormalized. Label is general iff p >= 0.5; features with
// no active episode are memorized regardless of p.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saelab/error.hpp"
#include "saelab/format.hpp"
#include "saelab/keyvalue.hpp"
#include "saelab/metrics.hpp"

namespace saelab {

enum class GeneralityLabel { General, Memorized };

inline std::string_view to_string(GeneralityLabel l) {
  return l == GeneralityLabel::General ? "general" : "memorized";
}

inline bool parse_label(std::string_view text, GeneralityLabel& out) {
  if (text == "general") out = GeneralityLabel::General;
  else if (text == "memorized") out = GeneralityLabel::Memorized;
  else return false;
  return true;
}

struct GeneralityClassifier {
  std::string dataset;
  std::array<double, 5> beta{};  // intercept, o, c, a, lr

  bool operator==(const GeneralityClassifier&) const = default;
};

struct LabeledFeature {
  std::size_t feature_id = 0;
  FeatureMetrics metrics;
  GeneralityLabel label = GeneralityLabel::General;
  std::string annotator;
  std::int64_t timestamp = 0;
};

inline std::array<double, 5> design_row(const FeatureMetrics& m) {
  return {1.0, m.mean_onset_count, m.episode_coverage, m.mean_activation_magnitude,
          m.relative_run_length};
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double linear_score(const GeneralityClassifier& clf, const FeatureMetrics& m) {
  const auto x = design_row(m);
  double z = 0.0;
  for (std::size_t i = 0; i < 5; ++i) z += clf.beta[i] * x[i];
  return z;
}

inline double predict(const GeneralityClassifier& clf, const FeatureMetrics& m) {
  return sigmoid(linear_score(clf, m));
}

inline GeneralityLabel label_for(const GeneralityClassifier& clf, const FeatureMetrics& m) {
  if (m.inactive) return GeneralityLabel::Memorized;
  return predict(clf, m) >= 0.5 ? GeneralityLabel::General : GeneralityLabel::Memorized;
}

// Published coefficient sets.
inline GeneralityClassifier preset(const std::string& name) {
  if (name == "libero") return {"libero", {-4.20, 1.89, 1.80, 0.52, -0.36}};
  if (name == "droid") return {"droid", {-1.78, 0.74, 2.36, 0.35, -1.04}};
  fail(ErrorCode::InvalidConfig, "unknown classifier preset '" + name + "'");
}

struct FitOptions {
  double ridge = 1e-6;
  double gradient_tolerance = 1e-8;
  std::size_t max_iterations = 500;
};

namespace detail {

inline double penalized_nll(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& beta, double ridge) {
  const Eigen::VectorXd z = X * beta;
  double nll = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    // log(1 + exp(z)) - y z, evaluated without overflow
    const double softplus = z[i] > 0 ? z[i] + std::log1p(std::exp(-z[i]))
                                     : std::log1p(std::exp(z[i]));
    nll += softplus - y[i] * z[i];
  }
  return nll + 0.5 * ridge * beta.squaredNorm();
}

}  // namespace detail

// Damped Newton (IRLS) on the summed log loss plus ridge/2 * |beta|^2.
inline GeneralityClassifier fit(std::span<const LabeledFeature> labeled,
                                const FitOptions& opt = {}) {
  if (labeled.size() < 2) fail(ErrorCode::DegenerateLabels, "fit needs at least two labels");
  std::size_t general = 0;
  for (const auto& l : labeled) general += l.label == GeneralityLabel::General ? 1 : 0;
  if (general == 0 || general == labeled.size()) {
    fail(ErrorCode::DegenerateLabels, "fit needs both general and memorized labels");
  }

  const auto n = static_cast<Eigen::Index>(labeled.size());
  Eigen::MatrixXd X(n, 5);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = design_row(labeled[static_cast<std::size_t>(i)].metrics);
    for (Eigen::Index c = 0; c < 5; ++c) X(i, c) = row[static_cast<std::size_t>(c)];
    y[i] = labeled[static_cast<std::size_t>(i)].label == GeneralityLabel::General ? 1.0 : 0.0;
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(5);
  double objective = detail::penalized_nll(X, y, beta, opt.ridge);
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    Eigen::VectorXd p(n);
    Eigen::VectorXd w(n);
    const Eigen::VectorXd z = X * beta;
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = sigmoid(z[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    const Eigen::VectorXd grad = X.transpose() * (p - y) + opt.ridge * beta;
    if (grad.norm() < opt.gradient_tolerance) break;
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    H.diagonal().array() += opt.ridge;
    const Eigen::VectorXd step = H.ldlt().solve(grad);

    double t = 1.0;
    Eigen::VectorXd next = beta - step;
    double next_obj = detail::penalized_nll(X, y, next, opt.ridge);
    while (next_obj > objective && t > 1e-10) {
      t *= 0.5;
      next = beta - t * step;
      next_obj = detail::penalized_nll(X, y, next, opt.ridge);
    }
    if (next_obj > objective) break;  // no descent left at working precision
    beta = next;
    objective = next_obj;
  }

  GeneralityClassifier clf;
  clf.dataset = "fit";
  for (std::size_t i = 0; i < 5; ++i) clf.beta[i] = beta[static_cast<Eigen::Index>(i)];
  return clf;
}

// Leave-one-out accuracy. A fold whose training part has a single class
// raises DegenerateLabels.
inline double loo_cv(std::span<const LabeledFeature> labeled, const FitOptions& opt = {}) {
  if (labeled.size() < 2) fail(ErrorCode::DegenerateLabels, "loo_cv needs at least two labels");
  std::size_t correct = 0;
  std::vector<LabeledFeature> rest;
  rest.reserve(labeled.size() - 1);
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    rest.clear();
    for (std::size_t j = 0; j < labeled.size(); ++j) {
      if (j != i) rest.push_back(labeled[j]);
    }
    const auto clf = fit(rest, opt);
    const auto guess = predict(clf, labeled[i].metrics) >= 0.5 ? GeneralityLabel::General
                                                               : GeneralityLabel::Memorized;
    correct += guess == labeled[i].label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labeled.size());
}

struct FeatureClassification {
  std::size_t feature_id = 0;
  double probability = 0.0;
  GeneralityLabel label = GeneralityLabel::Memorized;
  bool inactive = false;
};

struct ClassificationSummary {
  std::vector<FeatureClassification> features;
  double percent_memorized = 0.0;
};

inline ClassificationSummary classify_all(const GeneralityClassifier& clf,
                                          std::span<const FeatureMetrics> table) {
  if (table.empty()) fail(ErrorCode::EmptyInput, "classify_all: empty metrics table");
  ClassificationSummary out;
  out.features.reserve(table.size());
  std::size_t memorized = 0;
  for (const auto& m : table) {
    FeatureClassification fc{m.feature_id, predict(clf, m), label_for(clf, m), m.inactive};
    memorized += fc.label == GeneralityLabel::Memorized ? 1 : 0;
    out.features.push_back(fc);
  }
  out.percent_memorized = 100.0 * static_cast<double>(memorized) /
                          static_cast<double>(table.size());
  return out;
}

// Classifier record: key=value text with dataset and beta0..beta4.
inline void write_classifier(const GeneralityClassifier& clf, std::ostream& out) {
  out << "# saelab generality classifier v1\n";
  out << "# p(general) = sigmoid(beta0 + beta1*onsets + beta2*coverage"
         " + beta3*magnitude + beta4*run_length)\n";
  out << "dataset=" << clf.dataset << "\n";
  for (std::size_t i = 0; i < 5; ++i) {
    out << "beta" << i << "=" << format_number(clf.beta[i]) << "\n";
  }
}

inline void save_classifier(const GeneralityClassifier& clf, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  write_classifier(clf, out);
  if (!out) fail(ErrorCode::IoError, "short write to '" + path + "'");
}

inline GeneralityClassifier classifier_from_keyvalues(const KeyValues& kv) {
  GeneralityClassifier clf;
  clf.dataset = kv.get("dataset");
  for (std::size_t i = 0; i < 5; ++i) {
    clf.beta[i] = kv.number<double>("beta" + std::to_string(i));
    if (!std::isfinite(clf.beta[i])) fail(ErrorCode::FormatError, "non-finite coefficient");
  }
  return clf;
}

inline GeneralityClassifier load_classifier(const std::string& path) {
  return classifier_from_keyvalues(KeyValues::load(path));
}

}  // namespace saelab
