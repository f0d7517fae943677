#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saelab/activation_store.hpp"
#include "saelab/error.hpp"
#include "saelab/geometric_median.hpp"
#include "saelab/keyvalue.hpp"
#include "saelab/optimizer.hpp"
#include "saelab/sae.hpp"
#include "saelab/sae_loss.hpp"

namespace saelab {

// Defaults are the published training hyperparameters.
struct TrainConfig {
  double expansion_ratio = 1.0;
  std::size_t k = 100;
  std::size_t k_aux = 512;
  double aux_coefficient = 1.0 / 32.0;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 4096;
  std::size_t epochs = 100;
  double grad_clip_norm = 1.0;
  std::size_t geometric_median_samples = 10000;
  std::size_t dead_window = 500;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(expansion_ratio > 0.0) || k == 0 || batch_size == 0 || epochs == 0 ||
        !(learning_rate > 0.0) || !(grad_clip_norm > 0.0) ||
        geometric_median_samples == 0 || dead_window == 0 || aux_coefficient < 0.0 ||
        !(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
      fail(ErrorCode::InvalidConfig, "training configuration has a non-positive field");
    }
  }

  std::size_t num_features(std::size_t dim) const {
    const double n = std::round(static_cast<double>(dim) * expansion_ratio);
    if (n < 1.0) fail(ErrorCode::InvalidConfig, "expansion ratio yields no features");
    return static_cast<std::size_t>(n);
  }

  static TrainConfig from_keyvalues(const KeyValues& kv) {
    kv.reject_unknown({"expansion_ratio", "k", "k_aux", "aux_coefficient", "learning_rate",
                       "adam_beta1", "adam_beta2", "adam_epsilon", "batch_size", "epochs",
                       "grad_clip_norm", "geometric_median_samples", "dead_window", "seed"},
                      "training option");
    TrainConfig c;
    kv.read_into("expansion_ratio", c.expansion_ratio);
    kv.read_into("k", c.k);
    kv.read_into("k_aux", c.k_aux);
    kv.read_into("aux_coefficient", c.aux_coefficient);
    kv.read_into("learning_rate", c.learning_rate);
    kv.read_into("adam_beta1", c.adam_beta1);
    kv.read_into("adam_beta2", c.adam_beta2);
    kv.read_into("adam_epsilon", c.adam_epsilon);
    kv.read_into("batch_size", c.batch_size);
    kv.read_into("epochs", c.epochs);
    kv.read_into("grad_clip_norm", c.grad_clip_norm);
    kv.read_into("geometric_median_samples", c.geometric_median_samples);
    kv.read_into("dead_window", c.dead_window);
    kv.read_into("seed", c.seed);
    c.validate();
    return c;
  }
};

// dead(j) <=> step - last_fired[j] > window
class DeadTracker {
 public:
  DeadTracker() = default;
  DeadTracker(std::size_t num_features, std::size_t window)
      : last_fired_(num_features, 0), window_(static_cast<std::int64_t>(window)) {}

  bool dead(std::size_t j) const { return step_ - last_fired_[j] > window_; }

  std::vector<bool> mask() const {
    std::vector<bool> out(last_fired_.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = dead(j);
    return out;
  }

  double dead_ratio() const {
    if (last_fired_.empty()) return 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < last_fired_.size(); ++j) count += dead(j) ? 1 : 0;
    return static_cast<double>(count) / static_cast<double>(last_fired_.size());
  }

  // Marks every feature with a positive activation in any column of `z` as
  // having fired at the current step.
  template <typename Derived>
  void record(const Eigen::MatrixBase<Derived>& z) {
    for (Eigen::Index j = 0; j < z.rows(); ++j) {
      if ((z.row(j).array() > 0).any()) last_fired_[static_cast<std::size_t>(j)] = step_;
    }
  }

  void advance() { ++step_; }
  std::int64_t step() const { return step_; }
  std::int64_t last_fired(std::size_t j) const { return last_fired_[j]; }

 private:
  std::vector<std::int64_t> last_fired_;
  std::int64_t window_ = 500;
  std::int64_t step_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double recon_loss = 0.0;  // mean of ||x - x^||^2 / C_MSE over the epoch
  double aux_loss = 0.0;    // mean of the alpha-weighted aux term
  double dead_ratio = 0.0;  // at the end of the epoch
  bool operator==(const EpochRecord&) const = default;
};

struct TrainingLog {
  double c_mse = 0.0;
  std::vector<EpochRecord> epochs;
  bool operator==(const TrainingLog&) const = default;
};

struct StepStats {
  LossTerms terms;
  double grad_norm = 0.0;  // before clipping
  Eigen::Index samples = 0;
};

// Copies every timestep of the dataset into a d x M matrix, episode order.
template <typename Scalar>
Mat<Scalar> gather_samples(const ActivationDataset& ds) {
  Mat<Scalar> out(static_cast<Eigen::Index>(ds.dim),
                  static_cast<Eigen::Index>(ds.total_timesteps()));
  Eigen::Index col = 0;
  for (const auto& e : ds.episodes) {
    Eigen::Map<const Eigen::MatrixXf> block(e.values.data(), static_cast<Eigen::Index>(ds.dim),
                                            static_cast<Eigen::Index>(e.num_timesteps));
    out.middleCols(col, block.cols()) = block.template cast<Scalar>();
    col += block.cols();
  }
  return out;
}

// Mean squared distance of the samples to their centroid.
template <typename Derived>
double centered_variance(const Eigen::MatrixBase<Derived>& samples) {
  const Eigen::MatrixXd x = samples.template cast<double>();
  const Eigen::VectorXd mean = x.rowwise().mean();
  return (x.colwise() - mean).colwise().squaredNorm().mean();
}

// Owns the model, optimizer state and dead-latent bookkeeping for one run.
template <typename Scalar = float>
class Trainer {
 public:
  Trainer(const TrainConfig& config, Mat<Scalar> samples)
      : config_(config), samples_(std::move(samples)), rng_(config.seed) {
    config_.validate();
    const auto d = static_cast<std::size_t>(samples_.rows());
    if (d == 0 || samples_.cols() == 0) fail(ErrorCode::EmptyInput, "no training samples");
    const std::size_t n = config_.num_features(d);
    if (config_.k > n) {
      fail(ErrorCode::InvalidConfig, "k exceeds the number of features");
    }

    // Initialization pool: shared by the pre-bias median and C_MSE.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(samples_.cols()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng_);
    const std::size_t pool_size = std::min(config_.geometric_median_samples, order.size());
    Mat<Scalar> pool(samples_.rows(), static_cast<Eigen::Index>(pool_size));
    for (std::size_t i = 0; i < pool_size; ++i) {
      pool.col(static_cast<Eigen::Index>(i)) = samples_.col(order[i]);
    }

    model_.k = config_.k;
    model_.k_aux = std::min(config_.k_aux, n);
    model_.pre_bias = geometric_median(pool);
    loss_opt_.c_mse = centered_variance(pool);
    loss_opt_.aux_coefficient = config_.aux_coefficient;
    if (!(loss_opt_.c_mse > 0.0)) {
      fail(ErrorCode::InvalidNormalizer, "initial activations have zero variance");
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    Mat<double> dec(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (Eigen::Index j = 0; j < dec.cols(); ++j) {
      for (Eigen::Index i = 0; i < dec.rows(); ++i) dec(i, j) = gauss(rng_);
      dec.col(j).normalize();
    }
    model_.decoder = dec.cast<Scalar>();
    model_.encoder = (dec.transpose() *
                      std::sqrt(static_cast<double>(config_.k) / static_cast<double>(d)))
                         .cast<Scalar>();

    AdamOptions adam{config_.learning_rate, config_.adam_beta1, config_.adam_beta2,
                     config_.adam_epsilon};
    adam_enc_ = Adam<Scalar>(model_.encoder.rows(), model_.encoder.cols(), adam);
    adam_dec_ = Adam<Scalar>(model_.decoder.rows(), model_.decoder.cols(), adam);
    adam_pre_ = Adam<Scalar>(model_.pre_bias.rows(), 1, adam);
    dead_ = DeadTracker(n, config_.dead_window);
    log_.c_mse = loss_opt_.c_mse;
  }

  // One optimizer step on the given sample columns.
  StepStats step(const Mat<Scalar>& batch) {
    const auto fp = forward(model_, batch, dead_.mask(), loss_opt_);
    auto grads = backward(model_, fp, loss_opt_);
    grads.decoder = project_decoder_gradient(model_.decoder, grads.decoder);

    StepStats stats;
    stats.terms = fp.terms;
    stats.samples = fp.used;
    stats.grad_norm = clip_global_norm<Scalar>(config_.grad_clip_norm, grads.encoder,
                                               grads.decoder, grads.pre_bias);
    adam_enc_.step(model_.encoder, grads.encoder);
    adam_dec_.step(model_.decoder, grads.decoder);
    adam_pre_.step(model_.pre_bias, grads.pre_bias);
    model_.renormalize_decoder();

    dead_.record(fp.z);
    dead_.advance();
    return stats;
  }

  // Shuffles, walks every sample once (last partial batch kept) and appends
  // one record to the log.
  const EpochRecord& run_epoch() {
    const auto m = static_cast<std::size_t>(samples_.cols());
    std::vector<Eigen::Index> order(m);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng_);

    double recon = 0.0;
    double aux = 0.0;
    double seen = 0.0;
    Mat<Scalar> batch;
    for (std::size_t start = 0; start < m; start += config_.batch_size) {
      const std::size_t count = std::min(config_.batch_size, m - start);
      batch.resize(samples_.rows(), static_cast<Eigen::Index>(count));
      for (std::size_t i = 0; i < count; ++i) {
        batch.col(static_cast<Eigen::Index>(i)) = samples_.col(order[start + i]);
      }
      const StepStats s = step(batch);
      recon += s.terms.mse_term * static_cast<double>(s.samples);
      aux += s.terms.aux_term * static_cast<double>(s.samples);
      seen += static_cast<double>(s.samples);
    }
    EpochRecord rec;
    rec.epoch = log_.epochs.size() + 1;
    rec.recon_loss = seen > 0 ? recon / seen : 0.0;
    rec.aux_loss = seen > 0 ? aux / seen : 0.0;
    rec.dead_ratio = dead_.dead_ratio();
    log_.epochs.push_back(rec);
    return log_.epochs.back();
  }

  const SaeModel<Scalar>& model() const { return model_; }
  const TrainingLog& log() const { return log_; }
  const DeadTracker& dead_tracker() const { return dead_; }
  const LossOptions& loss_options() const { return loss_opt_; }
  const Mat<Scalar>& samples() const { return samples_; }
  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  Mat<Scalar> samples_;
  std::mt19937_64 rng_;
  SaeModel<Scalar> model_;
  LossOptions loss_opt_;
  Adam<Scalar> adam_enc_;
  Adam<Scalar> adam_dec_;
  Adam<Scalar> adam_pre_;
  DeadTracker dead_;
  TrainingLog log_;
};

template <typename Scalar>
struct TrainResult {
  SaeModel<Scalar> model;
  TrainingLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

template <typename Scalar = float>
TrainResult<Scalar> train(const TrainConfig& config, const ActivationDataset& dataset,
                          const EpochCallback& on_epoch = {}) {
  validate(dataset);
  Trainer<Scalar> trainer(config, gather_samples<Scalar>(dataset));
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto& rec = trainer.run_epoch();
    if (on_epoch) on_epoch(rec);
  }
  return {trainer.model(), trainer.log()};
}

}  // namespace saelab
