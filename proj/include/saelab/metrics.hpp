#pragma once

// Per-feature generality metrics over episode-structured SAE activations.
//
//   E+   episodes where the feature is > 0 at some timestep
//   c    |E+| / N
//   s_t  1 if f_t > tau_on; 0 if f_t == 0; otherwise s_{t-1}   (s_0 = 0)
//   o    number of 0 -> 1 transitions of s
//   r    sum_t s_t / o   (0 when o == 0)
//   o-   mean of o over E+
//   a-   mean over E+ of max_t f_t
//   lr-  mean over E+ of r / T
//
// Features with an empty E+ report zeros and the inactive flag.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saelab/activation_store.hpp"
#include "saelab/error.hpp"
#include "saelab/format.hpp"
#include "saelab/parallel.hpp"
#include "saelab/sae.hpp"

namespace saelab {

inline constexpr double kOnsetThreshold = 0.1;

struct OnsetTrace {
  std::vector<std::uint8_t> states;
  std::size_t onset_count = 0;
  std::size_t active_steps = 0;
  double run_length = 0.0;
};

inline double run_length(std::size_t active_steps, std::size_t onsets) {
  return onsets > 0 ? static_cast<double>(active_steps) / static_cast<double>(onsets) : 0.0;
}

inline OnsetTrace onset_trace(std::span<const double> f, double tau_on = kOnsetThreshold) {
  if (f.empty()) fail(ErrorCode::EmptyInput, "onset_trace: empty series");
  OnsetTrace tr;
  tr.states.resize(f.size());
  std::uint8_t s = 0;
  for (std::size_t t = 0; t < f.size(); ++t) {
    if (f[t] < 0.0) fail(ErrorCode::InvalidActivation, "onset_trace: negative activation");
    const std::uint8_t prev = s;
    if (f[t] > tau_on) s = 1;
    else if (f[t] == 0.0) s = 0;
    tr.states[t] = s;
    tr.onset_count += (s == 1 && prev == 0) ? 1 : 0;
    tr.active_steps += s;
  }
  tr.run_length = run_length(tr.active_steps, tr.onset_count);
  return tr;
}

inline double episode_coverage(std::size_t active_episodes, std::size_t total_episodes) {
  if (total_episodes == 0) fail(ErrorCode::EmptyInput, "episode_coverage: no episodes");
  return static_cast<double>(active_episodes) / static_cast<double>(total_episodes);
}

struct FeatureMetrics {
  std::size_t feature_id = 0;
  double episode_coverage = 0.0;
  double mean_onset_count = 0.0;
  double mean_activation_magnitude = 0.0;
  double relative_run_length = 0.0;
  std::size_t active_episodes = 0;
  bool inactive = true;

  bool operator==(const FeatureMetrics&) const = default;
};

// Folds one episode at a time into per-feature running sums; the per-episode
// terms are added in episode order so results do not depend on how episodes
// were encoded.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(std::size_t num_features, double tau_on = kOnsetThreshold)
      : tau_(tau_on), sums_(num_features), state_(num_features), onsets_(num_features),
        active_steps_(num_features), peak_(num_features) {}

  // `acts` holds one row per feature and one column per timestep.
  template <typename Derived>
  void add_episode(const Eigen::MatrixBase<Derived>& acts) {
    const auto n = static_cast<Eigen::Index>(sums_.size());
    if (acts.rows() != n) fail(ErrorCode::DimensionMismatch, "metrics: feature count differs");
    if (acts.cols() == 0) fail(ErrorCode::EmptyInput, "metrics: episode has no timesteps");
    std::fill(state_.begin(), state_.end(), 0);
    std::fill(onsets_.begin(), onsets_.end(), 0);
    std::fill(active_steps_.begin(), active_steps_.end(), 0);
    std::fill(peak_.begin(), peak_.end(), 0.0);
    for (Eigen::Index t = 0; t < acts.cols(); ++t) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double f = static_cast<double>(acts(j, t));
        if (f < 0.0) fail(ErrorCode::InvalidActivation, "metrics: negative activation");
        const auto jj = static_cast<std::size_t>(j);
        const std::uint8_t prev = state_[jj];
        if (f > tau_) state_[jj] = 1;
        else if (f == 0.0) state_[jj] = 0;
        onsets_[jj] += (state_[jj] == 1 && prev == 0) ? 1 : 0;
        active_steps_[jj] += state_[jj];
        peak_[jj] = std::max(peak_[jj], f);
      }
    }
    const auto T = static_cast<double>(acts.cols());
    for (std::size_t j = 0; j < sums_.size(); ++j) {
      if (!(peak_[j] > 0.0)) continue;
      Sums& s = sums_[j];
      s.active += 1;
      s.onsets += static_cast<double>(onsets_[j]);
      s.peaks += peak_[j];
      s.relative_runs += run_length(active_steps_[j], onsets_[j]) / T;
    }
    ++episodes_;
  }

  std::vector<FeatureMetrics> finish() const {
    std::vector<FeatureMetrics> out(sums_.size());
    for (std::size_t j = 0; j < sums_.size(); ++j) {
      FeatureMetrics& m = out[j];
      const Sums& s = sums_[j];
      m.feature_id = j;
      m.active_episodes = s.active;
      m.episode_coverage = episode_coverage(s.active, episodes_);
      m.inactive = s.active == 0;
      if (m.inactive) continue;
      const auto a = static_cast<double>(s.active);
      m.mean_onset_count = s.onsets / a;
      m.mean_activation_magnitude = s.peaks / a;
      m.relative_run_length = s.relative_runs / a;
    }
    return out;
  }

  std::size_t episodes() const { return episodes_; }

 private:
  struct Sums {
    std::size_t active = 0;
    double onsets = 0.0;
    double peaks = 0.0;
    double relative_runs = 0.0;
  };

  double tau_;
  std::vector<Sums> sums_;
  std::vector<std::uint8_t> state_;
  std::vector<std::size_t> onsets_;
  std::vector<std::size_t> active_steps_;
  std::vector<double> peak_;
  std::size_t episodes_ = 0;
};

// Feature activations (n_features x T) for one episode.
template <typename Scalar>
Mat<Scalar> encode_episode(const SaeModel<Scalar>& model, const EpisodeRecord& episode) {
  return encode_rows(model, std::span<const float>(episode.values), episode.num_timesteps);
}

// Encodes episodes in parallel batches and hands each batch to `visit` in
// episode order: visit(episode_index, activations).
template <typename Scalar, typename Visit>
void for_each_encoded_episode(const SaeModel<Scalar>& model, const ActivationDataset& ds,
                              Visit&& visit) {
  if (ds.dim != model.dim()) {
    fail(ErrorCode::DimensionMismatch, "dataset dimension differs from model");
  }
  const std::size_t n = ds.episodes.size();
  const std::size_t chunk = std::max<std::size_t>(1, worker_count(n) * 2);
  std::vector<Mat<Scalar>> encoded;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t count = std::min(chunk, n - begin);
    encoded.assign(count, Mat<Scalar>());
    parallel_for(count, [&](std::size_t i) {
      encoded[i] = encode_episode(model, ds.episodes[begin + i]);
    });
    for (std::size_t i = 0; i < count; ++i) visit(begin + i, encoded[i]);
  }
}

template <typename Scalar>
std::vector<FeatureMetrics> compute_all(const SaeModel<Scalar>& model,
                                        const ActivationDataset& ds,
                                        double tau_on = kOnsetThreshold) {
  validate(ds);
  MetricsAccumulator acc(model.num_features(), tau_on);
  for_each_encoded_episode(model, ds, [&](std::size_t, const Mat<Scalar>& z) {
    acc.add_episode(z);
  });
  return acc.finish();
}

// traces[p][e] is the activation series of feature p in episode e.
inline std::vector<FeatureMetrics> compute_from_traces(
    const std::vector<std::vector<std::vector<float>>>& traces,
    double tau_on = kOnsetThreshold) {
  if (traces.empty() || traces.front().empty()) {
    fail(ErrorCode::EmptyInput, "compute_from_traces: no traces");
  }
  const std::size_t features = traces.size();
  const std::size_t episodes = traces.front().size();
  MetricsAccumulator acc(features, tau_on);
  for (std::size_t e = 0; e < episodes; ++e) {
    const std::size_t T = traces.front()[e].size();
    Eigen::MatrixXd acts(static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(T));
    for (std::size_t p = 0; p < features; ++p) {
      if (traces[p].size() != episodes || traces[p][e].size() != T) {
        fail(ErrorCode::DimensionMismatch, "compute_from_traces: ragged traces");
      }
      for (std::size_t t = 0; t < T; ++t) {
        acts(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(t)) = traces[p][e][t];
      }
    }
    acc.add_episode(acts);
  }
  return acc.finish();
}

// Metrics table: '#' comment lines, then one tab-separated row per feature:
// feature_id, episode_coverage, mean_onset_count, mean_activation_magnitude,
// relative_run_length, active_episodes, inactive (0/1).
inline void write_metrics_table(const std::vector<FeatureMetrics>& rows, std::ostream& out) {
  out << "# saelab feature metrics v1\n";
  out << "# feature_id\tepisode_coverage\tmean_onset_count\tmean_activation_magnitude"
         "\trelative_run_length\tactive_episodes\tinactive\n";
  for (const auto& m : rows) {
    out << m.feature_id << '\t' << format_number(m.episode_coverage) << '\t'
        << format_number(m.mean_onset_count) << '\t'
        << format_number(m.mean_activation_magnitude) << '\t'
        << format_number(m.relative_run_length) << '\t' << m.active_episodes << '\t'
        << (m.inactive ? 1 : 0) << '\n';
  }
}

inline void write_metrics_table(const std::vector<FeatureMetrics>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  write_metrics_table(rows, out);
  if (!out) fail(ErrorCode::IoError, "short write to '" + path + "'");
}

inline std::vector<FeatureMetrics> read_metrics_table(std::istream& in,
                                                      const std::string& origin = "<stream>") {
  std::vector<FeatureMetrics> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_numbers<double>(line, origin + ":" + std::to_string(line_no));
    if (fields.size() != 7) {
      fail(ErrorCode::FormatError, origin + ":" + std::to_string(line_no) +
                                       ": expected 7 columns");
    }
    FeatureMetrics m;
    m.feature_id = static_cast<std::size_t>(fields[0]);
    m.episode_coverage = fields[1];
    m.mean_onset_count = fields[2];
    m.mean_activation_magnitude = fields[3];
    m.relative_run_length = fields[4];
    m.active_episodes = static_cast<std::size_t>(fields[5]);
    m.inactive = fields[6] != 0.0;
    rows.push_back(m);
  }
  return rows;
}

inline std::vector<FeatureMetrics> read_metrics_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
  return read_metrics_table(in, path);
}

}  // namespace saelab
