#pragma once

// Synthetic episode datasets with planted ground-truth feature directions.
//
// General directions fire in short bursts (geometric lengths, mean 5 steps)
// in a large share of episodes; within an episode their bursts follow each
// other back to back, so no timestep is pure noise. Memorized directions fire
// in one sustained span covering at least 70% of the timesteps of a few
// episodes.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saelab/activation_store.hpp"
#include "saelab/error.hpp"
#include "saelab/format.hpp"
#include "saelab/keyvalue.hpp"
#include "saelab/sae.hpp"

namespace saelab {

enum class PlantedKind { General, Memorized };

inline std::string_view to_string(PlantedKind k) {
  return k == PlantedKind::General ? "general" : "memorized";
}

struct PlantSpec {
  std::size_t dim = 64;
  std::size_t n_general = 8;
  std::size_t n_memorized = 8;
  std::size_t episodes = 50;
  std::size_t t_min = 60;
  std::size_t t_max = 140;
  double noise_std = 0.01;
  double general_episode_fraction = 0.8;
  double memorized_episode_fraction = 0.02;
  double coefficient_scale = 1.0;
  std::uint64_t seed = 0;

  std::size_t planted() const { return n_general + n_memorized; }

  void validate() const {
    if (dim == 0 || episodes == 0 || t_min == 0 || t_min > t_max) {
      fail(ErrorCode::SpecError, "plant spec needs d, N, T >= 1 and t_min <= t_max");
    }
    if (planted() > dim) {
      fail(ErrorCode::SpecError, "more planted directions than dimensions");
    }
    if (noise_std < 0.0 || coefficient_scale <= 0.0 ||
        general_episode_fraction <= 0.0 || general_episode_fraction > 1.0 ||
        memorized_episode_fraction <= 0.0 || memorized_episode_fraction > 1.0) {
      fail(ErrorCode::SpecError, "plant spec rates or fractions out of range");
    }
  }

  static PlantSpec from_keyvalues(const KeyValues& kv) {
    kv.reject_unknown({"d", "n_general", "n_memorized", "episodes", "t_min", "t_max", "noise_std",
                       "general_episode_fraction", "memorized_episode_fraction",
                       "coefficient_scale", "seed"},
                      "plant spec field");
    PlantSpec s;
    kv.read_into("d", s.dim);
    kv.read_into("n_general", s.n_general);
    kv.read_into("n_memorized", s.n_memorized);
    kv.read_into("episodes", s.episodes);
    kv.read_into("t_min", s.t_min);
    kv.read_into("t_max", s.t_max);
    kv.read_into("noise_std", s.noise_std);
    kv.read_into("general_episode_fraction", s.general_episode_fraction);
    kv.read_into("memorized_episode_fraction", s.memorized_episode_fraction);
    kv.read_into("coefficient_scale", s.coefficient_scale);
    kv.read_into("seed", s.seed);
    s.validate();
    return s;
  }
};

struct GroundTruth {
  Eigen::MatrixXd directions;  // d x planted, orthonormal columns
  std::vector<PlantedKind> kinds;
  // traces[p][e] holds the coefficient of direction p at each timestep of
  // episode index e.
  std::vector<std::vector<std::vector<float>>> traces;
  std::vector<std::uint64_t> episode_ids;

  std::size_t planted() const { return kinds.size(); }
  bool operator==(const GroundTruth&) const = default;
};

namespace detail {

// Orthonormal directions from the QR factorization of a seeded Gaussian
// matrix. While there is room they are also orthogonal to the all-ones
// vector, which the per-sample mean subtraction removes.
inline Eigen::MatrixXd planted_directions(std::size_t d, std::size_t count,
                                          std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const bool skip_ones = count < d;
  Eigen::MatrixXd g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(count + 1));
  g.col(0).setOnes();
  for (Eigen::Index j = 1; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = gauss(rng);
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd q = qr.householderQ() *
                            Eigen::MatrixXd::Identity(g.rows(), std::min(g.rows(), g.cols()));
  Eigen::MatrixXd out = q.middleCols(skip_ones ? 1 : 0, static_cast<Eigen::Index>(count));
  // Fix the sign so the largest-magnitude component is positive.
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    Eigen::Index arg = 0;
    out.col(j).cwiseAbs().maxCoeff(&arg);
    if (out(arg, j) < 0) out.col(j) *= -1.0;
  }
  return out;
}

inline std::vector<std::size_t> choose_episodes(std::size_t n, double fraction,
                                                std::mt19937_64& rng) {
  const auto count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))), 1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Tiles the episode with back-to-back bursts of the given general directions.
// Burst lengths are 1 + Geometric (mean 5 steps); each burst goes to one of
// the least used directions so far, never the one that just fired, so every
// timestep carries exactly one general direction.
inline void plant_burst_chain(std::vector<std::vector<float>*>& traces, double scale,
                              std::mt19937_64& rng) {
  if (traces.empty()) return;
  const std::size_t T = traces.front()->size();
  std::geometric_distribution<int> length(0.2);
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  std::vector<std::size_t> used(traces.size(), 0);
  std::size_t previous = traces.size();
  std::vector<std::size_t> candidates;
  for (std::size_t t = 0; t < T;) {
    std::size_t least = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i < traces.size(); ++i) {
      if (i != previous || traces.size() == 1) least = std::min(least, used[i]);
    }
    candidates.clear();
    for (std::size_t i = 0; i < traces.size(); ++i) {
      if ((i != previous || traces.size() == 1) && used[i] == least) candidates.push_back(i);
    }
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    const std::size_t g = candidates[pick(rng)];
    const std::size_t len = std::min<std::size_t>(1 + static_cast<std::size_t>(length(rng)), T - t);
    const float a = static_cast<float>(amp(rng) * scale);
    for (std::size_t s = t; s < t + len; ++s) (*traces[g])[s] = a;
    ++used[g];
    previous = g;
    t += len;
    if (traces.size() == 1) t += 1 + static_cast<std::size_t>(length(rng));  // silent gap
  }
}

inline void plant_sustained(std::vector<float>& trace, double scale, std::mt19937_64& rng) {
  const std::size_t T = trace.size();
  std::uniform_real_distribution<double> cover(0.75, 1.0);
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  const auto len = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(cover(rng) * static_cast<double>(T))), 1, T);
  std::uniform_int_distribution<std::size_t> start(0, T - len);
  const std::size_t s = start(rng);
  const float a = static_cast<float>(amp(rng) * scale);
  for (std::size_t t = s; t < s + len; ++t) trace[t] = a;
}

}  // namespace detail

struct SyntheticData {
  ActivationDataset dataset;
  GroundTruth truth;
};

inline SyntheticData generate(const PlantSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticData out;
  GroundTruth& gt = out.truth;
  gt.directions = detail::planted_directions(spec.dim, spec.planted(), rng);
  gt.kinds.assign(spec.n_general, PlantedKind::General);
  gt.kinds.insert(gt.kinds.end(), spec.n_memorized, PlantedKind::Memorized);

  std::uniform_int_distribution<std::size_t> length(spec.t_min, spec.t_max);
  std::vector<std::size_t> lengths(spec.episodes);
  for (auto& T : lengths) T = length(rng);

  // active[p][e]: whether direction p is planted in episode e.
  std::vector<std::vector<bool>> active(spec.planted(), std::vector<bool>(spec.episodes));
  for (std::size_t p = 0; p < spec.planted(); ++p) {
    const double fraction = gt.kinds[p] == PlantedKind::General
                                ? spec.general_episode_fraction
                                : spec.memorized_episode_fraction;
    for (std::size_t e : detail::choose_episodes(spec.episodes, fraction, rng)) {
      active[p][e] = true;
    }
  }

  // Bursts alternate between directions, so every episode that has general
  // activity gets at least two general directions when there are two.
  const std::size_t min_general = std::min<std::size_t>(2, spec.n_general);
  for (std::size_t e = 0; e < spec.episodes; ++e) {
    std::vector<std::size_t> missing;
    std::size_t have = 0;
    for (std::size_t p = 0; p < spec.n_general; ++p) {
      if (active[p][e]) ++have;
      else missing.push_back(p);
    }
    if (have == 0 || have >= min_general) continue;
    std::shuffle(missing.begin(), missing.end(), rng);
    for (std::size_t i = 0; have < min_general; ++i, ++have) active[missing[i]][e] = true;
  }

  ActivationDataset& ds = out.dataset;
  ds.dim = spec.dim;
  ds.layer_name = "synthetic";
  gt.traces.assign(spec.planted(), std::vector<std::vector<float>>(spec.episodes));
  for (std::size_t e = 0; e < spec.episodes; ++e) {
    std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(e), std::uint64_t{0x5ae1ab}};
    std::mt19937_64 ep_rng(seq);
    const std::size_t T = lengths[e];
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(spec.dim),
                                              static_cast<Eigen::Index>(T));
    std::vector<std::vector<float>*> chain;
    for (std::size_t p = 0; p < spec.planted(); ++p) {
      auto& trace = gt.traces[p][e];
      trace.assign(T, 0.0f);
      if (!active[p][e]) continue;
      if (gt.kinds[p] == PlantedKind::General) {
        chain.push_back(&trace);
      } else {
        detail::plant_sustained(trace, spec.coefficient_scale, ep_rng);
      }
    }
    detail::plant_burst_chain(chain, spec.coefficient_scale, ep_rng);
    for (std::size_t p = 0; p < spec.planted(); ++p) {
      const auto& trace = gt.traces[p][e];
      for (std::size_t t = 0; t < T; ++t) {
        if (trace[t] != 0.0f) {
          x.col(static_cast<Eigen::Index>(t)) +=
              static_cast<double>(trace[t]) * gt.directions.col(static_cast<Eigen::Index>(p));
        }
      }
    }
    if (spec.noise_std > 0.0) {
      std::normal_distribution<double> noise(0.0, spec.noise_std);
      for (Eigen::Index t = 0; t < x.cols(); ++t) {
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, t) += noise(ep_rng);
      }
    }
    EpisodeRecord rec;
    rec.episode_id = e;
    rec.num_timesteps = T;
    rec.task_text = "synthetic episode " + std::to_string(e);
    const Eigen::MatrixXf xf = x.cast<float>();
    rec.values.assign(xf.data(), xf.data() + xf.size());
    ds.episodes.push_back(std::move(rec));
    gt.episode_ids.push_back(e);
  }
  return out;
}

struct FeatureMatch {
  std::size_t planted = 0;
  std::size_t feature = 0;
  double similarity = 0.0;  // |cosine|
};

struct MatchReport {
  std::vector<FeatureMatch> matches;  // indexed by planted direction

  double mean_similarity() const {
    if (matches.empty()) return 0.0;
    double s = 0.0;
    for (const auto& m : matches) s += m.similarity;
    return s / static_cast<double>(matches.size());
  }

  double fraction_above(double threshold) const {
    if (matches.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& m : matches) n += m.similarity > threshold ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(matches.size());
  }
};

// Greedy assignment of planted directions to decoder columns by |cosine|:
// the globally best remaining pair is taken first; a column is used once.
template <typename Derived>
MatchReport match_directions(const Eigen::MatrixBase<Derived>& decoder,
                             const Eigen::MatrixXd& planted) {
  if (decoder.rows() != planted.rows()) {
    fail(ErrorCode::DimensionMismatch, "match: decoder and planted dimensions differ");
  }
  Eigen::MatrixXd dec = decoder.template cast<double>();
  for (Eigen::Index j = 0; j < dec.cols(); ++j) {
    const double n = dec.col(j).norm();
    if (n > 0) dec.col(j) /= n;
  }
  Eigen::MatrixXd sim = (planted.transpose() * dec).cwiseAbs();  // planted x features
  for (Eigen::Index p = 0; p < planted.cols(); ++p) {
    const double n = planted.col(p).norm();
    if (n > 0) sim.row(p) /= n;
  }

  MatchReport report;
  report.matches.resize(static_cast<std::size_t>(planted.cols()));
  std::vector<bool> row_done(static_cast<std::size_t>(sim.rows()));
  std::vector<bool> col_used(static_cast<std::size_t>(sim.cols()));
  const auto rounds = std::min(sim.rows(), sim.cols());
  for (Eigen::Index r = 0; r < rounds; ++r) {
    double best = -1.0;
    Eigen::Index bp = 0, bf = 0;
    for (Eigen::Index p = 0; p < sim.rows(); ++p) {
      if (row_done[static_cast<std::size_t>(p)]) continue;
      for (Eigen::Index f = 0; f < sim.cols(); ++f) {
        if (col_used[static_cast<std::size_t>(f)]) continue;
        if (sim(p, f) > best) {
          best = sim(p, f);
          bp = p;
          bf = f;
        }
      }
    }
    row_done[static_cast<std::size_t>(bp)] = true;
    col_used[static_cast<std::size_t>(bf)] = true;
    report.matches[static_cast<std::size_t>(bp)] =
        FeatureMatch{static_cast<std::size_t>(bp), static_cast<std::size_t>(bf), best};
  }
  return report;
}

template <typename Scalar>
MatchReport match_features(const SaeModel<Scalar>& model, const GroundTruth& gt) {
  return match_directions(model.decoder, gt.directions);
}

// Ground-truth sidecar: key=value text.
//   d=<int>  planted=<int>  episodes=<int>
//   kind.<p>=general|memorized
//   direction.<p>=<d numbers>
//   episode.<e>=<episode_id>
//   trace.<p>.<e>=<T numbers>
inline void write_ground_truth(const GroundTruth& gt, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  out << "# saelab ground truth v1\n";
  out << "d=" << gt.directions.rows() << "\n";
  out << "planted=" << gt.planted() << "\n";
  out << "episodes=" << gt.episode_ids.size() << "\n";
  for (std::size_t e = 0; e < gt.episode_ids.size(); ++e) {
    out << "episode." << e << "=" << gt.episode_ids[e] << "\n";
  }
  for (std::size_t p = 0; p < gt.planted(); ++p) {
    const Eigen::VectorXd dir = gt.directions.col(static_cast<Eigen::Index>(p));
    out << "kind." << p << "=" << to_string(gt.kinds[p]) << "\n";
    out << "direction." << p << "="
        << join_numbers(std::span<const double>(dir.data(), static_cast<std::size_t>(dir.size())))
        << "\n";
    for (std::size_t e = 0; e < gt.traces[p].size(); ++e) {
      out << "trace." << p << "." << e << "="
          << join_numbers(std::span<const float>(gt.traces[p][e])) << "\n";
    }
  }
  if (!out) fail(ErrorCode::IoError, "short write to '" + path + "'");
}

inline GroundTruth read_ground_truth(const std::string& path) {
  const auto kv = KeyValues::load(path);
  GroundTruth gt;
  const auto d = kv.number<std::size_t>("d");
  const auto planted = kv.number<std::size_t>("planted");
  const auto episodes = kv.number<std::size_t>("episodes");
  gt.directions.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(planted));
  for (std::size_t e = 0; e < episodes; ++e) {
    gt.episode_ids.push_back(kv.number<std::uint64_t>("episode." + std::to_string(e)));
  }
  gt.traces.assign(planted, std::vector<std::vector<float>>(episodes));
  for (std::size_t p = 0; p < planted; ++p) {
    const std::string ps = std::to_string(p);
    const auto& kind = kv.get("kind." + ps);
    if (kind == "general") gt.kinds.push_back(PlantedKind::General);
    else if (kind == "memorized") gt.kinds.push_back(PlantedKind::Memorized);
    else fail(ErrorCode::FormatError, "unknown kind '" + kind + "'");
    const auto dir = split_numbers<double>(kv.get("direction." + ps), "direction");
    if (dir.size() != d) fail(ErrorCode::FormatError, "direction has wrong length");
    for (std::size_t i = 0; i < d; ++i) {
      gt.directions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = dir[i];
    }
    for (std::size_t e = 0; e < episodes; ++e) {
      gt.traces[p][e] =
          split_numbers<float>(kv.get("trace." + ps + "." + std::to_string(e)), "trace");
    }
  }
  return gt;
}

}  // namespace saelab
