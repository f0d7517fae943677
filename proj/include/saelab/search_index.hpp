#pragma once

// Per-feature evidence: the globally top-activating timesteps (bounded heap,
// K per feature) and every episode's maximum activation.
//
// SAEIDX01 sidecar layout (little-endian):
//
//   "SAEIDX01"
//   u32 top_k, u32 n_features
//   per feature:
//     u32 hit_count, then hit_count x (u64 episode_id, u64 t, f64 activation)
//     u32 episode_count, then episode_count x (u64 episode_id, f64 max)

#include <algorithm>
#include <cstdint>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "saelab/activation_store.hpp"
#include "saelab/binary_io.hpp"
#include "saelab/error.hpp"
#include "saelab/metrics.hpp"
#include "saelab/sae.hpp"

namespace saelab {

inline constexpr std::string_view kIndexMagic = "SAEIDX01";
inline constexpr std::size_t kDefaultTopTimesteps = 100;

struct TimestepHit {
  std::uint64_t episode_id = 0;
  std::uint64_t t = 0;
  double activation = 0.0;

  bool operator==(const TimestepHit&) const = default;
};

// Higher activation first, then lower (episode_id, t).
inline bool ranks_before(const TimestepHit& a, const TimestepHit& b) {
  if (a.activation != b.activation) return a.activation > b.activation;
  if (a.episode_id != b.episode_id) return a.episode_id < b.episode_id;
  return a.t < b.t;
}

struct EpisodeMax {
  std::uint64_t episode_id = 0;
  double max = 0.0;

  bool operator==(const EpisodeMax&) const = default;
};

inline bool ranks_before(const EpisodeMax& a, const EpisodeMax& b) {
  if (a.max != b.max) return a.max > b.max;
  return a.episode_id < b.episode_id;
}

struct FeatureEvidence {
  std::size_t feature_id = 0;
  std::vector<TimestepHit> top_timesteps;  // sorted by ranks_before
  std::vector<EpisodeMax> episode_maxima;  // episodes where the feature fired, by episode_id

  bool operator==(const FeatureEvidence&) const = default;
};

class EvidenceIndex {
 public:
  EvidenceIndex() = default;
  EvidenceIndex(std::size_t top_k, std::vector<FeatureEvidence> features)
      : top_k_(top_k), features_(std::move(features)) {}

  std::size_t top_k() const { return top_k_; }
  std::size_t num_features() const { return features_.size(); }
  const std::vector<FeatureEvidence>& features() const { return features_; }

  const FeatureEvidence& feature(std::size_t id) const {
    if (id >= features_.size()) {
      fail(ErrorCode::BadFeatureId, "feature " + std::to_string(id) + " is not in the index");
    }
    return features_[id];
  }

  bool operator==(const EvidenceIndex&) const = default;

 private:
  std::size_t top_k_ = kDefaultTopTimesteps;
  std::vector<FeatureEvidence> features_;
};

// Incremental builder; episodes may be added in any order.
class EvidenceBuilder {
 public:
  EvidenceBuilder(std::size_t num_features, std::size_t top_k)
      : top_k_(top_k), heaps_(num_features), maxima_(num_features) {}

  // `acts` holds one row per feature and one column per timestep.
  template <typename Derived>
  void add_episode(std::uint64_t episode_id, const Eigen::MatrixBase<Derived>& acts) {
    if (static_cast<std::size_t>(acts.rows()) != heaps_.size()) {
      fail(ErrorCode::DimensionMismatch, "index: feature count differs");
    }
    for (Eigen::Index j = 0; j < acts.rows(); ++j) {
      auto& heap = heaps_[static_cast<std::size_t>(j)];
      double peak = 0.0;
      for (Eigen::Index t = 0; t < acts.cols(); ++t) {
        const double a = static_cast<double>(acts(j, t));
        if (!(a > 0.0)) continue;
        peak = std::max(peak, a);
        push(heap, TimestepHit{episode_id, static_cast<std::uint64_t>(t), a});
      }
      if (peak > 0.0) maxima_[static_cast<std::size_t>(j)].push_back({episode_id, peak});
    }
  }

  EvidenceIndex finish() && {
    std::vector<FeatureEvidence> out(heaps_.size());
    for (std::size_t j = 0; j < heaps_.size(); ++j) {
      out[j].feature_id = j;
      auto& hits = out[j].top_timesteps;
      hits.reserve(heaps_[j].size());
      while (!heaps_[j].empty()) {
        hits.push_back(heaps_[j].top());
        heaps_[j].pop();
      }
      std::reverse(hits.begin(), hits.end());
      out[j].episode_maxima = std::move(maxima_[j]);
      std::sort(out[j].episode_maxima.begin(), out[j].episode_maxima.end(),
                [](const EpisodeMax& a, const EpisodeMax& b) { return a.episode_id < b.episode_id; });
    }
    return EvidenceIndex(top_k_, std::move(out));
  }

 private:
  struct WorstOnTop {
    bool operator()(const TimestepHit& a, const TimestepHit& b) const { return ranks_before(a, b); }
  };
  using Heap = std::priority_queue<TimestepHit, std::vector<TimestepHit>, WorstOnTop>;

  void push(Heap& heap, const TimestepHit& hit) {
    if (top_k_ == 0) return;
    if (heap.size() < top_k_) {
      heap.push(hit);
    } else if (ranks_before(hit, heap.top())) {
      heap.pop();
      heap.push(hit);
    }
  }

  std::size_t top_k_;
  std::vector<Heap> heaps_;
  std::vector<std::vector<EpisodeMax>> maxima_;
};

template <typename Scalar>
EvidenceIndex build_index(const SaeModel<Scalar>& model, const ActivationDataset& ds,
                          std::size_t top_k = kDefaultTopTimesteps) {
  validate(ds);
  EvidenceBuilder builder(model.num_features(), top_k);
  for_each_encoded_episode(model, ds, [&](std::size_t e, const Mat<Scalar>& z) {
    builder.add_episode(ds.episodes[e].episode_id, z);
  });
  return std::move(builder).finish();
}

inline std::vector<EpisodeMax> top_diverse_episodes(const EvidenceIndex& index,
                                                    std::size_t feature_id, std::size_t n = 10) {
  std::vector<EpisodeMax> eps = index.feature(feature_id).episode_maxima;
  std::sort(eps.begin(), eps.end(),
            [](const EpisodeMax& a, const EpisodeMax& b) { return ranks_before(a, b); });
  if (eps.size() > n) eps.resize(n);
  return eps;
}

struct DropOff {
  double ratio = 0.0;  // top episode max / mean of the next up to four
  bool single_episode = false;
  bool inactive = false;
};

inline DropOff drop_off_ratio(const EvidenceIndex& index, std::size_t feature_id) {
  const auto top = top_diverse_episodes(index, feature_id, 5);
  DropOff d;
  if (top.empty()) {
    d.inactive = true;
    return d;
  }
  if (top.size() == 1) {
    d.single_episode = true;
    d.ratio = std::numeric_limits<double>::infinity();
    return d;
  }
  double rest = 0.0;
  for (std::size_t i = 1; i < top.size(); ++i) rest += top[i].max;
  d.ratio = top[0].max / (rest / static_cast<double>(top.size() - 1));
  return d;
}

inline std::vector<unsigned char> encode_index(const EvidenceIndex& index) {
  io::Writer w;
  w.magic(kIndexMagic);
  w.u32(static_cast<std::uint32_t>(index.top_k()));
  w.u32(static_cast<std::uint32_t>(index.num_features()));
  for (const auto& f : index.features()) {
    w.u32(static_cast<std::uint32_t>(f.top_timesteps.size()));
    for (const auto& h : f.top_timesteps) {
      w.u64(h.episode_id);
      w.u64(h.t);
      w.f64(h.activation);
    }
    w.u32(static_cast<std::uint32_t>(f.episode_maxima.size()));
    for (const auto& m : f.episode_maxima) {
      w.u64(m.episode_id);
      w.f64(m.max);
    }
  }
  return w.buffer();
}

inline void save_index(const EvidenceIndex& index, const std::string& path) {
  io::write_file(path, encode_index(index));
}

inline EvidenceIndex decode_index(io::Reader& r) {
  r.expect_magic(kIndexMagic);
  const std::size_t top_k = r.u32();
  const std::size_t n = r.u32();
  r.require(n * 8);
  std::vector<FeatureEvidence> features(n);
  for (std::size_t j = 0; j < n; ++j) {
    features[j].feature_id = j;
    const std::size_t hits = r.u32();
    if (hits > top_k) fail(ErrorCode::CorruptFile, "index holds more hits than top_k");
    r.require(hits * 24);
    features[j].top_timesteps.resize(hits);
    for (auto& h : features[j].top_timesteps) {
      h.episode_id = r.u64();
      h.t = r.u64();
      h.activation = r.f64();
    }
    const std::size_t eps = r.u32();
    r.require(eps * 16);
    features[j].episode_maxima.resize(eps);
    for (auto& m : features[j].episode_maxima) {
      m.episode_id = r.u64();
      m.max = r.f64();
    }
  }
  if (!r.at_end()) fail(ErrorCode::CorruptFile, "trailing bytes after index");
  return EvidenceIndex(top_k, std::move(features));
}

inline EvidenceIndex load_index(const std::string& path) {
  auto r = io::Reader::from_file(path);
  return decode_index(r);
}

}  // namespace saelab
