#pragma once

// Episode-structured activation datasets and the SAELAB01 on-disk format.
//
// Layout (all integers and floats little-endian):
//
//   "SAELAB01"                         8 bytes magic
//   u32 endianness marker 0x01020304   written LE, reads back as 04 03 02 01
//   u32 d
//   u64 N                              episode count
//   u32 len, bytes                     layer_name
//   u8  pooling_mode                   0 = mean-pooled, 1 = token-grouped
//   N episode blocks:
//     u64 episode_id
//     u64 T
//     u32 len, bytes                   task_text
//     u8  has_scene [, u32 len, bytes] scene_tag
//     u32 frame_count (0 or T), then frame_count x (u32 len, bytes)
//     T*d f32                          row-major, one row per timestep

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "saelab/binary_io.hpp"
#include "saelab/error.hpp"

namespace saelab {

inline constexpr std::string_view kDatasetMagic = "SAELAB01";
inline constexpr std::uint32_t kEndianMarker = 0x01020304u;

enum class PoolingMode : std::uint8_t { MeanPooled = 0, TokenGrouped = 1 };

struct EpisodeRecord {
  std::uint64_t episode_id = 0;
  std::string task_text;
  std::optional<std::string> scene_tag;
  std::size_t num_timesteps = 0;
  std::vector<float> values;  // num_timesteps x d, row-major
  std::vector<std::string> frame_refs;

  std::size_t dim() const {
    return num_timesteps == 0 ? 0 : values.size() / num_timesteps;
  }

  std::span<const float> timestep(std::size_t t) const {
    const std::size_t d = dim();
    return {values.data() + t * d, d};
  }

  bool operator==(const EpisodeRecord&) const = default;
};

struct ActivationDataset {
  std::size_t dim = 0;
  std::string layer_name;
  PoolingMode pooling_mode = PoolingMode::MeanPooled;
  std::vector<EpisodeRecord> episodes;

  std::size_t total_timesteps() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.num_timesteps;
    return n;
  }

  const EpisodeRecord* find(std::uint64_t episode_id) const {
    for (const auto& e : episodes) {
      if (e.episode_id == episode_id) return &e;
    }
    return nullptr;
  }

  bool operator==(const ActivationDataset&) const = default;
};

// Throws DimensionMismatch / EmptyInput / InvariantViolation on the first
// broken invariant.
inline void validate(const ActivationDataset& ds) {
  if (ds.episodes.empty()) fail(ErrorCode::EmptyInput, "dataset has no episodes");
  if (ds.dim == 0) fail(ErrorCode::DimensionMismatch, "dataset dimension is 0");
  std::set<std::uint64_t> ids;
  for (const auto& e : ds.episodes) {
    if (e.num_timesteps == 0) {
      fail(ErrorCode::InvariantViolation,
           "episode " + std::to_string(e.episode_id) + " has no timesteps");
    }
    if (e.values.size() != e.num_timesteps * ds.dim) {
      fail(ErrorCode::DimensionMismatch,
           "episode " + std::to_string(e.episode_id) + " does not have dimension " +
               std::to_string(ds.dim));
    }
    if (!e.frame_refs.empty() && e.frame_refs.size() != e.num_timesteps) {
      fail(ErrorCode::InvariantViolation,
           "episode " + std::to_string(e.episode_id) +
               " frame_refs length differs from T");
    }
    if (!ids.insert(e.episode_id).second) {
      fail(ErrorCode::InvariantViolation,
           "duplicate episode_id " + std::to_string(e.episode_id));
    }
  }
}

// Component-wise arithmetic mean of a group of token vectors.
inline std::vector<float> pool_tokens(std::span<const std::vector<float>> tokens) {
  if (tokens.empty()) fail(ErrorCode::EmptyInput, "pool_tokens: no token vectors");
  const std::size_t d = tokens.front().size();
  std::vector<double> acc(d, 0.0);
  for (const auto& v : tokens) {
    if (v.size() != d) {
      fail(ErrorCode::DimensionMismatch, "pool_tokens: mixed token dimensions");
    }
    for (std::size_t i = 0; i < d; ++i) acc[i] += v[i];
  }
  std::vector<float> out(d);
  const double n = static_cast<double>(tokens.size());
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(acc[i] / n);
  return out;
}

inline std::vector<unsigned char> encode_dataset(const ActivationDataset& ds) {
  validate(ds);
  io::Writer w;
  w.magic(kDatasetMagic);
  w.u32(kEndianMarker);
  w.u32(static_cast<std::uint32_t>(ds.dim));
  w.u64(ds.episodes.size());
  w.string(ds.layer_name);
  w.u8(static_cast<std::uint8_t>(ds.pooling_mode));
  for (const auto& e : ds.episodes) {
    w.u64(e.episode_id);
    w.u64(e.num_timesteps);
    w.string(e.task_text);
    w.u8(e.scene_tag.has_value() ? 1 : 0);
    if (e.scene_tag) w.string(*e.scene_tag);
    w.u32(static_cast<std::uint32_t>(e.frame_refs.size()));
    for (const auto& f : e.frame_refs) w.string(f);
    w.array(std::span<const float>(e.values));
  }
  return w.buffer();
}

inline void write_dataset(const ActivationDataset& ds, const std::string& path) {
  io::write_file(path, encode_dataset(ds));
}

inline ActivationDataset decode_dataset(io::Reader& r) {
  r.expect_magic(kDatasetMagic);
  if (r.u32() != kEndianMarker) {
    fail(ErrorCode::FormatError, "unsupported endianness marker");
  }
  ActivationDataset ds;
  ds.dim = r.u32();
  const std::uint64_t n = r.u64();
  ds.layer_name = r.string();
  const std::uint8_t mode = r.u8();
  if (mode > 1) fail(ErrorCode::FormatError, "unknown pooling mode");
  ds.pooling_mode = static_cast<PoolingMode>(mode);
  // Every episode block needs at least 25 header bytes.
  if (n > r.remaining() / 25) fail(ErrorCode::CorruptFile, "episode count exceeds file size");
  ds.episodes.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    EpisodeRecord e;
    e.episode_id = r.u64();
    e.num_timesteps = r.u64();
    e.task_text = r.string();
    if (r.u8() != 0) e.scene_tag = r.string();
    const std::uint32_t frames = r.u32();
    r.require(std::size_t{frames} * 4);
    e.frame_refs.reserve(frames);
    for (std::uint32_t f = 0; f < frames; ++f) e.frame_refs.push_back(r.string());
    if (ds.dim != 0 && e.num_timesteps > r.remaining() / (ds.dim * sizeof(float))) {
      fail(ErrorCode::CorruptFile, "episode " + std::to_string(e.episode_id) + " is truncated");
    }
    const std::size_t count = e.num_timesteps * ds.dim;
    e.values.resize(count);
    r.array(std::span<float>(e.values));
    ds.episodes.push_back(std::move(e));
  }
  if (!r.at_end()) fail(ErrorCode::CorruptFile, "trailing bytes after last episode");
  validate(ds);
  return ds;
}

inline ActivationDataset open_dataset(const std::string& path) {
  auto reader = io::Reader::from_file(path);
  return decode_dataset(reader);
}

struct DatasetStats {
  std::size_t num_episodes = 0;
  std::size_t total_timesteps = 0;
  double mean_T = 0.0;
  double std_T = 0.0;  // population standard deviation
};

inline DatasetStats dataset_stats(const ActivationDataset& ds) {
  DatasetStats s;
  s.num_episodes = ds.episodes.size();
  if (s.num_episodes == 0) return s;
  for (const auto& e : ds.episodes) s.total_timesteps += e.num_timesteps;
  s.mean_T = static_cast<double>(s.total_timesteps) / static_cast<double>(s.num_episodes);
  double ss = 0.0;
  for (const auto& e : ds.episodes) {
    const double dev = static_cast<double>(e.num_timesteps) - s.mean_T;
    ss += dev * dev;
  }
  s.std_T = std::sqrt(ss / static_cast<double>(s.num_episodes));
  return s;
}

struct IngestOptions {
  std::size_t dim = 0;
  std::string layer_name;
  // Tokens per timestep in the raw files; 1 means the files are already
  // pooled. Larger values are mean-pooled into one vector per timestep.
  std::size_t tokens_per_timestep = 1;
};

// Reads `manifest.tsv` from `dir` (one line per episode: id<TAB>T<TAB>task_text)
// and the matching flat little-endian f32 files `<id>.f32`, each holding
// T x tokens x d values.
inline ActivationDataset ingest_directory(const std::string& dir, const IngestOptions& opt) {
  namespace fs = std::filesystem;
  if (opt.dim == 0) fail(ErrorCode::InvalidConfig, "ingest: dimension must be positive");
  if (opt.tokens_per_timestep == 0) {
    fail(ErrorCode::InvalidConfig, "ingest: tokens per timestep must be positive");
  }
  const fs::path root(dir);
  std::ifstream manifest(root / "manifest.tsv");
  if (!manifest) fail(ErrorCode::IoError, "cannot open manifest in '" + dir + "'");

  ActivationDataset ds;
  ds.dim = opt.dim;
  ds.layer_name = opt.layer_name;
  ds.pooling_mode = PoolingMode::MeanPooled;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) {
      fail(ErrorCode::FormatError, "manifest line " + std::to_string(line_no) +
                                       ": expected id<TAB>T<TAB>task_text");
    }
    EpisodeRecord e;
    try {
      e.episode_id = std::stoull(line.substr(0, tab1));
      e.num_timesteps = std::stoull(line.substr(tab1 + 1, tab2 - tab1 - 1));
    } catch (const std::exception&) {
      fail(ErrorCode::FormatError, "manifest line " + std::to_string(line_no) +
                                       ": bad id or T");
    }
    e.task_text = line.substr(tab2 + 1);

    const std::size_t tokens = opt.tokens_per_timestep;
    const std::size_t raw_count = e.num_timesteps * tokens * opt.dim;
    auto reader = io::Reader::from_file(
        (root / (std::to_string(e.episode_id) + ".f32")).string());
    if (reader.remaining() != raw_count * sizeof(float)) {
      fail(ErrorCode::CorruptFile, "episode " + std::to_string(e.episode_id) +
                                       ": file size does not match T x tokens x d");
    }
    std::vector<float> raw(raw_count);
    reader.array(std::span<float>(raw));

    e.values.resize(e.num_timesteps * opt.dim);
    std::vector<std::vector<float>> group(tokens, std::vector<float>(opt.dim));
    for (std::size_t t = 0; t < e.num_timesteps; ++t) {
      for (std::size_t k = 0; k < tokens; ++k) {
        const float* src = raw.data() + (t * tokens + k) * opt.dim;
        std::copy(src, src + opt.dim, group[k].begin());
      }
      const auto pooled = pool_tokens(group);
      std::copy(pooled.begin(), pooled.end(), e.values.begin() + t * opt.dim);
    }
    ds.episodes.push_back(std::move(e));
  }
  validate(ds);
  return ds;
}

}  // namespace saelab
