#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "saelab/search_index.hpp"
#include "saelab/synthgen.hpp"
#include "support.hpp"

using namespace saelab;
using saelab::testing::TempDir;

namespace {

// Every positive hit of every feature, fully sorted.
std::vector<std::vector<TimestepHit>> sorted_hits(
    const std::vector<std::pair<std::uint64_t, Eigen::MatrixXd>>& episodes, std::size_t n) {
  std::vector<std::vector<TimestepHit>> out(n);
  for (const auto& [id, acts] : episodes) {
    for (Eigen::Index j = 0; j < acts.rows(); ++j) {
      for (Eigen::Index t = 0; t < acts.cols(); ++t) {
        if (acts(j, t) > 0) {
          out[static_cast<std::size_t>(j)].push_back({id, static_cast<std::uint64_t>(t), acts(j, t)});
        }
      }
    }
  }
  for (auto& hits : out) {
    std::sort(hits.begin(), hits.end(), [](const TimestepHit& a, const TimestepHit& b) {
      return std::tie(b.activation, a.episode_id, a.t) < std::tie(a.activation, b.episode_id, b.t);
    });
  }
  return out;
}

EvidenceIndex index_of(const std::vector<std::pair<std::uint64_t, Eigen::MatrixXd>>& episodes,
                       std::size_t n, std::size_t top_k) {
  EvidenceBuilder b(n, top_k);
  for (const auto& [id, acts] : episodes) b.add_episode(id, acts);
  return std::move(b).finish();
}

EvidenceIndex maxima_index(const std::vector<double>& maxima) {
  std::vector<std::pair<std::uint64_t, Eigen::MatrixXd>> eps;
  for (std::size_t e = 0; e < maxima.size(); ++e) {
    Eigen::MatrixXd a(1, 2);
    a << maxima[e] / 2, maxima[e];
    eps.push_back({e, a});
  }
  return index_of(eps, 1, 10);
}

}  // namespace

TEST(EvidenceIndex, TwoEpisodeToy) {
  Eigen::MatrixXd e5(2, 3), e2(2, 2);
  e5 << 0.5, 0.0, 0.9,
        0.0, 0.0, 0.0;
  e2 << 0.9, 0.1,
        0.0, 0.3;
  const auto idx = index_of({{5, e5}, {2, e2}}, 2, 3);
  // tie at 0.9 goes to the lower episode id
  EXPECT_EQ(idx.feature(0).top_timesteps,
            (std::vector<TimestepHit>{{2, 0, 0.9}, {5, 2, 0.9}, {5, 0, 0.5}}));
  EXPECT_EQ(idx.feature(0).episode_maxima, (std::vector<EpisodeMax>{{2, 0.9}, {5, 0.9}}));
  EXPECT_EQ(idx.feature(1).top_timesteps, (std::vector<TimestepHit>{{2, 1, 0.3}}));
  EXPECT_EQ(idx.feature(1).episode_maxima, (std::vector<EpisodeMax>{{2, 0.3}}));
  EXPECT_THROW(idx.feature(2), Error);
}

TEST(EvidenceIndex, BoundedHeapMatchesFullSort) {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 100; ++rep) {
    std::uniform_int_distribution<std::size_t> nf(1, 6), ne(1, 6), nt(1, 12), kk(0, 15);
    std::uniform_int_distribution<int> level(0, 4);
    const std::size_t n = nf(rng), top_k = kk(rng);
    std::vector<std::pair<std::uint64_t, Eigen::MatrixXd>> eps;
    const std::size_t count = ne(rng);
    for (std::size_t e = 0; e < count; ++e) {
      Eigen::MatrixXd a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nt(rng)));
      // coarse levels force plenty of ties
      for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = 0.25 * level(rng);
      eps.push_back({(e * 13 + 7) % 17, a});
    }
    const auto idx = index_of(eps, n, top_k);
    const auto full = sorted_hits(eps, n);
    for (std::size_t j = 0; j < n; ++j) {
      auto expect = full[j];
      if (expect.size() > top_k) expect.resize(top_k);
      ASSERT_EQ(idx.feature(j).top_timesteps, expect) << "rep " << rep << " feature " << j;
    }
  }
}

TEST(EvidenceIndex, EpisodeOrderDoesNotMatter) {
  std::mt19937_64 rng(4);
  auto model = saelab::testing::random_model<double>(rng, 5, 8, 3);
  auto ds = saelab::testing::random_dataset(rng, 7, 15, 5);
  const auto ref = build_index(model, ds, 6);
  std::shuffle(ds.episodes.begin(), ds.episodes.end(), rng);
  EXPECT_EQ(build_index(model, ds, 6), ref);
}

TEST(EvidenceIndex, BuildIndexRejectsWrongWidth) {
  Eigen::MatrixXd a(3, 2);
  EvidenceBuilder b(2, 4);
  EXPECT_THROW(b.add_episode(0, a), Error);
}

TEST(DiverseEpisodes, RankingAndTies) {
  const auto idx = maxima_index({0.2, 0.9, 0.0, 0.9, 0.5});
  const auto top = top_diverse_episodes(idx, 0, 10);
  // episode 2 never fired
  EXPECT_EQ(top, (std::vector<EpisodeMax>{{1, 0.9}, {3, 0.9}, {4, 0.5}, {0, 0.2}}));
  EXPECT_EQ(top_diverse_episodes(idx, 0, 2).size(), 2u);
}

TEST(DropOff, Examples) {
  EXPECT_DOUBLE_EQ(drop_off_ratio(maxima_index({10, 1, 1, 1, 1}), 0).ratio, 10.0);
  EXPECT_DOUBLE_EQ(drop_off_ratio(maxima_index({2, 2, 2, 2, 2, 2}), 0).ratio, 1.0);
  // only the next four count
  EXPECT_DOUBLE_EQ(drop_off_ratio(maxima_index({6, 3, 3, 3, 3, 0.01}), 0).ratio, 2.0);
  EXPECT_DOUBLE_EQ(drop_off_ratio(maxima_index({4, 2, 1}), 0).ratio, 4.0 / 1.5);
  const auto single = drop_off_ratio(maxima_index({0, 3}), 0);
  EXPECT_TRUE(single.single_episode);
  EXPECT_TRUE(std::isinf(single.ratio));
  EXPECT_TRUE(drop_off_ratio(maxima_index({0, 0}), 0).inactive);
}

TEST(DropOff, PlantedMemorizedFeaturesDropHarder) {
  PlantSpec spec;
  spec.seed = 9;
  spec.noise_std = 0.0;
  const auto data = generate(spec);
  const Eigen::MatrixXd& u = data.truth.directions;
  SaeModel<double> model;
  model.k = spec.planted();
  model.decoder = u;
  model.encoder = (1.1 * u - 0.1 * u.rowwise().sum() * Eigen::RowVectorXd::Ones(u.cols()))
                      .transpose();
  model.pre_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.dim));
  const auto idx = build_index(model, data.dataset);
  std::size_t wins = 0, pairs = 0;
  for (std::size_t m = 0; m < spec.planted(); ++m) {
    if (data.truth.kinds[m] != PlantedKind::Memorized) continue;
    for (std::size_t g = 0; g < spec.planted(); ++g) {
      if (data.truth.kinds[g] != PlantedKind::General) continue;
      ++pairs;
      wins += drop_off_ratio(idx, m).ratio > drop_off_ratio(idx, g).ratio ? 1 : 0;
    }
  }
  EXPECT_GE(static_cast<double>(wins), 0.9 * static_cast<double>(pairs));
}

TEST(IndexFile, RoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(12);
  const auto model = saelab::testing::random_model<float>(rng, 4, 9, 2);
  const auto ds = saelab::testing::random_dataset(rng, 5, 20, 4);
  const auto idx = build_index(model, ds, 7);
  save_index(idx, dir.file("x.idx"));
  EXPECT_EQ(load_index(dir.file("x.idx")), idx);
  EXPECT_EQ(load_index(dir.file("x.idx")).top_k(), 7u);
}

TEST(IndexFile, CorruptInputs) {
  std::mt19937_64 rng(13);
  const auto model = saelab::testing::random_model<float>(rng, 4, 3, 2);
  const auto ds = saelab::testing::random_dataset(rng, 2, 5, 4);
  auto bytes = encode_index(build_index(model, ds, 2));
  auto code = [](std::vector<unsigned char> b) {
    io::Reader r(b, "mem");
    try {
      decode_index(r);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::SpecError;
  };
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(code(trailing), ErrorCode::CorruptFile);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_EQ(code(truncated), ErrorCode::CorruptFile);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(code(bad_magic), ErrorCode::FormatError);
  auto small_k = bytes;
  small_k[8] = 0;  // top_k = 0 but features hold hits
  EXPECT_EQ(code(small_k), ErrorCode::CorruptFile);
}
