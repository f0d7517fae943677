#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "saelab/metrics.hpp"
#include "saelab/synthgen.hpp"
#include "support.hpp"

using namespace saelab;

namespace {

// Straight transcription of the definitions, one feature and one episode at a
// time, with nothing shared with the streaming accumulator.
struct NaiveEpisode {
  bool active = false;
  double onsets = 0, peak = 0, relative_run = 0;
};

NaiveEpisode naive_episode(const std::vector<double>& f, double tau) {
  NaiveEpisode out;
  int s = 0, active_steps = 0, onsets = 0;
  for (double v : f) {
    int next = s;
    if (v > tau) next = 1;
    if (v == 0.0) next = 0;
    if (s == 0 && next == 1) ++onsets;
    s = next;
    active_steps += s;
    if (v > 0.0) out.active = true;
    if (v > out.peak) out.peak = v;
  }
  out.onsets = onsets;
  const double r = onsets == 0 ? 0.0 : static_cast<double>(active_steps) / onsets;
  out.relative_run = r / static_cast<double>(f.size());
  return out;
}

// series[p][e]
std::vector<FeatureMetrics> naive_metrics(const std::vector<std::vector<std::vector<double>>>& series,
                                          double tau = kOnsetThreshold) {
  std::vector<FeatureMetrics> out;
  for (std::size_t p = 0; p < series.size(); ++p) {
    FeatureMetrics m;
    m.feature_id = p;
    double onsets = 0, peaks = 0, runs = 0;
    for (const auto& f : series[p]) {
      const auto e = naive_episode(f, tau);
      if (!e.active) continue;
      ++m.active_episodes;
      onsets += e.onsets;
      peaks += e.peak;
      runs += e.relative_run;
    }
    m.episode_coverage =
        static_cast<double>(m.active_episodes) / static_cast<double>(series[p].size());
    m.inactive = m.active_episodes == 0;
    if (!m.inactive) {
      const auto a = static_cast<double>(m.active_episodes);
      m.mean_onset_count = onsets / a;
      m.mean_activation_magnitude = peaks / a;
      m.relative_run_length = runs / a;
    }
    out.push_back(m);
  }
  return out;
}

// Activation values drawn to hit every branch: exact zeros, sub-threshold,
// exactly tau, and above.
double draw_activation(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (kind(rng)) {
    case 0:
    case 1: return 0.0;
    case 2: return 0.1 * u(rng);
    case 3: return kOnsetThreshold;
    default: return 0.1 + 2.0 * u(rng);
  }
}

}  // namespace

TEST(OnsetTrace, HandTrace) {
  const std::vector<double> f{0, 0.05, 0.2, 0.15, 0, 0, 0.3, 0};
  const auto tr = onset_trace(f);
  EXPECT_EQ(tr.states, (std::vector<std::uint8_t>{0, 0, 1, 1, 0, 0, 1, 0}));
  EXPECT_EQ(tr.onset_count, 2u);
  EXPECT_EQ(tr.run_length, 1.5);
  const auto m = compute_from_traces({{{0, 0.05f, 0.2f, 0.15f, 0, 0, 0.3f, 0}}});
  EXPECT_EQ(m[0].mean_onset_count, 2.0);
  EXPECT_DOUBLE_EQ(m[0].relative_run_length, 0.1875);
  EXPECT_EQ(m[0].episode_coverage, 1.0);
}

TEST(OnsetTrace, HoldsBetweenZeroAndThreshold) {
  // falls to sub-threshold without reaching zero: still on
  const auto tr = onset_trace(std::vector<double>{0.5, 0.01, 0.02, 0.5});
  EXPECT_EQ(tr.states, (std::vector<std::uint8_t>{1, 1, 1, 1}));
  EXPECT_EQ(tr.onset_count, 1u);
  EXPECT_EQ(tr.run_length, 4.0);
  // exactly tau does not switch on
  EXPECT_EQ(onset_trace(std::vector<double>{0.1, 0.1}).onset_count, 0u);
}

TEST(OnsetTrace, Errors) {
  EXPECT_THROW(onset_trace(std::vector<double>{}), Error);
  try {
    onset_trace(std::vector<double>{0.2, -1e-9});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidActivation);
  }
}

TEST(Metrics, SubThresholdActivityCountsForCoverageOnly) {
  const auto m = compute_from_traces({{{0.05f, 0.05f, 0}, {0, 0, 0}}});
  EXPECT_EQ(m[0].episode_coverage, 0.5);
  EXPECT_EQ(m[0].mean_onset_count, 0.0);
  EXPECT_EQ(m[0].relative_run_length, 0.0);
  EXPECT_FLOAT_EQ(m[0].mean_activation_magnitude, 0.05f);
  EXPECT_FALSE(m[0].inactive);
}

TEST(Metrics, InactiveFeatureReportsZeros) {
  const auto m = compute_from_traces({{{0, 0}, {0, 0, 0}}});
  EXPECT_TRUE(m[0].inactive);
  EXPECT_EQ(m[0].episode_coverage, 0.0);
  EXPECT_EQ(m[0].mean_onset_count, 0.0);
  EXPECT_EQ(m[0].mean_activation_magnitude, 0.0);
}

TEST(Metrics, CoverageIsActiveOverTotal) {
  EXPECT_EQ(episode_coverage(3, 12), 0.25);
  EXPECT_THROW(episode_coverage(0, 0), Error);
}

TEST(Metrics, AccumulatorMatchesNaiveOnRandomTraces) {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 200; ++rep) {
    std::uniform_int_distribution<std::size_t> nf(1, 16), ne(1, 5), nt(1, 30);
    const std::size_t n = nf(rng), N = ne(rng);
    std::vector<std::size_t> T(N);
    for (auto& t : T) t = nt(rng);
    std::vector<std::vector<std::vector<double>>> series(n, std::vector<std::vector<double>>(N));
    MetricsAccumulator acc(n);
    for (std::size_t e = 0; e < N; ++e) {
      Eigen::MatrixXd acts(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(T[e]));
      for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t t = 0; t < T[e]; ++t) {
          const double v = draw_activation(rng);
          acts(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(t)) = v;
          series[p][e].push_back(v);
        }
      }
      acc.add_episode(acts);
    }
    ASSERT_EQ(acc.finish(), naive_metrics(series)) << "rep " << rep;
  }
}

TEST(Metrics, ComputeAllMatchesMaterializedEncoding) {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 100; ++rep) {
    std::uniform_int_distribution<std::size_t> nf(2, 16), ne(1, 5), dim(2, 8);
    const std::size_t n = nf(rng), d = dim(rng);
    std::uniform_int_distribution<std::size_t> kk(1, n);
    auto model = saelab::testing::random_model<float>(rng, d, n, kk(rng));
    model.encoder *= 0.3f;  // puts many activations below the onset threshold
    const auto ds = saelab::testing::random_dataset(rng, ne(rng), 30, d);
    std::vector<std::vector<std::vector<double>>> series(n);
    for (const auto& ep : ds.episodes) {
      const auto z = encode_episode(model, ep);
      for (std::size_t p = 0; p < n; ++p) {
        std::vector<double> f;
        for (Eigen::Index t = 0; t < z.cols(); ++t) {
          f.push_back(static_cast<double>(z(static_cast<Eigen::Index>(p), t)));
        }
        series[p].push_back(std::move(f));
      }
    }
    ASSERT_EQ(compute_all(model, ds), naive_metrics(series)) << "rep " << rep;
  }
}

TEST(Metrics, EpisodeOrderDoesNotMatter) {
  std::mt19937_64 rng(8);
  const auto model = saelab::testing::random_model<double>(rng, 4, 6, 2);
  auto ds = saelab::testing::random_dataset(rng, 5, 20, 4);
  const auto ref = compute_all(model, ds);
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(ds.episodes.begin(), ds.episodes.end(), rng);
    const auto got = compute_all(model, ds);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      EXPECT_EQ(got[j].episode_coverage, ref[j].episode_coverage);
      EXPECT_EQ(got[j].active_episodes, ref[j].active_episodes);
      EXPECT_NEAR(got[j].mean_onset_count, ref[j].mean_onset_count, 1e-12);
      EXPECT_NEAR(got[j].mean_activation_magnitude, ref[j].mean_activation_magnitude, 1e-12);
      EXPECT_NEAR(got[j].relative_run_length, ref[j].relative_run_length, 1e-12);
    }
  }
}

TEST(Metrics, ComputeAllRejectsWrongDimension) {
  std::mt19937_64 rng(1);
  const auto model = saelab::testing::random_model<float>(rng, 4, 6, 2);
  const auto ds = saelab::testing::random_dataset(rng, 2, 5, 3);
  try {
    compute_all(model, ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Metrics, ExactDictionarySeparatesPlantedKinds) {
  PlantSpec spec;
  spec.noise_std = 0.0;
  spec.seed = 4;
  const auto data = generate(spec);
  // Decoder = planted directions, no bias. Each encoder row is its direction
  // minus a small share of the others, so float rounding in the stored data
  // cannot leak a positive activation into a silent feature.
  const Eigen::MatrixXd& u = data.truth.directions;
  SaeModel<double> model;
  model.k = spec.planted();
  model.decoder = u;
  model.encoder = (1.1 * u - 0.1 * u.rowwise().sum() * Eigen::RowVectorXd::Ones(u.cols()))
                      .transpose();
  model.pre_bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.dim));
  const auto m = compute_all(model, data.dataset);
  for (std::size_t p = 0; p < spec.planted(); ++p) {
    if (data.truth.kinds[p] == PlantedKind::General) {
      EXPECT_GE(m[p].episode_coverage, 0.8) << p;
      EXPECT_GT(m[p].mean_onset_count, 1.0) << p;
      EXPECT_LT(m[p].relative_run_length, 0.5) << p;
    } else {
      EXPECT_LE(m[p].episode_coverage, spec.memorized_episode_fraction + 0.05) << p;
      EXPECT_EQ(m[p].mean_onset_count, 1.0) << p;
      EXPECT_GE(m[p].relative_run_length, 0.75) << p;
    }
  }
}

TEST(MetricsTable, RoundTrip) {
  std::mt19937_64 rng(9);
  const auto model = saelab::testing::random_model<double>(rng, 5, 9, 3);
  const auto ds = saelab::testing::random_dataset(rng, 4, 25, 5);
  const auto rows = compute_all(model, ds);
  std::stringstream s;
  write_metrics_table(rows, s);
  EXPECT_EQ(read_metrics_table(s), rows);
}

TEST(MetricsTable, BadRows) {
  std::istringstream short_row("0\t1\t2\n");
  EXPECT_THROW(read_metrics_table(short_row), Error);
  std::istringstream text("0\t1\tx\t1\t1\t1\t0\n");
  EXPECT_THROW(read_metrics_table(text), Error);
}
