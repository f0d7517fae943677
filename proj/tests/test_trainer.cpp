#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "saelab/checkpoint.hpp"
#include "saelab/synthgen.hpp"
#include "saelab/trainer.hpp"
#include "support.hpp"

using namespace saelab;

TEST(TrainConfig, DefaultsAreThePublishedValues) {
  const TrainConfig c;
  EXPECT_EQ(c.expansion_ratio, 1.0);
  EXPECT_EQ(c.k, 100u);
  EXPECT_EQ(c.k_aux, 512u);
  EXPECT_EQ(c.aux_coefficient, 1.0 / 32.0);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.adam_beta1, 0.9);
  EXPECT_EQ(c.adam_beta2, 0.999);
  EXPECT_EQ(c.batch_size, 4096u);
  EXPECT_EQ(c.epochs, 100u);
  EXPECT_EQ(c.grad_clip_norm, 1.0);
  EXPECT_EQ(c.geometric_median_samples, 10000u);
  EXPECT_EQ(c.dead_window, 500u);
}

TEST(TrainConfig, ParsesKeyValues) {
  std::istringstream in("# run\nexpansion_ratio = 4\nk=16\nlearning_rate=2e-3\nseed=9\n");
  const auto c = TrainConfig::from_keyvalues(KeyValues::parse(in));
  EXPECT_EQ(c.expansion_ratio, 4.0);
  EXPECT_EQ(c.k, 16u);
  EXPECT_EQ(c.learning_rate, 2e-3);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.batch_size, 4096u);
  EXPECT_EQ(c.num_features(64), 256u);
}

TEST(TrainConfig, RejectsBadInput) {
  auto code = [](const std::string& text) {
    std::istringstream in(text);
    try {
      TrainConfig::from_keyvalues(KeyValues::parse(in));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::SpecError;
  };
  EXPECT_EQ(code("learning_rate=0\n"), ErrorCode::InvalidConfig);
  EXPECT_EQ(code("batchsize=3\n"), ErrorCode::InvalidConfig);
  EXPECT_EQ(code("k=abc\n"), ErrorCode::FormatError);
  EXPECT_EQ(code("k 3\n"), ErrorCode::FormatError);
}

TEST(DeadTracker, WindowRule) {
  DeadTracker t(3, 2);
  Eigen::MatrixXf z = Eigen::MatrixXf::Zero(3, 2);
  z(0, 1) = 0.5f;
  for (int s = 0; s < 3; ++s) {
    t.record(z);
    t.advance();
  }
  // step 3: feature 0 fired at step 2; others never (last_fired 0)
  EXPECT_FALSE(t.dead(0));
  EXPECT_TRUE(t.dead(1));  // 3 - 0 > 2
  EXPECT_DOUBLE_EQ(t.dead_ratio(), 2.0 / 3.0);
  DeadTracker fresh(2, 2);
  fresh.advance();
  fresh.advance();
  EXPECT_FALSE(fresh.dead(0));  // 2 - 0 is not > 2
  fresh.advance();
  EXPECT_TRUE(fresh.dead(0));
}

TEST(DeadTracker, NegativeOrZeroDoesNotCountAsFiring) {
  DeadTracker t(2, 0);
  Eigen::MatrixXf z(2, 1);
  z << 0.0f, 1e-30f;
  t.advance();
  t.record(z);
  EXPECT_TRUE(t.dead(0));
  EXPECT_FALSE(t.dead(1));
}

namespace {

PlantSpec small_spec(std::size_t d, std::size_t general, std::size_t memorized, double noise) {
  PlantSpec s;
  s.dim = d;
  s.n_general = general;
  s.n_memorized = memorized;
  s.episodes = 20;
  s.t_min = 30;
  s.t_max = 60;
  s.noise_std = noise;
  s.memorized_episode_fraction = 0.1;
  s.seed = 17;
  return s;
}

}  // namespace

TEST(Trainer, DecoderStaysUnitNormEveryStep) {
  const auto data = generate(small_spec(32, 4, 4, 0.05));
  TrainConfig cfg;
  cfg.k = 4;
  cfg.k_aux = 16;
  cfg.batch_size = 32;
  cfg.learning_rate = 5e-3;
  Trainer<float> trainer(cfg, gather_samples<float>(data.dataset));
  const auto& samples = trainer.samples();
  double worst = 0.0;
  for (int step = 0; step < 1000; ++step) {
    const Eigen::Index start = (step * 32) % (samples.cols() - 32);
    trainer.step(samples.middleCols(start, 32));
    worst = std::max(worst, trainer.model().max_decoder_norm_error());
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Trainer, InitializationRules) {
  const auto data = generate(small_spec(16, 2, 2, 0.05));
  TrainConfig cfg;
  cfg.k = 4;
  cfg.k_aux = 1000;
  cfg.geometric_median_samples = 50;
  cfg.seed = 3;
  Trainer<double> trainer(cfg, gather_samples<double>(data.dataset));
  const auto& m = trainer.model();
  EXPECT_EQ(m.k_aux, 16u);  // clamped to the dictionary size
  EXPECT_LT(m.max_decoder_norm_error(), 1e-12);
  EXPECT_LT((m.encoder - m.decoder.transpose() * std::sqrt(4.0 / 16.0)).cwiseAbs().maxCoeff(),
            1e-15);
  EXPECT_GT(trainer.loss_options().c_mse, 0.0);

  cfg.k = 17;
  EXPECT_THROW(Trainer<double>(cfg, gather_samples<double>(data.dataset)), Error);
}

TEST(Trainer, CentroidVarianceMatchesDefinition) {
  Eigen::MatrixXd s(2, 3);
  s << 0, 2, 4, 0, 0, 3;
  // centroid (2, 1); squared distances 5, 1, 8
  EXPECT_NEAR(centered_variance(s), 14.0 / 3.0, 1e-15);
}

TEST(Trainer, SameSeedGivesIdenticalBytes) {
  const auto data = generate(small_spec(16, 3, 3, 0.02));
  TrainConfig cfg;
  cfg.k = 4;
  cfg.k_aux = 8;
  cfg.batch_size = 64;
  cfg.epochs = 3;
  cfg.learning_rate = 1e-3;
  cfg.seed = 5;
  const auto a = train<float>(cfg, data.dataset);
  const auto b = train<float>(cfg, data.dataset);
  EXPECT_EQ(encode_checkpoint(a.model), encode_checkpoint(b.model));
  EXPECT_EQ(a.log, b.log);
  ASSERT_EQ(a.log.epochs.size(), 3u);
  cfg.seed = 6;
  const auto c = train<float>(cfg, data.dataset);
  EXPECT_NE(encode_checkpoint(a.model), encode_checkpoint(c.model));
}

TEST(Trainer, LossDropsOnPlantedData) {
  const auto data = generate(small_spec(32, 4, 4, 0.01));
  TrainConfig cfg;
  cfg.k = 4;
  cfg.k_aux = 16;
  cfg.batch_size = 16;
  cfg.epochs = 20;
  cfg.learning_rate = 2e-3;
  cfg.seed = 1;
  const auto r = train<float>(cfg, data.dataset);
  EXPECT_LT(r.log.epochs.back().recon_loss, 0.1 * r.log.epochs.front().recon_loss);
}

TEST(Trainer, FullWidthCodeReconstructsNoiselessData) {
  const auto data = generate(small_spec(16, 4, 4, 0.0));
  TrainConfig cfg;
  cfg.k = 16;
  cfg.k_aux = 16;
  cfg.batch_size = 16;
  cfg.epochs = 40;
  cfg.learning_rate = 2e-3;
  cfg.seed = 2;
  const auto r = train<float>(cfg, data.dataset);
  EXPECT_LT(r.log.epochs.back().recon_loss, 1e-3);
}

TEST(Trainer, DimensionMismatchAndEmpty) {
  ActivationDataset empty;
  empty.dim = 4;
  EXPECT_THROW(train<float>(TrainConfig{}, empty), Error);
}
