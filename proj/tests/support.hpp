#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "saelab/activation_store.hpp"
#include "saelab/sae.hpp"

namespace saelab::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("saelab_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline ActivationDataset random_dataset(std::mt19937_64& rng, std::size_t episodes,
                                        std::size_t t_max, std::size_t dim) {
  std::uniform_int_distribution<std::size_t> len(1, t_max);
  std::normal_distribution<float> g(0.0f, 1.0f);
  ActivationDataset ds;
  ds.dim = dim;
  ds.layer_name = "layer";
  for (std::size_t e = 0; e < episodes; ++e) {
    EpisodeRecord ep;
    ep.episode_id = e * 7 + 3;
    ep.task_text = "task " + std::to_string(e);
    ep.num_timesteps = len(rng);
    ep.values.resize(ep.num_timesteps * dim);
    for (auto& v : ep.values) v = g(rng);
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

template <typename Scalar>
SaeModel<Scalar> random_model(std::mt19937_64& rng, std::size_t d, std::size_t n, std::size_t k,
                              std::size_t k_aux = 0) {
  std::normal_distribution<double> g(0.0, 1.0);
  SaeModel<Scalar> m;
  m.k = k;
  m.k_aux = k_aux;
  m.encoder.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  m.decoder.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  m.pre_bias.resize(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.encoder.size(); ++i) m.encoder.data()[i] = static_cast<Scalar>(g(rng));
  for (Eigen::Index i = 0; i < m.decoder.size(); ++i) m.decoder.data()[i] = static_cast<Scalar>(g(rng));
  for (Eigen::Index i = 0; i < m.pre_bias.size(); ++i) m.pre_bias[i] = static_cast<Scalar>(0.1 * g(rng));
  m.renormalize_decoder();
  return m;
}

}  // namespace saelab::testing
