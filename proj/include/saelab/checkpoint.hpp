#pragma once

// SAECKPT1 checkpoint layout (little-endian):
//
//   "SAECKPT1"
//   u32 d, u32 n_features, u32 k, u32 k_aux
//   d f32                 pre-bias
//   n_features x d f32    encoder, row-major (one row per feature)
//   n_features x d f32    decoder, one column (feature direction) at a time

#include <string>

#include "saelab/binary_io.hpp"
#include "saelab/error.hpp"
#include "saelab/sae.hpp"

namespace saelab {

inline constexpr std::string_view kCheckpointMagic = "SAECKPT1";

template <typename Scalar>
std::vector<unsigned char> encode_checkpoint(const SaeModel<Scalar>& model) {
  check_model(model);
  io::Writer w;
  w.magic(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(model.dim()));
  w.u32(static_cast<std::uint32_t>(model.num_features()));
  w.u32(static_cast<std::uint32_t>(model.k));
  w.u32(static_cast<std::uint32_t>(model.k_aux));
  for (Eigen::Index i = 0; i < model.pre_bias.size(); ++i) {
    w.f32(static_cast<float>(model.pre_bias(i)));
  }
  for (Eigen::Index j = 0; j < model.encoder.rows(); ++j) {
    for (Eigen::Index i = 0; i < model.encoder.cols(); ++i) {
      w.f32(static_cast<float>(model.encoder(j, i)));
    }
  }
  for (Eigen::Index j = 0; j < model.decoder.cols(); ++j) {
    for (Eigen::Index i = 0; i < model.decoder.rows(); ++i) {
      w.f32(static_cast<float>(model.decoder(i, j)));
    }
  }
  return w.buffer();
}

template <typename Scalar>
void save_checkpoint(const SaeModel<Scalar>& model, const std::string& path) {
  io::write_file(path, encode_checkpoint(model));
}

template <typename Scalar = float>
SaeModel<Scalar> decode_checkpoint(io::Reader& r) {
  r.expect_magic(kCheckpointMagic);
  const std::size_t d = r.u32();
  const std::size_t n = r.u32();
  SaeModel<Scalar> m;
  m.k = r.u32();
  m.k_aux = r.u32();
  r.require((d + 2 * n * d) * sizeof(float));
  m.pre_bias.resize(static_cast<Eigen::Index>(d));
  m.encoder.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  m.decoder.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < m.pre_bias.size(); ++i) m.pre_bias(i) = r.f32();
  for (Eigen::Index j = 0; j < m.encoder.rows(); ++j) {
    for (Eigen::Index i = 0; i < m.encoder.cols(); ++i) m.encoder(j, i) = r.f32();
  }
  for (Eigen::Index j = 0; j < m.decoder.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.decoder.rows(); ++i) m.decoder(i, j) = r.f32();
  }
  if (!r.at_end()) fail(ErrorCode::CorruptFile, "trailing bytes after checkpoint");
  if (d == 0 || n == 0) fail(ErrorCode::FormatError, "checkpoint has empty dimensions");
  check_model(m);
  if (m.max_decoder_norm_error() > 1e-5) {
    fail(ErrorCode::InvariantViolation, "checkpoint decoder columns are not unit norm");
  }
  return m;
}

template <typename Scalar = float>
SaeModel<Scalar> load_checkpoint(const std::string& path) {
  auto r = io::Reader::from_file(path);
  return decode_checkpoint<Scalar>(r);
}

}  // namespace saelab
