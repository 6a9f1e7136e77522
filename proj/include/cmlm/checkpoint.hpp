#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cmlm/encoder.hpp"
#include "cmlm/optim.hpp"
#include "cmlm/params.hpp"
#include "cmlm/vocab.hpp"

namespace cmlm {

// Everything needed to continue a training run bit-for-bit.
struct Checkpoint {
  EncoderConfig config;
  Vocab vocab;
  ParamStore<float> params;
  OptimizerState<float> optimizer;
  std::uint64_t step = 0;  // global updates completed
  std::size_t stage = 0;
  std::string strategy;
  std::string rng_state;
};

// Layout: "CMLMCKPT", u32 version, u64 manifest length, UTF-8 JSON manifest,
// then one record per tensor: u32 name length, name, u8 dtype (0 = f32,
// 1 = f64), u32 rank, u64 extents, little-endian payload. Parameters are
// named "p/<name>", optimizer moments "m/<name>" and "v/<name>". The file is
// written to a temporary sibling and renamed into place.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

// Throws IntegrityError (with the byte offset) on a bad magic, truncation or
// malformed record.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// As load_checkpoint, and throws ConfigError when the stored encoder config
// differs from `expected` in any architectural field.
Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected);

// Serialized encoder config, shared with the embedding tools.
std::string describe(const EncoderConfig& config);

}  // namespace cmlm
