#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "uneq/training.hpp"

namespace uneq {

// Binary layout, little-endian:
//   magic "UNEQ1" (5 bytes)
//   version u32
//   config hash u64
//   entry count u32
//   entries: name length u32, name bytes, rank u32, dims u32[rank],
//            payload f32[prod(dims)]
//   trailer: rng state u64[4], step u64, stage u32, alpha f32
inline constexpr uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointData {
  uint64_t config_hash = 0;
  std::vector<NamedTensor> entries;
  std::array<uint64_t, 4> rng_state{};
  uint64_t step = 0;
  uint32_t stage = 0;
  float alpha = 1.0f;

  const Tensor* find(std::string_view name) const;
};

void save_checkpoint(const std::filesystem::path& path, const TrainState& state,
                     uint64_t config_hash);

// Parses the whole file before returning; a truncated or corrupt file throws
// CheckpointError and leaves nothing behind.
CheckpointData load_checkpoint(const std::filesystem::path& path);

// Rebuilds a full training state; validates the config hash and every entry
// shape against a freshly initialized state.
TrainState restore_train_state(const CheckpointData& data,
                               const TrainConfig& cfg);

struct GeneratorPair {
  Generator g1;
  Generator g2;
  GrowthState growth;
};

// Render-side reconstruction: only the generator parameters and the growth
// trailer are needed, so no TrainConfig is required.
GeneratorPair load_generators(const CheckpointData& data);

}  // namespace uneq
