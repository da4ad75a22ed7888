#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uneq/rng.hpp"
#include "uneq/tensor.hpp"

namespace uneq {

// Desk-scale defaults: 64-d latent/style/embedding, channel schedule
// [64,64,32,16] for stages 0..3 (4x4 up to 32x32).
struct NetConfig {
  int latent_dim = 64;
  int embed_dim = 64;
  std::vector<int> channels = {64, 64, 32, 16};

  int max_stage() const { return int(channels.size()) - 1; }
  int resolution(int stage) const { return 4 << stage; }
};

// Progressive-growing position: resolution 4 * 2^stage, alpha in [0,1] blends
// the new-stage path against the upsampled previous-stage path while fading in.
struct GrowthState {
  int stage = 0;
  double alpha = 1.0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class ParamStore {
 public:
  Tensor add(std::string name, Tensor t);
  const Tensor& at(std::string_view name) const;
  void replace(std::string_view name, Tensor t);
  bool contains(std::string_view name) const;
  std::span<const NamedTensor> entries() const { return entries_; }
  std::span<NamedTensor> entries_mut() { return entries_; }
  size_t size() const { return entries_.size(); }

 private:
  std::vector<NamedTensor> entries_;
};

double grad_norm(const ParamStore& params);
void zero_grads(ParamStore& params);

// Style-based progressively-growing generator: mapping net z -> w, learned
// 4x4 constant, per-stage conv blocks whose channels are scaled/shifted by an
// affine of w, per-stage toRGB heads, tanh output in [-1,1].
class Generator {
 public:
  static Generator init(const NetConfig& cfg, Rng& rng);
  static Generator from_params(NetConfig cfg, ParamStore params);

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Tensor mapping_forward(Tape& tape, const Tensor& z) const;
  Tensor synthesis_forward(Tape& tape, const Tensor& w,
                           const GrowthState& growth) const;
  Tensor forward(Tape& tape, const Tensor& z, const GrowthState& growth) const;

 private:
  Tensor block_forward(Tape& tape, Tensor x, const Tensor& w, int stage) const;
  Tensor to_rgb(Tape& tape, const Tensor& x, int stage) const;

  NetConfig cfg_;
  ParamStore params_;
};

struct DiscriminatorOut {
  Tensor logit;      // [b,1], raw score
  Tensor embedding;  // [b,embed_dim], pre-logit dense activation
};

// Mirror of the generator: per-stage fromRGB heads and downsampling conv
// blocks, then dense layers producing the embedding and a single raw logit.
class Discriminator {
 public:
  static Discriminator init(const NetConfig& cfg, Rng& rng);
  static Discriminator from_params(NetConfig cfg, ParamStore params);

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  DiscriminatorOut forward(Tape& tape, const Tensor& images,
                           const GrowthState& growth) const;

 private:
  Tensor block_forward(Tape& tape, Tensor x, int stage) const;
  Tensor from_rgb(Tape& tape, const Tensor& images, int stage) const;

  NetConfig cfg_;
  ParamStore params_;
};

// Rebuild configurations from checkpoint entry shapes (the checkpoint format
// carries no architecture block).
NetConfig infer_generator_config(const ParamStore& params);
NetConfig infer_discriminator_config(const ParamStore& params);

}  // namespace uneq
