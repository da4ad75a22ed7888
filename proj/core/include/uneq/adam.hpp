#pragma once

#include <cstdint>
#include <span>

#include "uneq/networks.hpp"

namespace uneq {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.0;  // beta1 = 0 is the conventional adversarial setting
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Standard Adam with bias correction; t is the 1-based update index.
void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v,
                 const AdamConfig& cfg, int64_t t);

// Per-network optimizer. Moment buffers mirror the parameter store shapes and
// are serialized alongside the parameters. Parameters and moments are
// re-quantized to f32 after every step so state at rest is exactly the
// checkpoint payload.
class Adam {
 public:
  Adam() = default;
  explicit Adam(const ParamStore& params);

  void step(ParamStore& params, const AdamConfig& cfg, int64_t t);

  std::span<NamedTensor> moments_m() { return m_; }
  std::span<NamedTensor> moments_v() { return v_; }
  std::span<const NamedTensor> moments_m() const { return m_; }
  std::span<const NamedTensor> moments_v() const { return v_; }

 private:
  std::vector<NamedTensor> m_;
  std::vector<NamedTensor> v_;
};

}  // namespace uneq
