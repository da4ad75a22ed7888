#include "uneq/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace uneq {

void adam_update(std::span<double> param, std::span<const double> grad,
                 std::span<double> m, std::span<double> v,
                 const AdamConfig& cfg, int64_t t) {
  if (param.size() != grad.size() || param.size() != m.size() ||
      param.size() != v.size())
    throw std::invalid_argument("adam_update buffer sizes differ");
  if (t < 1) throw std::invalid_argument("adam update index starts at 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  for (size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

Adam::Adam(const ParamStore& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const auto& e : params.entries()) {
    m_.push_back({e.name, Tensor::zeros(e.tensor.shape())});
    v_.push_back({e.name, Tensor::zeros(e.tensor.shape())});
  }
}

void Adam::step(ParamStore& params, const AdamConfig& cfg, int64_t t) {
  if (m_.size() != params.size())
    throw std::invalid_argument("optimizer does not match parameter store");
  auto entries = params.entries_mut();
  for (size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].tensor;
    p.ensure_grad();
    adam_update(p.value_mut(), p.grad(), m_[i].tensor.value_mut(),
                v_[i].tensor.value_mut(), cfg, t);
    p.quantize_f32();
    m_[i].tensor.quantize_f32();
    v_[i].tensor.quantize_f32();
  }
}

}  // namespace uneq
