#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uneq/rng.hpp"

namespace uneq {

// Dense shapes are row-major throughout; images are [batch, channels, h, w].
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a grad buffer is requested
  bool requires_grad = false;
  uint64_t id = 0;
};

// Test instrumentation: while set, every kinked op (leaky_relu, abs) records
// the minimum |input| it sees plus an order-sensitive hash of the input
// signs. Finite-difference checks compare the sign hashes of their two probe
// evaluations; a mismatch means the probes straddle a gradient kink and the
// difference quotient is invalid there.
struct KinkProbe {
  double min_abs = 1e300;
  uint64_t sign_hash = 0xcbf29ce484222325ull;
};
void set_kink_probe(KinkProbe* probe);
}  // namespace detail

// Handle to one node of the autodiff graph. Leaf values are quantized to f32
// on creation and parameters are re-quantized after every optimizer update,
// so everything at rest is exactly representable in the f32 checkpoint
// payload; arithmetic inside a step runs in double.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::span<const double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);
  // Output node of an op; value buffer allocated but not filled.
  static Tensor uninit(Shape shape, bool requires_grad);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t size() const { return int64_t(impl_->value.size()); }
  bool is_scalar() const { return size() == 1; }

  std::span<const double> value() const { return impl_->value; }
  std::span<double> value_mut() { return impl_->value; }
  double item() const;  // scalar tensors only

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> grad_mut() { return impl_->grad; }
  void ensure_grad();
  void zero_grad();

  uint64_t id() const { return impl_->id; }

  bool all_finite() const;
  // Round every element to the nearest f32 (parameters at rest).
  void quantize_f32();
  // Same values, fresh leaf, no gradient tracking.
  Tensor detached_copy() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl)
      : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Record of one forward pass. Ops append their backward closures in recording
// order; backward() replays them in exact reverse order. Graphs are rebuilt
// every step, so a tape is cheap and short-lived.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
  }
  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  size_t op_count() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards. Grad buffers
  // accumulate; calling twice without zeroing doubles them.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> ops_;
  bool recording_ = true;
};

// --- ops ------------------------------------------------------------------
// Every op validates shapes, computes the forward value, and registers its
// backward closure when (a) the tape is recording and (b) any input requires
// grad. Outputs of untracked ops act as constants downstream, which is how
// stop-gradients are expressed.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// 3x3 kernel, stride 1, zero padding 1; weight [cout,cin,3,3], bias [cout].
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight,
              const Tensor& bias);
// Pointwise conv; weight [cout,cin,1,1], bias [cout].
Tensor conv1x1(Tape& tape, const Tensor& input, const Tensor& weight,
               const Tensor& bias);
Tensor upsample_nearest2x(Tape& tape, const Tensor& input);
Tensor avgpool2x(Tape& tape, const Tensor& input);

Tensor leaky_relu(Tape& tape, const Tensor& input, double slope);
Tensor sigmoid(Tape& tape, const Tensor& input);
Tensor tanh(Tape& tape, const Tensor& input);
// Per-pixel channel-vector normalization x / sqrt(mean_c(x^2) + 1e-8).
Tensor pixel_norm(Tape& tape, const Tensor& input);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor div(Tape& tape, const Tensor& a, const Tensor& b);
Tensor neg(Tape& tape, const Tensor& x);
Tensor abs(Tape& tape, const Tensor& x);
Tensor square(Tape& tape, const Tensor& x);
Tensor sqrt_eps(Tape& tape, const Tensor& x, double eps);
Tensor scale(Tape& tape, const Tensor& x, double c);
Tensor add_const(Tape& tape, const Tensor& x, double c);

Tensor mean(Tape& tape, const Tensor& x);      // -> [1]
Tensor sum(Tape& tape, const Tensor& x);       // -> [1]
Tensor variance(Tape& tape, const Tensor& x);  // population variance -> [1]
Tensor row_mean(Tape& tape, const Tensor& x);  // [r,c] -> [r]
Tensor row_sum(Tape& tape, const Tensor& x);   // [r,c] -> [r]
// Per-image per-channel spatial mean: [b,c,h,w] -> [b,c].
Tensor spatial_mean(Tape& tape, const Tensor& x);

Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
Tensor slice_cols(Tape& tape, const Tensor& x, int start, int len);
Tensor broadcast_rows(Tape& tape, const Tensor& v, int rows);  // [c] -> [r,c]
Tensor broadcast_batch(Tape& tape, const Tensor& x, int batch);  // [1,..]->[b,..]
// y[b,c,h,w] = x[b,c,h,w] * scl[b,c] + shf[b,c]
Tensor modulate(Tape& tape, const Tensor& x, const Tensor& scl,
                const Tensor& shf);

// Mean binary cross-entropy of sigmoid(logits) against a constant label,
// computed in the numerically stable logits form.
Tensor bce_with_logits(Tape& tape, const Tensor& logits, double label);
// Mean over unordered row pairs of the per-column mean absolute difference;
// m is [b,c], b >= 2.
Tensor pairwise_l1_diversity(Tape& tape, const Tensor& m);

}  // namespace uneq
