#include "uneq/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace uneq {

namespace {

using Impl = std::shared_ptr<detail::TensorImpl>;

std::atomic<uint64_t> g_next_id{1};

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void ensure_grad_buf(const Impl& t) {
  if (t->grad.empty()) t->grad.assign(t->value.size(), 0.0);
}

// Allocates grad buffers up front so backward closures can accumulate
// unconditionally into out and into every grad-requiring input.
void prep_grads(const Tensor& out, std::initializer_list<const Tensor*> ins) {
  ensure_grad_buf(out.impl());
  for (const Tensor* t : ins)
    if (t->requires_grad()) ensure_grad_buf(t->impl());
}

bool track(const Tape& tape, std::initializer_list<const Tensor*> ins) {
  if (!tape.recording()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double quant_f32(double v) { return double(float(v)); }

thread_local detail::KinkProbe* g_kink_probe = nullptr;

void observe_kinks(std::span<const double> values) {
  if (!g_kink_probe) return;
  double min_abs = g_kink_probe->min_abs;
  uint64_t hash = g_kink_probe->sign_hash;
  for (double v : values) {
    min_abs = std::min(min_abs, std::fabs(v));
    hash ^= v > 0.0 ? 0x9eull : 0x31ull;
    hash *= 0x100000001b3ull;
  }
  g_kink_probe->min_abs = min_abs;
  g_kink_probe->sign_hash = hash;
}

}  // namespace

namespace detail {
void set_kink_probe(KinkProbe* probe) { g_kink_probe = probe; }
}  // namespace detail

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    check(d > 0, "shape dims must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// --- Tensor -----------------------------------------------------------------

Tensor Tensor::uninit(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->value.resize(size_t(shape_numel(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  impl->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return uninit(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = uninit(std::move(shape), requires_grad);
  const double q = quant_f32(value);
  for (double& v : t.impl_->value) v = q;
  return t;
}

Tensor Tensor::from(Shape shape, std::span<const double> values,
                    bool requires_grad) {
  Tensor t = uninit(std::move(shape), requires_grad);
  check(values.size() == t.impl_->value.size(),
        "value count does not match shape");
  for (size_t i = 0; i < values.size(); ++i)
    t.impl_->value[i] = quant_f32(values[i]);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = uninit(std::move(shape), requires_grad);
  for (double& v : t.impl_->value) v = quant_f32(rng.next_normal() * stddev);
  return t;
}

double Tensor::item() const {
  check(is_scalar(), "item() requires a scalar tensor");
  return impl_->value[0];
}

void Tensor::ensure_grad() { ensure_grad_buf(impl_); }

void Tensor::zero_grad() {
  for (double& g : impl_->grad) g = 0.0;
}

bool Tensor::all_finite() const {
  for (double v : impl_->value)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::quantize_f32() {
  for (double& v : impl_->value) v = quant_f32(v);
}

Tensor Tensor::detached_copy() const {
  Tensor t = uninit(impl_->shape, false);
  t.impl_->value = impl_->value;
  return t;
}

// --- Tape -------------------------------------------------------------------

void Tape::backward(const Tensor& loss) {
  check(loss.defined() && loss.is_scalar(), "backward requires a scalar loss");
  loss.impl()->grad.resize(1, 0.0);
  loss.impl()->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// --- elementwise ------------------------------------------------------------

namespace {

template <class Fwd, class Bwd>
Tensor unary_op(Tape& tape, const Tensor& x, Fwd fwd, Bwd bwd_factor) {
  bool rg = track(tape, {&x});
  Tensor out = Tensor::uninit(x.shape(), rg);
  auto xv = x.value();
  auto ov = out.value_mut();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = fwd(xv[i]);
  if (rg) {
    prep_grads(out, {&x});
    tape.record([xi = x.impl(), oi = out.impl(), bwd_factor] {
      for (size_t i = 0; i < xi->grad.size(); ++i)
        xi->grad[i] += oi->grad[i] * bwd_factor(xi->value[i], oi->value[i]);
    });
  }
  return out;
}

}  // namespace

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
  observe_kinks(x.value());
  return unary_op(
      tape, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor neg(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return -v; },
      [](double, double) { return -1.0; });
}

Tensor abs(Tape& tape, const Tensor& x) {
  observe_kinks(x.value());
  return unary_op(
      tape, x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(Tape& tape, const Tensor& x) {
  return unary_op(
      tape, x, [](double v) { return v * v; },
      [](double v, double) { return 2.0 * v; });
}

Tensor sqrt_eps(Tape& tape, const Tensor& x, double eps) {
  return unary_op(
      tape, x, [eps](double v) { return std::sqrt(v + eps); },
      [](double, double y) { return 0.5 / y; });
}

Tensor scale(Tape& tape, const Tensor& x, double c) {
  return unary_op(
      tape, x, [c](double v) { return c * v; },
      [c](double, double) { return c; });
}

Tensor add_const(Tape& tape, const Tensor& x, double c) {
  return unary_op(
      tape, x, [c](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

namespace {

enum class BinKind { Add, Sub, Mul, Div };

Tensor binary_op(Tape& tape, const Tensor& a, const Tensor& b, BinKind kind) {
  check(a.shape() == b.shape(), "elementwise op requires equal shapes, got " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
  bool rg = track(tape, {&a, &b});
  Tensor out = Tensor::uninit(a.shape(), rg);
  auto av = a.value();
  auto bv = b.value();
  auto ov = out.value_mut();
  switch (kind) {
    case BinKind::Add:
      for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + bv[i];
      break;
    case BinKind::Sub:
      for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] - bv[i];
      break;
    case BinKind::Mul:
      for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * bv[i];
      break;
    case BinKind::Div:
      for (size_t i = 0; i < av.size(); ++i) ov[i] = av[i] / bv[i];
      break;
  }
  if (rg) {
    prep_grads(out, {&a, &b});
    tape.record([ai = a.impl(), bi = b.impl(), oi = out.impl(), kind] {
      const auto& g = oi->grad;
      const bool ga = !ai->grad.empty();
      const bool gb = !bi->grad.empty();
      switch (kind) {
        case BinKind::Add:
          if (ga)
            for (size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
          if (gb)
            for (size_t i = 0; i < g.size(); ++i) bi->grad[i] += g[i];
          break;
        case BinKind::Sub:
          if (ga)
            for (size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i];
          if (gb)
            for (size_t i = 0; i < g.size(); ++i) bi->grad[i] -= g[i];
          break;
        case BinKind::Mul:
          if (ga)
            for (size_t i = 0; i < g.size(); ++i)
              ai->grad[i] += g[i] * bi->value[i];
          if (gb)
            for (size_t i = 0; i < g.size(); ++i)
              bi->grad[i] += g[i] * ai->value[i];
          break;
        case BinKind::Div:
          if (ga)
            for (size_t i = 0; i < g.size(); ++i)
              ai->grad[i] += g[i] / bi->value[i];
          if (gb)
            for (size_t i = 0; i < g.size(); ++i)
              bi->grad[i] -= g[i] * ai->value[i] / (bi->value[i] * bi->value[i]);
          break;
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::Add);
}
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::Sub);
}
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::Mul);
}
Tensor div(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, a, b, BinKind::Div);
}

// --- linear algebra -----------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  check(a.shape().size() == 2 && b.shape().size() == 2,
        "matmul requires 2-D tensors");
  check(a.shape()[1] == b.shape()[0],
        "matmul inner dims differ: " + shape_str(a.shape()) + " x " +
            shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  bool rg = track(tape, {&a, &b});
  Tensor out = Tensor::uninit({m, n}, rg);
  auto av = a.value();
  auto bv = b.value();
  auto ov = out.value_mut();
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      const double ail = av[size_t(i) * k + l];
      const double* brow = &bv[size_t(l) * n];
      double* orow = &ov[size_t(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += ail * brow[j];
    }
  if (rg) {
    prep_grads(out, {&a, &b});
    tape.record([ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
      const auto& g = oi->grad;
      if (!ai->grad.empty()) {
        // dA = G * B^T
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            double acc = 0.0;
            const double* grow = &g[size_t(i) * n];
            const double* brow = &bi->value[size_t(l) * n];
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ai->grad[size_t(i) * k + l] += acc;
          }
      }
      if (!bi->grad.empty()) {
        // dB = A^T * G
        for (int i = 0; i < m; ++i)
          for (int l = 0; l < k; ++l) {
            const double ail = ai->value[size_t(i) * k + l];
            const double* grow = &g[size_t(i) * n];
            double* brow = &bi->grad[size_t(l) * n];
            for (int j = 0; j < n; ++j) brow[j] += ail * grow[j];
          }
      }
    });
  }
  return out;
}

// --- convolutions ---------------------------------------------------------

namespace {

void check_conv_shapes(const Tensor& input, const Tensor& weight,
                       const Tensor& bias, int ksize) {
  check(input.shape().size() == 4, "conv input must be [b,c,h,w]");
  check(weight.shape().size() == 4 && weight.shape()[2] == ksize &&
            weight.shape()[3] == ksize,
        "conv weight must be [cout,cin," + std::to_string(ksize) + "," +
            std::to_string(ksize) + "]");
  check(bias.shape().size() == 1 && bias.shape()[0] == weight.shape()[0],
        "conv bias must be [cout]");
  check(input.shape()[1] == weight.shape()[1],
        "conv channel mismatch: input " + shape_str(input.shape()) +
            " weight " + shape_str(weight.shape()));
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight,
              const Tensor& bias) {
  check_conv_shapes(input, weight, bias, 3);
  const int b = input.shape()[0], cin = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  const int cout = weight.shape()[0];
  bool rg = track(tape, {&input, &weight, &bias});
  Tensor out = Tensor::uninit({b, cout, h, w}, rg);
  auto iv = input.value();
  auto wv = weight.value();
  auto bv = bias.value();
  auto ov = out.value_mut();
  const size_t plane = size_t(h) * w;
  for (int ib = 0; ib < b; ++ib)
    for (int co = 0; co < cout; ++co) {
      double* oplane = &ov[(size_t(ib) * cout + co) * plane];
      const double bias_v = bv[co];
      for (size_t p = 0; p < plane; ++p) oplane[p] = bias_v;
      for (int ci = 0; ci < cin; ++ci) {
        const double* iplane = &iv[(size_t(ib) * cin + ci) * plane];
        const double* wk = &wv[(size_t(co) * cin + ci) * 9];
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const double wval = wk[ky * 3 + kx];
            const int dy = ky - 1, dx = kx - 1;
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            for (int y = y0; y < y1; ++y) {
              double* orow = &oplane[size_t(y) * w];
              const double* irow = &iplane[size_t(y + dy) * w + dx];
              for (int x = x0; x < x1; ++x) orow[x] += wval * irow[x];
            }
          }
      }
    }
  if (rg) {
    prep_grads(out, {&input, &weight, &bias});
    tape.record([ii = input.impl(), wi = weight.impl(), bi = bias.impl(),
                 oi = out.impl(), b, cin, cout, h, w, plane] {
      const auto& g = oi->grad;
      if (!ii->grad.empty()) {
        for (int ib = 0; ib < b; ++ib)
          for (int co = 0; co < cout; ++co) {
            const double* gplane = &g[(size_t(ib) * cout + co) * plane];
            for (int ci = 0; ci < cin; ++ci) {
              double* giplane = &ii->grad[(size_t(ib) * cin + ci) * plane];
              const double* wk = &wi->value[(size_t(co) * cin + ci) * 9];
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const double wval = wk[ky * 3 + kx];
                  const int dy = ky - 1, dx = kx - 1;
                  const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                  const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                  for (int y = y0; y < y1; ++y) {
                    const double* grow = &gplane[size_t(y) * w];
                    double* girow = &giplane[size_t(y + dy) * w + dx];
                    for (int x = x0; x < x1; ++x) girow[x] += wval * grow[x];
                  }
                }
            }
          }
      }
      if (!wi->grad.empty()) {
        for (int co = 0; co < cout; ++co)
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int dy = ky - 1, dx = kx - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                double acc = 0.0;
                for (int ib = 0; ib < b; ++ib) {
                  const double* gplane = &g[(size_t(ib) * cout + co) * plane];
                  const double* iplane =
                      &ii->value[(size_t(ib) * cin + ci) * plane];
                  for (int y = y0; y < y1; ++y) {
                    const double* grow = &gplane[size_t(y) * w];
                    const double* irow = &iplane[size_t(y + dy) * w + dx];
                    for (int x = x0; x < x1; ++x) acc += grow[x] * irow[x];
                  }
                }
                wi->grad[(size_t(co) * cin + ci) * 9 + ky * 3 + kx] += acc;
              }
      }
      if (!bi->grad.empty()) {
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (int ib = 0; ib < b; ++ib) {
            const double* gplane = &g[(size_t(ib) * cout + co) * plane];
            for (size_t p = 0; p < plane; ++p) acc += gplane[p];
          }
          bi->grad[co] += acc;
        }
      }
    });
  }
  return out;
}

Tensor conv1x1(Tape& tape, const Tensor& input, const Tensor& weight,
               const Tensor& bias) {
  check_conv_shapes(input, weight, bias, 1);
  const int b = input.shape()[0], cin = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  const int cout = weight.shape()[0];
  bool rg = track(tape, {&input, &weight, &bias});
  Tensor out = Tensor::uninit({b, cout, h, w}, rg);
  auto iv = input.value();
  auto wv = weight.value();
  auto bv = bias.value();
  auto ov = out.value_mut();
  const size_t plane = size_t(h) * w;
  for (int ib = 0; ib < b; ++ib)
    for (int co = 0; co < cout; ++co) {
      double* oplane = &ov[(size_t(ib) * cout + co) * plane];
      for (size_t p = 0; p < plane; ++p) oplane[p] = bv[co];
      for (int ci = 0; ci < cin; ++ci) {
        const double wval = wv[size_t(co) * cin + ci];
        const double* iplane = &iv[(size_t(ib) * cin + ci) * plane];
        for (size_t p = 0; p < plane; ++p) oplane[p] += wval * iplane[p];
      }
    }
  if (rg) {
    prep_grads(out, {&input, &weight, &bias});
    tape.record([ii = input.impl(), wi = weight.impl(), bi = bias.impl(),
                 oi = out.impl(), b, cin, cout, plane] {
      const auto& g = oi->grad;
      if (!ii->grad.empty()) {
        for (int ib = 0; ib < b; ++ib)
          for (int co = 0; co < cout; ++co) {
            const double* gplane = &g[(size_t(ib) * cout + co) * plane];
            for (int ci = 0; ci < cin; ++ci) {
              const double wval = wi->value[size_t(co) * cin + ci];
              double* giplane = &ii->grad[(size_t(ib) * cin + ci) * plane];
              for (size_t p = 0; p < plane; ++p)
                giplane[p] += wval * gplane[p];
            }
          }
      }
      if (!wi->grad.empty()) {
        for (int co = 0; co < cout; ++co)
          for (int ci = 0; ci < cin; ++ci) {
            double acc = 0.0;
            for (int ib = 0; ib < b; ++ib) {
              const double* gplane = &g[(size_t(ib) * cout + co) * plane];
              const double* iplane =
                  &ii->value[(size_t(ib) * cin + ci) * plane];
              for (size_t p = 0; p < plane; ++p) acc += gplane[p] * iplane[p];
            }
            wi->grad[size_t(co) * cin + ci] += acc;
          }
      }
      if (!bi->grad.empty()) {
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (int ib = 0; ib < b; ++ib) {
            const double* gplane = &g[(size_t(ib) * cout + co) * plane];
            for (size_t p = 0; p < plane; ++p) acc += gplane[p];
          }
          bi->grad[co] += acc;
        }
      }
    });
  }
  return out;
}

// --- resampling -------------------------------------------------------------

Tensor upsample_nearest2x(Tape& tape, const Tensor& input) {
  check(input.shape().size() == 4, "upsample input must be [b,c,h,w]");
  const int b = input.shape()[0], c = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  bool rg = track(tape, {&input});
  Tensor out = Tensor::uninit({b, c, 2 * h, 2 * w}, rg);
  auto iv = input.value();
  auto ov = out.value_mut();
  const size_t iplane = size_t(h) * w, oplane = iplane * 4;
  for (int bc = 0; bc < b * c; ++bc) {
    const double* ip = &iv[size_t(bc) * iplane];
    double* op = &ov[size_t(bc) * oplane];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double v = ip[size_t(y) * w + x];
        double* o0 = &op[size_t(2 * y) * 2 * w + 2 * x];
        double* o1 = o0 + size_t(2) * w;
        o0[0] = v;
        o0[1] = v;
        o1[0] = v;
        o1[1] = v;
      }
  }
  if (rg) {
    prep_grads(out, {&input});
    tape.record([ii = input.impl(), oi = out.impl(), b, c, h, w, iplane,
                 oplane] {
      for (int bc = 0; bc < b * c; ++bc) {
        double* gip = &ii->grad[size_t(bc) * iplane];
        const double* gop = &oi->grad[size_t(bc) * oplane];
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double* g0 = &gop[size_t(2 * y) * 2 * w + 2 * x];
            const double* g1 = g0 + size_t(2) * w;
            gip[size_t(y) * w + x] += g0[0] + g0[1] + g1[0] + g1[1];
          }
      }
    });
  }
  return out;
}

Tensor avgpool2x(Tape& tape, const Tensor& input) {
  check(input.shape().size() == 4, "avgpool input must be [b,c,h,w]");
  const int b = input.shape()[0], c = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  check(h % 2 == 0 && w % 2 == 0, "avgpool2x requires even spatial dims");
  bool rg = track(tape, {&input});
  const int oh = h / 2, ow = w / 2;
  Tensor out = Tensor::uninit({b, c, oh, ow}, rg);
  auto iv = input.value();
  auto ov = out.value_mut();
  const size_t iplane = size_t(h) * w, oplane = size_t(oh) * ow;
  for (int bc = 0; bc < b * c; ++bc) {
    const double* ip = &iv[size_t(bc) * iplane];
    double* op = &ov[size_t(bc) * oplane];
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        const double* i0 = &ip[size_t(2 * y) * w + 2 * x];
        const double* i1 = i0 + w;
        op[size_t(y) * ow + x] = (i0[0] + i0[1] + i1[0] + i1[1]) * 0.25;
      }
  }
  if (rg) {
    prep_grads(out, {&input});
    tape.record(
        [ii = input.impl(), oi = out.impl(), b, c, oh, ow, w, iplane, oplane] {
          for (int bc = 0; bc < b * c; ++bc) {
            double* gip = &ii->grad[size_t(bc) * iplane];
            const double* gop = &oi->grad[size_t(bc) * oplane];
            for (int y = 0; y < oh; ++y)
              for (int x = 0; x < ow; ++x) {
                const double g = gop[size_t(y) * ow + x] * 0.25;
                double* g0 = &gip[size_t(2 * y) * w + 2 * x];
                double* g1 = g0 + w;
                g0[0] += g;
                g0[1] += g;
                g1[0] += g;
                g1[1] += g;
              }
          }
        });
  }
  return out;
}

// --- normalization ------------------------------------------------------------

Tensor pixel_norm(Tape& tape, const Tensor& input) {
  check(input.shape().size() == 4, "pixel_norm input must be [b,c,h,w]");
  constexpr double kEps = 1e-8;
  const int b = input.shape()[0], c = input.shape()[1];
  const int h = input.shape()[2], w = input.shape()[3];
  bool rg = track(tape, {&input});
  Tensor out = Tensor::uninit(input.shape(), rg);
  auto iv = input.value();
  auto ov = out.value_mut();
  const size_t plane = size_t(h) * w;
  std::vector<double> scale_inv(size_t(b) * plane);
  for (int ib = 0; ib < b; ++ib)
    for (size_t p = 0; p < plane; ++p) {
      double msq = 0.0;
      for (int ci = 0; ci < c; ++ci)
        msq += iv[(size_t(ib) * c + ci) * plane + p] *
               iv[(size_t(ib) * c + ci) * plane + p];
      msq /= c;
      const double s = 1.0 / std::sqrt(msq + kEps);
      scale_inv[size_t(ib) * plane + p] = s;
      for (int ci = 0; ci < c; ++ci)
        ov[(size_t(ib) * c + ci) * plane + p] =
            iv[(size_t(ib) * c + ci) * plane + p] * s;
    }
  if (rg) {
    prep_grads(out, {&input});
    tape.record([ii = input.impl(), oi = out.impl(), sinv = std::move(scale_inv),
                 b, c, plane] {
      for (int ib = 0; ib < b; ++ib)
        for (size_t p = 0; p < plane; ++p) {
          const double s = sinv[size_t(ib) * plane + p];
          double dot = 0.0;
          for (int ci = 0; ci < c; ++ci)
            dot += oi->grad[(size_t(ib) * c + ci) * plane + p] *
                   ii->value[(size_t(ib) * c + ci) * plane + p];
          const double k = dot * s * s * s / c;
          for (int ci = 0; ci < c; ++ci) {
            const size_t idx = (size_t(ib) * c + ci) * plane + p;
            ii->grad[idx] += oi->grad[idx] * s - ii->value[idx] * k;
          }
        }
    });
  }
  return out;
}

// --- reductions -------------------------------------------------------------

Tensor mean(Tape& tape, const Tensor& x) {
  bool rg = track(tape, {&x});
  Tensor out = Tensor::uninit({1}, rg);
  auto xv = x.value();
  double acc = 0.0;
  for (double v : xv) acc += v;
  const double n = double(xv.size());
  out.value_mut()[0] = acc / n;
  if (rg) {
    prep_grads(out, {&x});
    tape.record([xi = x.impl(), oi = out.impl(), n] {
      const double g = oi->grad[0] / n;
      for (double& gi : xi->grad) gi += g;
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  bool rg = track(tape, {&x});
  Tensor out = Tensor::uninit({1}, rg);
  double acc = 0.0;
  for (double v : x.value()) acc += v;
  out.value_mut()[0] = acc;
  if (rg) {
    prep_grads(out, {&x});
    tape.record([xi = x.impl(), oi = out.impl()] {
      const double g = oi->grad[0];
      for (double& gi : xi->grad) gi += g;
    });
  }
  return out;
}

Tensor variance(Tape& tape, const Tensor& x) {
  bool rg = track(tape, {&x});
  Tensor out = Tensor::uninit({1}, rg);
  auto xv = x.value();
  const double n = double(xv.size());
  double mu = 0.0;
  for (double v : xv) mu += v;
  mu /= n;
  double acc = 0.0;
  for (double v : xv) acc += (v - mu) * (v - mu);
  out.value_mut()[0] = acc / n;
  if (rg) {
    prep_grads(out, {&x});
    tape.record([xi = x.impl(), oi = out.impl(), mu, n] {
      const double g = oi->grad[0] * 2.0 / n;
      for (size_t i = 0; i < xi->grad.size(); ++i)
        xi->grad[i] += g * (xi->value[i] - mu);
    });
  }
  return out;
}

namespace {

Tensor row_reduce(Tape& tape, const Tensor& x, bool take_mean) {
  check(x.shape().size() == 2, "row reduction requires a [r,c] tensor");
  const int r = x.shape()[0], c = x.shape()[1];
  bool rg = track(tape, {&x});
  Tensor out = Tensor::uninit({r}, rg);
  auto xv = x.value();
  auto ov = out.value_mut();
  const double denom = take_mean ? double(c) : 1.0;
  for (int i = 0; i < r; ++i) {
    double acc = 0.0;
    for (int j = 0; j < c; ++j) acc += xv[size_t(i) * c + j];
    ov[i] = acc / denom;
  }
  if (rg) {
    prep_grads(out, {&x});
    tape.record([xi = x.impl(), oi = out.impl(), r, c, denom] {
      for (int i = 0; i < r; ++i) {
        const double g = oi->grad[i] / denom;
        for (int j = 0; j < c; ++j) xi->grad[size_t(i) * c + j] += g;
      }
    });
  }
  return out;
}

}  // namespace

Tensor row_mean(Tape& tape, const Tensor& x) { return row_reduce(tape, x, true); }
Tensor row_sum(Tape& tape, const Tensor& x) { return row_reduce(tape, x, false); }

Tensor spatial_mean(Tape& tape, const Tensor& x) {
  check(x.shape().size() == 4, "spatial_mean input must be [b,c,h,w]");
  const int b = x.shape()[0], c = x.shape()[1];
  const size_t plane = size_t(x.shape()[2]) * x.shape()[3];
  bool rg = track(tape, {&x});
  Tensor out = Tensor::uninit({b, c}, rg);
  auto xv = x.value();
  auto ov = out.value_mut();
  for (int bc = 0; bc < b * c; ++bc) {
    double acc = 0.0;
    const double* p = &xv[size_t(bc) * plane];
    for (size_t i = 0; i < plane; ++i) acc += p[i];
    ov[bc] = acc / double(plane);
  }
  if (rg) {
    prep_grads(out, {&x});
    tape.record([xi = x.impl(), oi = out.impl(), b, c, plane] {
      for (int bc = 0; bc < b * c; ++bc) {
        const double g = oi->grad[bc] / double(plane);
        double* p = &xi->grad[size_t(bc) * plane];
        for (size_t i = 0; i < plane; ++i) p[i] += g;
      }
    });
  }
  return out;
}

// --- structural -------------------------------------------------------------

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  check(shape_numel(shape) == x.size(), "reshape must preserve element count");
  bool rg = track(tape, {&x});
  Tensor out = Tensor::uninit(std::move(shape), rg);
  auto xv = x.value();
  auto ov = out.value_mut();
  for (size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i];
  if (rg) {
    prep_grads(out, {&x});
    tape.record([xi = x.impl(), oi = out.impl()] {
      for (size_t i = 0; i < xi->grad.size(); ++i)
        xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& x, int start, int len) {
  check(x.shape().size() == 2, "slice_cols requires a [r,c] tensor");
  const int r = x.shape()[0], c = x.shape()[1];
  check(start >= 0 && len > 0 && start + len <= c, "slice_cols out of range");
  bool rg = track(tape, {&x});
  Tensor out = Tensor::uninit({r, len}, rg);
  auto xv = x.value();
  auto ov = out.value_mut();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < len; ++j)
      ov[size_t(i) * len + j] = xv[size_t(i) * c + start + j];
  if (rg) {
    prep_grads(out, {&x});
    tape.record([xi = x.impl(), oi = out.impl(), r, c, start, len] {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j)
          xi->grad[size_t(i) * c + start + j] += oi->grad[size_t(i) * len + j];
    });
  }
  return out;
}

Tensor broadcast_rows(Tape& tape, const Tensor& v, int rows) {
  check(v.shape().size() == 1, "broadcast_rows requires a [c] vector");
  check(rows > 0, "broadcast_rows requires rows > 0");
  const int c = v.shape()[0];
  bool rg = track(tape, {&v});
  Tensor out = Tensor::uninit({rows, c}, rg);
  auto vv = v.value();
  auto ov = out.value_mut();
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < c; ++j) ov[size_t(i) * c + j] = vv[j];
  if (rg) {
    prep_grads(out, {&v});
    tape.record([vi = v.impl(), oi = out.impl(), rows, c] {
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < c; ++j)
          vi->grad[j] += oi->grad[size_t(i) * c + j];
    });
  }
  return out;
}

Tensor broadcast_batch(Tape& tape, const Tensor& x, int batch) {
  check(!x.shape().empty() && x.shape()[0] == 1,
        "broadcast_batch requires leading dim 1");
  check(batch > 0, "broadcast_batch requires batch > 0");
  Shape oshape = x.shape();
  oshape[0] = batch;
  bool rg = track(tape, {&x});
  Tensor out = Tensor::uninit(std::move(oshape), rg);
  auto xv = x.value();
  auto ov = out.value_mut();
  const size_t rest = xv.size();
  for (int ib = 0; ib < batch; ++ib)
    for (size_t i = 0; i < rest; ++i) ov[size_t(ib) * rest + i] = xv[i];
  if (rg) {
    prep_grads(out, {&x});
    tape.record([xi = x.impl(), oi = out.impl(), batch, rest] {
      for (int ib = 0; ib < batch; ++ib)
        for (size_t i = 0; i < rest; ++i)
          xi->grad[i] += oi->grad[size_t(ib) * rest + i];
    });
  }
  return out;
}

Tensor modulate(Tape& tape, const Tensor& x, const Tensor& scl,
                const Tensor& shf) {
  check(x.shape().size() == 4, "modulate input must be [b,c,h,w]");
  const int b = x.shape()[0], c = x.shape()[1];
  const Shape expect{b, c};
  check(scl.shape() == expect && shf.shape() == expect,
        "modulate scale/shift must be [b,c]");
  bool rg = track(tape, {&x, &scl, &shf});
  Tensor out = Tensor::uninit(x.shape(), rg);
  auto xv = x.value();
  auto sv = scl.value();
  auto tv = shf.value();
  auto ov = out.value_mut();
  const size_t plane = size_t(x.shape()[2]) * x.shape()[3];
  for (int bc = 0; bc < b * c; ++bc) {
    const double s = sv[bc], t = tv[bc];
    const double* xp = &xv[size_t(bc) * plane];
    double* op = &ov[size_t(bc) * plane];
    for (size_t p = 0; p < plane; ++p) op[p] = xp[p] * s + t;
  }
  if (rg) {
    prep_grads(out, {&x, &scl, &shf});
    tape.record([xi = x.impl(), si = scl.impl(), ti = shf.impl(),
                 oi = out.impl(), b, c, plane] {
      for (int bc = 0; bc < b * c; ++bc) {
        const double* gp = &oi->grad[size_t(bc) * plane];
        if (!xi->grad.empty()) {
          const double s = si->value[bc];
          double* gxp = &xi->grad[size_t(bc) * plane];
          for (size_t p = 0; p < plane; ++p) gxp[p] += gp[p] * s;
        }
        if (!si->grad.empty()) {
          const double* xp = &xi->value[size_t(bc) * plane];
          double acc = 0.0;
          for (size_t p = 0; p < plane; ++p) acc += gp[p] * xp[p];
          si->grad[bc] += acc;
        }
        if (!ti->grad.empty()) {
          double acc = 0.0;
          for (size_t p = 0; p < plane; ++p) acc += gp[p];
          ti->grad[bc] += acc;
        }
      }
    });
  }
  return out;
}

// --- fused losses -------------------------------------------------------------

Tensor bce_with_logits(Tape& tape, const Tensor& logits, double label) {
  check(label == 0.0 || label == 1.0, "bce label must be 0 or 1");
  bool rg = track(tape, {&logits});
  Tensor out = Tensor::uninit({1}, rg);
  auto zv = logits.value();
  const double n = double(zv.size());
  double acc = 0.0;
  for (double z : zv)
    acc += std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::fabs(z)));
  out.value_mut()[0] = acc / n;
  if (rg) {
    prep_grads(out, {&logits});
    tape.record([zi = logits.impl(), oi = out.impl(), label, n] {
      const double g = oi->grad[0] / n;
      for (size_t i = 0; i < zi->grad.size(); ++i)
        zi->grad[i] += g * (stable_sigmoid(zi->value[i]) - label);
    });
  }
  return out;
}

Tensor pairwise_l1_diversity(Tape& tape, const Tensor& m) {
  check(m.shape().size() == 2, "pairwise_l1_diversity requires [b,c]");
  const int b = m.shape()[0], c = m.shape()[1];
  check(b >= 2, "pairwise_l1_diversity requires a batch of at least 2");
  bool rg = track(tape, {&m});
  Tensor out = Tensor::uninit({1}, rg);
  auto mv = m.value();
  const double pairs = double(b) * (b - 1) / 2.0;
  double acc = 0.0;
  for (int i = 0; i < b; ++i)
    for (int j = i + 1; j < b; ++j)
      for (int ch = 0; ch < c; ++ch)
        acc += std::fabs(mv[size_t(i) * c + ch] - mv[size_t(j) * c + ch]);
  out.value_mut()[0] = acc / (pairs * c);
  if (rg) {
    prep_grads(out, {&m});
    tape.record([mi = m.impl(), oi = out.impl(), b, c, pairs] {
      const double g = oi->grad[0] / (pairs * c);
      for (int i = 0; i < b; ++i)
        for (int j = i + 1; j < b; ++j)
          for (int ch = 0; ch < c; ++ch) {
            const double d =
                mi->value[size_t(i) * c + ch] - mi->value[size_t(j) * c + ch];
            const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            mi->grad[size_t(i) * c + ch] += g * s;
            mi->grad[size_t(j) * c + ch] -= g * s;
          }
    });
  }
  return out;
}

}  // namespace uneq
