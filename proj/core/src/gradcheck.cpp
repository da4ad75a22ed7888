#include "uneq/gradcheck.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <stdexcept>

#include "uneq/losses.hpp"
#include "uneq/networks.hpp"

namespace uneq {

namespace {

constexpr double kEps = 1e-3;

double eval_scalar(const std::function<Tensor(Tape&, const Tensor&)>& f,
                   const Tensor& x) {
  Tape tape;
  tape.set_recording(false);
  return f(tape, x).item();
}

struct ProbedEval {
  double value = 0.0;
  uint64_t sign_hash = 0;
};

ProbedEval eval_probed(const std::function<Tensor(Tape&, const Tensor&)>& f,
                       const Tensor& x) {
  detail::KinkProbe probe;
  detail::set_kink_probe(&probe);
  const double value = eval_scalar(f, x);
  detail::set_kink_probe(nullptr);
  return {value, probe.sign_hash};
}

}  // namespace

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const Tensor& x, double eps) {
  if (!x.defined()) throw std::invalid_argument("grad_check needs an input");
  if (eps <= 0.0) throw std::invalid_argument("eps must be positive");
  Tensor probe = Tensor::from(x.shape(), x.value(), true);
  std::vector<double> autodiff;
  {
    Tape tape;
    Tensor y = f(tape, probe);
    if (!y.is_scalar())
      throw std::invalid_argument("grad_check requires scalar-valued f");
    tape.backward(y);
    auto g = probe.grad();
    autodiff.assign(g.begin(), g.end());
    if (autodiff.empty()) autodiff.assign(size_t(probe.size()), 0.0);
  }
  double max_rel = 0.0;
  auto values = probe.value_mut();
  for (size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    double fd = 0.0;
    bool resolved = false;
    // Central differences are only meaningful on one smooth piece. If the
    // two probe points straddle a leaky_relu/abs kink (their sign signatures
    // differ), the step is shrunk for this coordinate until both sit on the
    // same piece; a coordinate pinned exactly onto a kink stays unresolved
    // and is excluded, matching the away-from-non-smooth-points precondition.
    double step = eps;
    for (int attempt = 0; attempt < 14; ++attempt) {
      values[i] = saved + step;
      const ProbedEval plus = eval_probed(f, probe);
      values[i] = saved - step;
      const ProbedEval minus = eval_probed(f, probe);
      values[i] = saved;
      if (plus.sign_hash == minus.sign_hash) {
        fd = (plus.value - minus.value) / (2.0 * step);
        resolved = true;
        break;
      }
      step *= 0.5;
    }
    if (!resolved) continue;
    const double a = autodiff[i];
    const double rel = std::fabs(a - fd) /
                       std::max({std::fabs(a), std::fabs(fd), 1e-6});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

// --- registry ----------------------------------------------------------------

namespace {

using Fn = std::function<Tensor(Tape&, const Tensor&)>;

// mean(square(.)) wrapper makes gradients value-dependent, so backward bugs
// that a linear probe would miss still show up
Tensor squash(Tape& t, const Tensor& v) { return mean(t, square(t, v)); }

double check_fn(const Fn& f, const Tensor& x) { return grad_check(f, x, kEps); }

Tensor randn_away(Shape shape, Rng& rng, double margin) {
  Tensor t = Tensor::uninit(std::move(shape), false);
  auto v = t.value_mut();
  for (double& x : v) {
    double s = rng.next_normal();
    s += s >= 0.0 ? margin : -margin;
    x = double(float(s));
  }
  return t;
}

// Batch whose per-image mean colors are far apart, keeping the pairwise-L1
// diversity away from its kinks.
Tensor spread_batch(Rng& rng, int b, int res) {
  Tensor t = Tensor::uninit({b, 3, res, res}, false);
  auto v = t.value_mut();
  const size_t per_image = size_t(3) * res * res;
  for (int i = 0; i < b; ++i) {
    const double base = 0.8 * i - 1.2;
    for (size_t k = 0; k < per_image; ++k)
      v[size_t(i) * per_image + k] =
          double(float(base + 0.1 * rng.next_normal()));
  }
  return t;
}

NetConfig tiny_config() {
  NetConfig cfg;
  cfg.latent_dim = 6;
  cfg.embed_dim = 7;
  cfg.channels = {5, 4};
  return cfg;
}

// Base points whose activations sit essentially on a kink are rejected up
// front; the per-coordinate sign-signature refinement in grad_check handles
// the rest.
constexpr double kKinkMargin = 1e-4;
constexpr int kCandidateAttempts = 64;

double min_kink_distance(const Fn& f, const Tensor& x) {
  detail::KinkProbe probe;
  detail::set_kink_probe(&probe);
  eval_scalar(f, x);
  detail::set_kink_probe(nullptr);
  return probe.min_abs;
}

// Draws candidates from per-attempt substreams until the base-point forward
// keeps all activations away from kinks; inputs near non-smooth points make
// central differences meaningless.
template <class Build>
auto pick_clean_candidate(uint64_t seed, const Build& build) {
  auto candidate = build(Rng(seed, 1000));
  for (int attempt = 0; attempt < kCandidateAttempts; ++attempt) {
    candidate = build(Rng(seed, 1000 + uint64_t(attempt)));
    if (min_kink_distance(candidate.f, candidate.x) >= kKinkMargin) break;
  }
  return candidate;
}

Generator with_param(const Generator& g, const std::string& name,
                     const Tensor& v) {
  ParamStore params = g.params();
  params.replace(name, v);
  return Generator::from_params(g.config(), std::move(params));
}

Discriminator with_param(const Discriminator& d, const std::string& name,
                         const Tensor& v) {
  ParamStore params = d.params();
  params.replace(name, v);
  return Discriminator::from_params(d.config(), std::move(params));
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_registry() {
  std::vector<GradCheckEntry> entries;
  auto put = [&entries](std::string name,
                        std::function<double(uint64_t)> run) {
    entries.push_back({std::move(name), std::move(run)});
  };

  put("matmul", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 5}, rng);
    const double ea = check_fn(
        [&b](Tape& t, const Tensor& v) { return squash(t, matmul(t, v, b)); },
        a);
    const double eb = check_fn(
        [&a](Tape& t, const Tensor& v) { return squash(t, matmul(t, a, v)); },
        b);
    return std::max(ea, eb);
  });

  put("conv2d", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor x = Tensor::randn({2, 3, 5, 5}, rng);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng, 0.5);
    Tensor b = Tensor::randn({4}, rng, 0.5);
    double err = check_fn(
        [&w, &b](Tape& t, const Tensor& v) {
          return squash(t, conv2d(t, v, w, b));
        },
        x);
    err = std::max(err, check_fn(
                            [&x, &b](Tape& t, const Tensor& v) {
                              return squash(t, conv2d(t, x, v, b));
                            },
                            w));
    err = std::max(err, check_fn(
                            [&x, &w](Tape& t, const Tensor& v) {
                              return squash(t, conv2d(t, x, w, v));
                            },
                            b));
    return err;
  });

  put("conv1x1", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor x = Tensor::randn({2, 3, 4, 4}, rng);
    Tensor w = Tensor::randn({5, 3, 1, 1}, rng, 0.5);
    Tensor b = Tensor::randn({5}, rng, 0.5);
    double err = check_fn(
        [&w, &b](Tape& t, const Tensor& v) {
          return squash(t, conv1x1(t, v, w, b));
        },
        x);
    err = std::max(err, check_fn(
                            [&x, &b](Tape& t, const Tensor& v) {
                              return squash(t, conv1x1(t, x, v, b));
                            },
                            w));
    err = std::max(err, check_fn(
                            [&x, &w](Tape& t, const Tensor& v) {
                              return squash(t, conv1x1(t, x, w, v));
                            },
                            b));
    return err;
  });

  put("upsample_nearest2x", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) {
          return squash(t, upsample_nearest2x(t, v));
        },
        Tensor::randn({2, 3, 3, 3}, rng));
  });

  put("avgpool2x", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, avgpool2x(t, v)); },
        Tensor::randn({2, 3, 4, 4}, rng));
  });

  put("leaky_relu", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) {
          return squash(t, leaky_relu(t, v, 0.2));
        },
        randn_away({4, 5}, rng, 0.05));
  });

  put("sigmoid", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, sigmoid(t, v)); },
        Tensor::randn({4, 5}, rng));
  });

  put("tanh", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, tanh(t, v)); },
        Tensor::randn({4, 5}, rng));
  });

  put("pixel_norm", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, pixel_norm(t, v)); },
        Tensor::randn({2, 4, 3, 3}, rng));
  });

  put("mean", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return square(t, mean(t, v)); },
        Tensor::randn({7}, rng));
  });

  put("sum", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return square(t, sum(t, v)); },
        Tensor::randn({7}, rng));
  });

  put("variance", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return variance(t, v); },
        Tensor::randn({9}, rng));
  });

  put("row_mean", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, row_mean(t, v)); },
        Tensor::randn({3, 5}, rng));
  });

  put("row_sum", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, row_sum(t, v)); },
        Tensor::randn({3, 5}, rng));
  });

  put("spatial_mean", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, spatial_mean(t, v)); },
        Tensor::randn({2, 3, 4, 4}, rng));
  });

  put("add_sub_mul", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({3, 4}, rng);
    double err = 0.0;
    err = std::max(err, check_fn(
                            [&b](Tape& t, const Tensor& v) {
                              return squash(t, add(t, v, b));
                            },
                            a));
    err = std::max(err, check_fn(
                            [&a](Tape& t, const Tensor& v) {
                              return squash(t, sub(t, a, v));
                            },
                            b));
    err = std::max(err, check_fn(
                            [&b](Tape& t, const Tensor& v) {
                              return squash(t, mul(t, v, b));
                            },
                            a));
    return err;
  });

  put("div", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = randn_away({3, 4}, rng, 0.5);
    const double ea = check_fn(
        [&b](Tape& t, const Tensor& v) { return squash(t, div(t, v, b)); }, a);
    const double eb = check_fn(
        [&a](Tape& t, const Tensor& v) { return squash(t, div(t, a, v)); }, b);
    return std::max(ea, eb);
  });

  put("neg", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, neg(t, v)); },
        Tensor::randn({4, 3}, rng));
  });

  put("abs", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, abs(t, v)); },
        randn_away({4, 3}, rng, 0.05));
  });

  put("square", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) { return mean(t, square(t, v)); },
        Tensor::randn({4, 3}, rng));
  });

  put("sqrt_eps", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor x = Tensor::uninit({4, 3}, false);
    for (double& v : x.value_mut()) {
      const double n = rng.next_normal();
      v = double(float(n * n + 0.1));
    }
    return check_fn(
        [](Tape& t, const Tensor& v) {
          return squash(t, sqrt_eps(t, v, 1e-12));
        },
        x);
  });

  put("scale_add_const", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor x = Tensor::randn({4, 3}, rng);
    const double e1 = check_fn(
        [](Tape& t, const Tensor& v) { return squash(t, scale(t, v, 1.7)); },
        x);
    const double e2 = check_fn(
        [](Tape& t, const Tensor& v) {
          return squash(t, add_const(t, v, 0.3));
        },
        x);
    return std::max(e1, e2);
  });

  put("reshape", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) {
          return squash(t, reshape(t, v, {3, 4}));
        },
        Tensor::randn({2, 6}, rng));
  });

  put("slice_cols", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) {
          return squash(t, slice_cols(t, v, 1, 3));
        },
        Tensor::randn({3, 6}, rng));
  });

  put("broadcast_rows", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) {
          return squash(t, broadcast_rows(t, v, 4));
        },
        Tensor::randn({5}, rng));
  });

  put("broadcast_batch", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) {
          return squash(t, broadcast_batch(t, v, 3));
        },
        Tensor::randn({1, 2, 3, 3}, rng));
  });

  put("modulate", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor x = Tensor::randn({2, 3, 4, 4}, rng);
    Tensor scl = Tensor::randn({2, 3}, rng);
    Tensor shf = Tensor::randn({2, 3}, rng);
    double err = check_fn(
        [&scl, &shf](Tape& t, const Tensor& v) {
          return squash(t, modulate(t, v, scl, shf));
        },
        x);
    err = std::max(err, check_fn(
                            [&x, &shf](Tape& t, const Tensor& v) {
                              return squash(t, modulate(t, x, v, shf));
                            },
                            scl));
    err = std::max(err, check_fn(
                            [&x, &scl](Tape& t, const Tensor& v) {
                              return squash(t, modulate(t, x, scl, v));
                            },
                            shf));
    return err;
  });

  put("bce_with_logits", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor z = Tensor::randn({6, 1}, rng);
    const double e0 = check_fn(
        [](Tape& t, const Tensor& v) { return bce_with_logits(t, v, 0.0); },
        z);
    const double e1 = check_fn(
        [](Tape& t, const Tensor& v) { return bce_with_logits(t, v, 1.0); },
        z);
    return std::max(e0, e1);
  });

  put("pairwise_l1_diversity", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor m = Tensor::uninit({4, 3}, false);
    auto v = m.value_mut();
    for (int i = 0; i < 4; ++i)
      for (int c = 0; c < 3; ++c)
        v[size_t(i) * 3 + c] =
            double(float(0.9 * i + 0.1 * rng.next_normal()));
    return check_fn(
        [](Tape& t, const Tensor& x) {
          return square(t, pairwise_l1_diversity(t, x));
        },
        m);
  });

  put("distance_l1", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor a = Tensor::randn({8}, rng);
    Tensor diff = randn_away({8}, rng, 0.05);
    Tensor b = Tensor::uninit({8}, false);
    for (int i = 0; i < 8; ++i)
      b.value_mut()[i] = double(float(a.value()[i] + diff.value()[i]));
    const double ea = check_fn(
        [&b](Tape& t, const Tensor& v) {
          return distance(t, v, b, DistanceKind::L1);
        },
        a);
    const double eb = check_fn(
        [&a](Tape& t, const Tensor& v) {
          return distance(t, a, v, DistanceKind::L1);
        },
        b);
    return std::max(ea, eb);
  });

  put("distance_l2", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor a = Tensor::randn({8}, rng);
    Tensor b = Tensor::randn({8}, rng);
    const double ea = check_fn(
        [&b](Tape& t, const Tensor& v) {
          return distance(t, v, b, DistanceKind::L2);
        },
        a);
    const double eb = check_fn(
        [&a](Tape& t, const Tensor& v) {
          return distance(t, a, v, DistanceKind::L2);
        },
        b);
    return std::max(ea, eb);
  });

  put("distance_cosine", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor a = Tensor::randn({8}, rng);
    Tensor b = Tensor::randn({8}, rng);
    const double ea = check_fn(
        [&b](Tape& t, const Tensor& v) {
          return distance(t, v, b, DistanceKind::Cosine);
        },
        a);
    const double eb = check_fn(
        [&a](Tape& t, const Tensor& v) {
          return distance(t, a, v, DistanceKind::Cosine);
        },
        b);
    return std::max(ea, eb);
  });

  put("color_diversity", [](uint64_t seed) {
    Rng rng(seed, 0);
    return check_fn(
        [](Tape& t, const Tensor& v) {
          return square(t, color_diversity(t, v));
        },
        spread_batch(rng, 4, 4));
  });

  put("diversity_competition", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor self_batch = spread_batch(rng, 4, 4);
    // double spread keeps the other batch strictly more diverse, so the hinge
    // stays active and away from its kink
    Tensor other_batch = Tensor::uninit({4, 3, 4, 4}, false);
    {
      auto sv = self_batch.value();
      auto ov = other_batch.value_mut();
      const size_t per_image = size_t(3) * 16;
      for (int i = 0; i < 4; ++i)
        for (size_t k = 0; k < per_image; ++k)
          ov[size_t(i) * per_image + k] =
              double(float(sv[size_t(i) * per_image + k] * 2.0));
    }
    return check_fn(
        [&other_batch](Tape& t, const Tensor& v) {
          return diversity_competition_loss(t, v, other_batch, 0.1);
        },
        self_batch);
  });

  put("swap_classification", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor z = Tensor::randn({5, 1}, rng);
    const double e1 = check_fn(
        [](Tape& t, const Tensor& v) {
          return swap_classification_loss(t, v, 1);
        },
        z);
    const double e2 = check_fn(
        [](Tape& t, const Tensor& v) {
          return swap_classification_loss(t, v, 2);
        },
        z);
    return std::max(e1, e2);
  });

  put("embedding_proximity_l1", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor other = Tensor::randn({4, 6}, rng);
    // self offsets from the other-centroid keep the L1 terms off their kinks
    std::vector<double> centroid(6, 0.0);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 6; ++j)
        centroid[j] += other.value()[size_t(i) * 6 + j] / 4.0;
    Tensor off = randn_away({4, 6}, rng, 0.05);
    Tensor self_emb = Tensor::uninit({4, 6}, false);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 6; ++j)
        self_emb.value_mut()[size_t(i) * 6 + j] =
            double(float(centroid[j] + off.value()[size_t(i) * 6 + j]));
    return check_fn(
        [&other](Tape& t, const Tensor& v) {
          return embedding_proximity_loss(t, v, other, DistanceKind::L1);
        },
        self_emb);
  });

  put("embedding_proximity_l2", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor other = Tensor::randn({4, 6}, rng);
    Tensor self_emb = Tensor::randn({4, 6}, rng);
    return check_fn(
        [&other](Tape& t, const Tensor& v) {
          return embedding_proximity_loss(t, v, other, DistanceKind::L2);
        },
        self_emb);
  });

  put("embedding_proximity_cosine", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor other = Tensor::randn({4, 6}, rng);
    Tensor self_emb = Tensor::randn({4, 6}, rng);
    return check_fn(
        [&other](Tape& t, const Tensor& v) {
          return embedding_proximity_loss(t, v, other, DistanceKind::Cosine);
        },
        self_emb);
  });

  put("discriminator_classifier_loss", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor l1 = Tensor::randn({4, 1}, rng);
    Tensor l2 = Tensor::randn({4, 1}, rng);
    const double e1 = check_fn(
        [&l2](Tape& t, const Tensor& v) {
          return discriminator_classifier_loss(t, v, l2);
        },
        l1);
    const double e2 = check_fn(
        [&l1](Tape& t, const Tensor& v) {
          return discriminator_classifier_loss(t, l1, v);
        },
        l2);
    return std::max(e1, e2);
  });

  put("diametric_pair", [](uint64_t seed) {
    Rng rng(seed, 0);
    Tensor z = Tensor::randn({5, 1}, rng);
    const double ep = check_fn(
        [](Tape& t, const Tensor& v) {
          return diametric_pair(t, v).loss_pos;
        },
        z);
    const double en = check_fn(
        [](Tape& t, const Tensor& v) {
          return diametric_pair(t, v).loss_neg;
        },
        z);
    return std::max(ep, en);
  });

  put("mapping_forward", [](uint64_t seed) {
    struct Cand {
      Generator g;
      Tensor z;
      Fn f;
      Tensor x;
    };
    auto cand = pick_clean_candidate(seed, [](Rng rng) {
      const NetConfig cfg = tiny_config();
      Generator g = Generator::init(cfg, rng);
      Tensor z = Tensor::randn({3, cfg.latent_dim}, rng);
      Fn f = [g](Tape& t, const Tensor& v) {
        return squash(t, g.mapping_forward(t, v));
      };
      return Cand{g, z, std::move(f), z};
    });
    double err = check_fn(cand.f, cand.x);
    err = std::max(
        err, check_fn(
                 [g = cand.g, z = cand.z](Tape& t, const Tensor& v) {
                   Generator gv = with_param(g, "mapping.0.weight", v);
                   return squash(t, gv.mapping_forward(t, z));
                 },
                 cand.g.params().at("mapping.0.weight")));
    return err;
  });

  put("synthesis_forward", [](uint64_t seed) {
    const GrowthState growth{1, 0.5};  // exercises the fade-in blend
    struct Cand {
      Generator g;
      Tensor w;
      Fn f;
      Tensor x;
    };
    auto cand = pick_clean_candidate(seed, [&growth](Rng rng) {
      const NetConfig cfg = tiny_config();
      Generator g = Generator::init(cfg, rng);
      Tensor w = Tensor::randn({2, cfg.latent_dim}, rng);
      Fn f = [g, growth](Tape& t, const Tensor& v) {
        return squash(t, g.synthesis_forward(t, v, growth));
      };
      return Cand{g, w, std::move(f), w};
    });
    double err = check_fn(cand.f, cand.x);
    for (const char* name :
         {"const", "block0.conv1.weight", "block1.style1.weight",
          "torgb1.weight"}) {
      err = std::max(
          err,
          check_fn(
              [g = cand.g, w = cand.w, growth, name](Tape& t, const Tensor& v) {
                Generator gv = with_param(g, name, v);
                return squash(t, gv.synthesis_forward(t, w, growth));
              },
              cand.g.params().at(name)));
    }
    return err;
  });

  put("discriminator_forward", [](uint64_t seed) {
    const GrowthState growth{1, 0.5};
    auto head = [growth](Tape& t, const Discriminator& dd, const Tensor& im) {
      DiscriminatorOut out = dd.forward(t, im, growth);
      return add(t, squash(t, out.logit), squash(t, out.embedding));
    };
    struct Cand {
      Discriminator d;
      Tensor img;
      Fn f;
      Tensor x;
    };
    auto cand = pick_clean_candidate(seed, [&head](Rng rng) {
      const NetConfig cfg = tiny_config();
      Discriminator d = Discriminator::init(cfg, rng);
      Tensor img = Tensor::randn({2, 3, 8, 8}, rng, 0.5);
      Fn f = [d, head](Tape& t, const Tensor& v) { return head(t, d, v); };
      return Cand{d, img, std::move(f), img};
    });
    double err = check_fn(cand.f, cand.x);
    for (const char* name : {"block1.conv1.weight", "embed.weight"}) {
      err = std::max(
          err, check_fn(
                   [d = cand.d, img = cand.img, &head, name](
                       Tape& t, const Tensor& v) {
                     Discriminator dv = with_param(d, name, v);
                     return head(t, dv, img);
                   },
                   cand.d.params().at(name)));
    }
    return err;
  });

  put("end_to_end_ensemble", [](uint64_t seed) {
    const GrowthState growth{0, 1.0};  // the 4x4 ensemble
    auto loss = [growth](Tape& t, const Generator& gg, const Discriminator& dd,
                         const Tensor& zz) {
      return mean(t, dd.forward(t, gg.forward(t, zz, growth), growth).logit);
    };
    struct Cand {
      Generator g;
      Discriminator d;
      Tensor z;
      Fn f;
      Tensor x;
    };
    auto cand = pick_clean_candidate(seed, [&loss](Rng rng) {
      const NetConfig cfg = tiny_config();
      Generator g = Generator::init(cfg, rng);
      Discriminator d = Discriminator::init(cfg, rng);
      Tensor z = Tensor::randn({2, cfg.latent_dim}, rng);
      Fn f = [g, d, loss](Tape& t, const Tensor& v) {
        return loss(t, g, d, v);
      };
      return Cand{g, d, z, std::move(f), z};
    });
    double err = check_fn(cand.f, cand.x);
    for (const auto& e : cand.g.params().entries()) {
      err = std::max(
          err, check_fn(
                   [&cand, &loss, name = e.name](Tape& t, const Tensor& v) {
                     Generator gv = with_param(cand.g, name, v);
                     return loss(t, gv, cand.d, cand.z);
                   },
                   e.tensor));
    }
    for (const auto& e : cand.d.params().entries()) {
      err = std::max(
          err, check_fn(
                   [&cand, &loss, name = e.name](Tape& t, const Tensor& v) {
                     Discriminator dv = with_param(cand.d, name, v);
                     return loss(t, cand.g, dv, cand.z);
                   },
                   e.tensor));
    }
    return err;
  });

  return entries;
}

GradCheckReport run_gradcheck(const std::vector<GradCheckEntry>& entries,
                              uint64_t base_seed, int seeds, double tolerance) {
  GradCheckReport report;
  report.results.reserve(entries.size());
  for (const auto& entry : entries) {
    GradCheckResult result;
    result.name = entry.name;
    for (int s = 0; s < seeds; ++s)
      result.max_rel_err =
          std::max(result.max_rel_err, entry.run(base_seed + uint64_t(s)));
    result.passed = result.max_rel_err < tolerance;
    report.all_passed = report.all_passed && result.passed;
    report.results.push_back(std::move(result));
  }
  return report;
}

}  // namespace uneq
