#include "uneq/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace uneq {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

constexpr double kNormEps = 1e-12;

double vec_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

}  // namespace

std::string to_string(DistanceKind kind) {
  switch (kind) {
    case DistanceKind::L1: return "l1";
    case DistanceKind::L2: return "l2";
    case DistanceKind::Cosine: return "cosine";
  }
  return "?";
}

std::string to_string(DiscMode mode) {
  return mode == DiscMode::Classifier ? "classifier" : "diametric";
}

std::string to_string(GenObjective objective) {
  return objective == GenObjective::SwapClassification ? "swap_classification"
                                                       : "embedding_proximity";
}

// --- distance -------------------------------------------------------------

Tensor distance(Tape& tape, const Tensor& a, const Tensor& b,
                DistanceKind kind) {
  check(a.shape().size() == 1 && a.shape() == b.shape(),
        "distance requires equal-length vectors");
  switch (kind) {
    case DistanceKind::L1:
      return mean(tape, abs(tape, sub(tape, a, b)));
    case DistanceKind::L2:
      return sqrt_eps(tape, mean(tape, square(tape, sub(tape, a, b))),
                      kNormEps);
    case DistanceKind::Cosine: {
      check(vec_norm(a.value()) > 0.0 && vec_norm(b.value()) > 0.0,
            "cosine distance is undefined for zero vectors");
      Tensor dot = sum(tape, mul(tape, a, b));
      Tensor na = sqrt_eps(tape, sum(tape, square(tape, a)), kNormEps);
      Tensor nb = sqrt_eps(tape, sum(tape, square(tape, b)), kNormEps);
      Tensor cos = div(tape, dot, mul(tape, na, nb));
      return add_const(tape, neg(tape, cos), 1.0);
    }
  }
  throw std::invalid_argument("unknown distance kind");
}

double distance_value(std::span<const double> a, std::span<const double> b,
                      DistanceKind kind) {
  check(a.size() == b.size() && !a.empty(),
        "distance requires equal-length vectors");
  const double n = double(a.size());
  switch (kind) {
    case DistanceKind::L1: {
      double acc = 0.0;
      for (size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i] - b[i]);
      return acc / n;
    }
    case DistanceKind::L2: {
      double acc = 0.0;
      for (size_t i = 0; i < a.size(); ++i)
        acc += (a[i] - b[i]) * (a[i] - b[i]);
      return std::sqrt(acc / n + kNormEps);
    }
    case DistanceKind::Cosine: {
      double ssa = 0.0, ssb = 0.0, dot = 0.0;
      for (size_t i = 0; i < a.size(); ++i) {
        ssa += a[i] * a[i];
        ssb += b[i] * b[i];
        dot += a[i] * b[i];
      }
      check(ssa > 0.0 && ssb > 0.0,
            "cosine distance is undefined for zero vectors");
      return 1.0 -
             dot / (std::sqrt(ssa + kNormEps) * std::sqrt(ssb + kNormEps));
    }
  }
  throw std::invalid_argument("unknown distance kind");
}

// --- color diversity --------------------------------------------------------

Tensor color_diversity(Tape& tape, const Tensor& batch) {
  check(batch.shape().size() == 4 && batch.shape()[1] == 3,
        "color_diversity expects [b,3,h,w]");
  check(batch.shape()[0] >= 2, "color_diversity needs a batch of at least 2");
  return pairwise_l1_diversity(tape, spatial_mean(tape, batch));
}

double color_diversity_value(const Tensor& batch) {
  check(batch.shape().size() == 4 && batch.shape()[1] == 3,
        "color_diversity expects [b,3,h,w]");
  const int b = batch.shape()[0];
  check(b >= 2, "color_diversity needs a batch of at least 2");
  const size_t plane = size_t(batch.shape()[2]) * batch.shape()[3];
  auto v = batch.value();
  // identical summation order to the tape version: spatial means first, then
  // unordered pairs
  std::vector<double> mean_color(size_t(b) * 3);
  for (int i = 0; i < b * 3; ++i) {
    double acc = 0.0;
    const double* p = &v[size_t(i) * plane];
    for (size_t k = 0; k < plane; ++k) acc += p[k];
    mean_color[i] = acc / double(plane);
  }
  const double pairs = double(b) * (b - 1) / 2.0;
  double acc = 0.0;
  for (int i = 0; i < b; ++i)
    for (int j = i + 1; j < b; ++j)
      for (int ch = 0; ch < 3; ++ch)
        acc += std::fabs(mean_color[size_t(i) * 3 + ch] -
                         mean_color[size_t(j) * 3 + ch]);
  return acc / (pairs * 3.0);
}

Tensor diversity_competition_loss(Tape& tape, const Tensor& self_batch,
                                  const Tensor& other_batch, double margin) {
  check(margin >= 0.0, "margin must be non-negative");
  // the other batch enters as a plain number: stop-gradient by construction
  const double other_diversity = color_diversity_value(other_batch);
  Tensor self_diversity = color_diversity(tape, self_batch);
  Tensor gap =
      add_const(tape, neg(tape, self_diversity), margin + other_diversity);
  return leaky_relu(tape, gap, 0.0);
}

// --- adversarial objectives -----------------------------------------------

Tensor swap_classification_loss(Tape& tape, const Tensor& logits,
                                int generator_index) {
  check(generator_index == 1 || generator_index == 2,
        "generator_index must be 1 or 2");
  // G1 carries label 0, G2 label 1; each generator trains toward the other's
  // label
  const double target = generator_index == 1 ? 1.0 : 0.0;
  return bce_with_logits(tape, logits, target);
}

Tensor embedding_proximity_loss(Tape& tape, const Tensor& self_emb,
                                const Tensor& other_emb, DistanceKind kind) {
  check(self_emb.shape().size() == 2 && other_emb.shape().size() == 2 &&
            self_emb.shape()[1] == other_emb.shape()[1],
        "embeddings must be [b,d] with matching d");
  const int b = self_emb.shape()[0];
  const int d = self_emb.shape()[1];
  // centroid of the other batch, per dimension; values only, no graph
  std::vector<double> centroid(size_t(d), 0.0);
  {
    auto ov = other_emb.value();
    const int ob = other_emb.shape()[0];
    for (int i = 0; i < ob; ++i)
      for (int j = 0; j < d; ++j) centroid[j] += ov[size_t(i) * d + j];
    for (double& c : centroid) c /= double(ob);
  }
  Tensor c = Tensor::from({d}, centroid);
  Tensor cb = broadcast_rows(tape, c, b);
  switch (kind) {
    case DistanceKind::L1:
      // mean over batch of per-row mean abs diff == global mean abs diff
      return mean(tape, abs(tape, sub(tape, self_emb, cb)));
    case DistanceKind::L2: {
      Tensor msd = row_mean(tape, square(tape, sub(tape, self_emb, cb)));
      return mean(tape, sqrt_eps(tape, msd, kNormEps));
    }
    case DistanceKind::Cosine: {
      double ssc = 0.0;
      for (double v : centroid) ssc += v * v;
      check(ssc > 0.0, "zero centroid under cosine distance");
      Tensor dots = row_sum(tape, mul(tape, self_emb, cb));
      Tensor norms =
          sqrt_eps(tape, row_sum(tape, square(tape, self_emb)), kNormEps);
      Tensor cos =
          div(tape, dots, scale(tape, norms, std::sqrt(ssc + kNormEps)));
      return add_const(tape, neg(tape, mean(tape, cos)), 1.0);
    }
  }
  throw std::invalid_argument("unknown distance kind");
}

Tensor discriminator_classifier_loss(Tape& tape, const Tensor& logits_g1,
                                     const Tensor& logits_g2) {
  Tensor l1 = bce_with_logits(tape, logits_g1, 0.0);
  Tensor l2 = bce_with_logits(tape, logits_g2, 1.0);
  return scale(tape, add(tape, l1, l2), 0.5);
}

DiametricPair diametric_pair(Tape& tape, const Tensor& logits) {
  Tensor pos = mean(tape, logits);
  return {pos, neg(tape, pos)};
}

}  // namespace uneq
