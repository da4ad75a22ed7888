#pragma once

#include <span>
#include <string>

#include "uneq/tensor.hpp"

namespace uneq {

enum class DistanceKind { L1, L2, Cosine };
enum class DiscMode { Classifier, Diametric };
enum class GenObjective { SwapClassification, EmbeddingProximity };

std::string to_string(DistanceKind kind);
std::string to_string(DiscMode mode);
std::string to_string(GenObjective objective);

// Which relational objectives are wired up for a run. The two generators may
// measure embedding distance differently on purpose; the mismatch between
// distance functions is itself a source of training dynamics.
struct LossArrangement {
  DiscMode discriminator_mode = DiscMode::Classifier;
  GenObjective generator_objective = GenObjective::SwapClassification;
  DistanceKind distance_g1 = DistanceKind::L2;
  DistanceKind distance_g2 = DistanceKind::Cosine;
  double diversity_weight = 1.0;
  double diversity_margin = 0.1;
};

// L1 = mean abs diff, L2 = sqrt(mean squared diff + 1e-12),
// Cosine = 1 - cos(a,b) (rejects zero vectors). a and b are 1-D.
Tensor distance(Tape& tape, const Tensor& a, const Tensor& b,
                DistanceKind kind);
double distance_value(std::span<const double> a, std::span<const double> b,
                      DistanceKind kind);

// Mean over unordered image pairs of the L1 distance between per-image mean
// colors; zero iff all mean colors coincide. batch is [b,3,h,w], b >= 2.
Tensor color_diversity(Tape& tape, const Tensor& batch);
double color_diversity_value(const Tensor& batch);

// Hinge pushing the self batch to be more color-diverse than the other:
// max(0, margin + diversity(other) - diversity(self)). The other batch is a
// plain value here; no gradient ever reaches it.
Tensor diversity_competition_loss(Tape& tape, const Tensor& self_batch,
                                  const Tensor& other_batch, double margin);

// BCE of sigmoid(logits) against the opposite generator's label
// (G1 <-> 0, G2 <-> 1): generator_index 1 trains toward label 1.
Tensor swap_classification_loss(Tape& tape, const Tensor& logits,
                                int generator_index);

// Mean over the batch of distance(self_emb[i], centroid(other_emb), kind).
// other_emb contributes values only; its centroid is a constant.
Tensor embedding_proximity_loss(Tape& tape, const Tensor& self_emb,
                                const Tensor& other_emb, DistanceKind kind);

// Mean BCE with label 0 for the G1 batch and 1 for the G2 batch.
Tensor discriminator_classifier_loss(Tape& tape, const Tensor& logits_g1,
                                     const Tensor& logits_g2);

struct DiametricPair {
  Tensor loss_pos;  // mean(logits)
  Tensor loss_neg;  // -mean(logits)
};

// Exact negations: propagating both on one batch cancels to zero gradient,
// which is why the training loop feeds them different batches.
DiametricPair diametric_pair(Tape& tape, const Tensor& logits);

}  // namespace uneq
