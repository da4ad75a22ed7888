#include "uneq/training.hpp"

#include <cassert>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace uneq {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

uint64_t fnv1a(std::string_view text, uint64_t hash = 0xcbf29ce484222325ull) {
  for (char c : text) {
    hash ^= uint8_t(c);
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::string fmt_double(double v) {
  char buf[40];
  snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Generator forward with recording off: the result carries values only, so
// anything computed from it stays outside every gradient path.
Tensor eval_images(const Generator& g, const Tensor& z,
                   const GrowthState& growth) {
  Tape off;
  off.set_recording(false);
  return g.forward(off, z, growth);
}

}  // namespace

std::string to_string(RecordStatus status) {
  return status == RecordStatus::Ok ? "ok" : "exploding";
}

std::string to_string(Stability stability) {
  switch (stability) {
    case Stability::Healthy: return "healthy";
    case Stability::Exploding: return "exploding";
    case Stability::Static: return "static";
  }
  return "?";
}

void TrainConfig::validate() const {
  check(batch_size >= 2, "batch_size must be at least 2");
  check(steps >= 0, "steps must be non-negative");
  check(lr_g >= 0.0 && lr_d >= 0.0, "learning rates must be non-negative");
  check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must be in [0,1)");
  check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must be in [0,1)");
  check(adam_eps > 0.0, "adam_eps must be positive");
  check(std::isfinite(arrangement.diversity_weight) &&
            arrangement.diversity_weight >= 0.0,
        "diversity_weight must be finite and non-negative");
  check(std::isfinite(arrangement.diversity_margin) &&
            arrangement.diversity_margin >= 0.0,
        "diversity_margin must be finite and non-negative");
  check(max_stage >= 0, "max_stage must be non-negative");
  check(max_stage < int(net.channels.size()),
        "max_stage exceeds the channel schedule (" +
            std::to_string(net.channels.size()) + " stages configured)");
  check(steps_per_stage >= 1, "steps_per_stage must be at least 1");
  check(fade_fraction > 0.0 && fade_fraction <= 1.0,
        "fade_fraction must be in (0,1]");
  check(diag_window >= 2, "diag_window must be at least 2");
  check(explode_threshold > 0.0, "explode_threshold must be positive");
  check(stasis_threshold > 0.0, "stasis_threshold must be positive");
  check(checkpoint_every >= 1, "checkpoint_every must be at least 1");
  check(net.latent_dim >= 1 && net.embed_dim >= 1,
        "net dims must be positive");
  for (int c : net.channels) check(c >= 1, "channels must be positive");
}

NetConfig TrainConfig::effective_net() const {
  NetConfig n = net;
  n.channels.resize(size_t(max_stage) + 1);
  return n;
}

uint64_t TrainConfig::dynamics_hash() const {
  std::ostringstream os;
  os << "seed=" << seed << ";batch=" << batch_size << ";lr_g=" << fmt_double(lr_g)
     << ";lr_d=" << fmt_double(lr_d) << ";b1=" << fmt_double(adam_beta1)
     << ";b2=" << fmt_double(adam_beta2) << ";eps=" << fmt_double(adam_eps)
     << ";dmode=" << to_string(arrangement.discriminator_mode)
     << ";gobj=" << to_string(arrangement.generator_objective)
     << ";dist1=" << to_string(arrangement.distance_g1)
     << ";dist2=" << to_string(arrangement.distance_g2)
     << ";divw=" << fmt_double(arrangement.diversity_weight)
     << ";divm=" << fmt_double(arrangement.diversity_margin)
     << ";max_stage=" << max_stage << ";sps=" << steps_per_stage
     << ";fade=" << fmt_double(fade_fraction) << ";latent=" << net.latent_dim
     << ";embed=" << net.embed_dim << ";channels=";
  const NetConfig n = effective_net();
  for (size_t i = 0; i < n.channels.size(); ++i) {
    if (i) os << ',';
    os << n.channels[i];
  }
  return fnv1a(os.str());
}

GrowthState growth_schedule(int64_t step, const TrainConfig& cfg) {
  check(step >= 0, "step must be non-negative");
  const int64_t sps = cfg.steps_per_stage;
  const int stage = int(std::min<int64_t>(step / sps, cfg.max_stage));
  double alpha = 1.0;
  if (stage > 0) {
    const int64_t pos = step - int64_t(stage) * sps;
    const double fade_len = cfg.fade_fraction * double(sps);
    alpha = std::min(1.0, double(pos) / fade_len);
  }
  return {stage, alpha};
}

// --- stability --------------------------------------------------------------

Stability stability_diagnose(std::span<const DiagnosticsRecord> window,
                             const StabilityConfig& cfg) {
  check(window.size() >= 2, "stability window needs at least 2 records");
  for (const auto& r : window) {
    const double norms[] = {r.d_grad_norm, r.g1_grad_norm, r.g2_grad_norm};
    for (double n : norms)
      if (!std::isfinite(n) || n > cfg.explode_threshold)
        return Stability::Exploding;
    const double values[] = {r.alpha,   r.d_loss,       r.g1_loss,
                             r.g2_loss, r.g1_diversity, r.g2_diversity};
    for (double v : values)
      if (!std::isfinite(v)) return Stability::Exploding;
    if (r.status == RecordStatus::Exploding) return Stability::Exploding;
  }
  const double n = double(window.size());
  double mean_div1 = 0.0, mean_div2 = 0.0, mean_norm = 0.0;
  for (const auto& r : window) {
    mean_div1 += r.g1_diversity;
    mean_div2 += r.g2_diversity;
    mean_norm += (r.d_grad_norm + r.g1_grad_norm + r.g2_grad_norm) / 3.0;
  }
  mean_div1 /= n;
  mean_div2 /= n;
  mean_norm /= n;
  double var1 = 0.0, var2 = 0.0;
  for (const auto& r : window) {
    var1 += (r.g1_diversity - mean_div1) * (r.g1_diversity - mean_div1);
    var2 += (r.g2_diversity - mean_div2) * (r.g2_diversity - mean_div2);
  }
  var1 /= n;
  var2 /= n;
  if (var1 < cfg.stasis_threshold && var2 < cfg.stasis_threshold &&
      mean_norm < cfg.stasis_threshold)
    return Stability::Static;
  return Stability::Healthy;
}

// --- state ------------------------------------------------------------------

TrainState TrainState::init(const TrainConfig& cfg) {
  cfg.validate();
  const NetConfig net = cfg.effective_net();
  TrainState st;
  Rng rng_g1(cfg.seed, rng_stream::kG1Init);
  Rng rng_g2(cfg.seed, rng_stream::kG2Init);
  Rng rng_d(cfg.seed, rng_stream::kDiscInit);
  st.g1 = Generator::init(net, rng_g1);
  st.g2 = Generator::init(net, rng_g2);
  st.d = Discriminator::init(net, rng_d);
  st.opt_g1 = Adam(st.g1.params());
  st.opt_g2 = Adam(st.g2.params());
  st.opt_d = Adam(st.d.params());
  st.step = 0;
  st.rng = Rng(cfg.seed, rng_stream::kBatches);
  st.growth = growth_schedule(0, cfg);
  return st;
}

// --- the step ----------------------------------------------------------------

namespace {

struct PhaseResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  double diversity = 0.0;
  bool ok = true;
};

// Shared generator phase: fresh discriminator evaluations, the other
// generator's batch enters as values only.
PhaseResult generator_phase(Generator& self, Adam& opt, const Generator& other,
                            Discriminator& dsc, const Tensor& z_self,
                            const Tensor& z_other, int self_index,
                            DistanceKind dist, const TrainConfig& cfg,
                            const GrowthState& growth, int64_t t) {
  PhaseResult res;
  Tensor other_imgs = eval_images(other, z_other, growth);
  Tape tape;
  zero_grads(self.params());
  zero_grads(dsc.params());
  Tensor self_imgs = self.forward(tape, z_self, growth);
  DiscriminatorOut d_out = dsc.forward(tape, self_imgs, growth);
  Tensor objective;
  if (cfg.arrangement.generator_objective ==
      GenObjective::SwapClassification) {
    objective = swap_classification_loss(tape, d_out.logit, self_index);
  } else {
    Tape off;
    off.set_recording(false);
    DiscriminatorOut other_out = dsc.forward(off, other_imgs, growth);
    objective =
        embedding_proximity_loss(tape, d_out.embedding, other_out.embedding,
                                 dist);
  }
  Tensor hinge = diversity_competition_loss(tape, self_imgs, other_imgs,
                                            cfg.arrangement.diversity_margin);
  Tensor loss = add(
      tape, objective, scale(tape, hinge, cfg.arrangement.diversity_weight));
  res.loss = loss.item();
  res.diversity = color_diversity_value(self_imgs);
  if (!std::isfinite(res.loss)) {
    res.ok = false;
    return res;
  }
  tape.backward(loss);
  res.grad_norm = grad_norm(self.params());
  if (!std::isfinite(res.grad_norm)) {
    res.ok = false;
    return res;
  }
  opt.step(self.params(), cfg.adam_g(), t);
  return res;
}

}  // namespace

DiagnosticsRecord train_step(TrainState& st, const TrainConfig& cfg) {
  const GrowthState growth = growth_schedule(st.step, cfg);
  st.growth = growth;
  const int b = cfg.batch_size;
  const int latent = cfg.net.latent_dim;
  const int64_t t = st.step + 1;  // shared Adam bias-correction index

  DiagnosticsRecord rec;
  rec.step = st.step;
  rec.stage = growth.stage;
  rec.alpha = growth.alpha;

  // four independent batches per step: two for D, two for the G updates
  Tensor z_a1 = Tensor::randn({b, latent}, st.rng);
  Tensor z_a2 = Tensor::randn({b, latent}, st.rng);
  Tensor z_b1 = Tensor::randn({b, latent}, st.rng);
  Tensor z_b2 = Tensor::randn({b, latent}, st.rng);
  // the diametric rule: the opposed losses must never share a batch
  assert(z_a1.id() != z_a2.id());

  bool exploded = false;

  // discriminator update
  {
    Tensor img1 = eval_images(st.g1, z_a1, growth);
    Tensor img2 = eval_images(st.g2, z_a2, growth);
    Tape tape;
    zero_grads(st.d.params());
    DiscriminatorOut out1 = st.d.forward(tape, img1, growth);
    DiscriminatorOut out2 = st.d.forward(tape, img2, growth);
    Tensor loss;
    if (cfg.arrangement.discriminator_mode == DiscMode::Classifier) {
      loss = discriminator_classifier_loss(tape, out1.logit, out2.logit);
    } else {
      Tensor pos = diametric_pair(tape, out1.logit).loss_pos;
      Tensor opposed = diametric_pair(tape, out2.logit).loss_neg;
      loss = add(tape, pos, opposed);
    }
    rec.d_loss = loss.item();
    if (std::isfinite(rec.d_loss)) {
      tape.backward(loss);
      rec.d_grad_norm = grad_norm(st.d.params());
      if (std::isfinite(rec.d_grad_norm)) {
        st.opt_d.step(st.d.params(), cfg.adam_d(), t);
      } else {
        exploded = true;
      }
    } else {
      exploded = true;
    }
  }

  // generator updates, G1 then G2, each against the other's fresh batch
  {
    PhaseResult r =
        generator_phase(st.g1, st.opt_g1, st.g2, st.d, z_b1, z_b2, 1,
                        cfg.arrangement.distance_g1, cfg, growth, t);
    rec.g1_loss = r.loss;
    rec.g1_grad_norm = r.grad_norm;
    rec.g1_diversity = r.diversity;
    exploded = exploded || !r.ok;
  }
  {
    PhaseResult r =
        generator_phase(st.g2, st.opt_g2, st.g1, st.d, z_b2, z_b1, 2,
                        cfg.arrangement.distance_g2, cfg, growth, t);
    rec.g2_loss = r.loss;
    rec.g2_grad_norm = r.grad_norm;
    rec.g2_diversity = r.diversity;
    exploded = exploded || !r.ok;
  }

  rec.status = exploded ? RecordStatus::Exploding : RecordStatus::Ok;
  st.step += 1;
  st.growth = growth_schedule(st.step, cfg);
  return rec;
}

TrainRunResult run_training(
    TrainState& state, const TrainConfig& cfg,
    const std::function<void(const DiagnosticsRecord&, TrainState&)>&
        on_record) {
  TrainRunResult result;
  int consecutive_exploding = 0;
  while (state.step < cfg.steps) {
    DiagnosticsRecord rec = train_step(state, cfg);
    ++result.steps_run;
    if (on_record) on_record(rec, state);
    if (rec.status == RecordStatus::Exploding) {
      if (++consecutive_exploding >= cfg.diag_window) {
        result.aborted_exploding = true;
        return result;
      }
    } else {
      consecutive_exploding = 0;
    }
  }
  return result;
}

}  // namespace uneq
