#include "uneq/networks.hpp"

#include <cmath>
#include <stdexcept>

namespace uneq {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// He-style init: weights ~ N(0, gain/fan_in), variance under the sqrt.
Tensor init_weight(Shape shape, int fan_in, double gain, Rng& rng) {
  return Tensor::randn(std::move(shape), rng, std::sqrt(gain / fan_in), true);
}

Tensor dense(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(tape, matmul(tape, x, w), broadcast_rows(tape, b, x.shape()[0]));
}

constexpr double kLReluSlope = 0.2;

}  // namespace

// --- ParamStore ---------------------------------------------------------------

Tensor ParamStore::add(std::string name, Tensor t) {
  check(!contains(name), "duplicate parameter name: " + name);
  entries_.push_back({std::move(name), t});
  return t;
}

const Tensor& ParamStore::at(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw std::invalid_argument("unknown parameter: " + std::string(name));
}

void ParamStore::replace(std::string_view name, Tensor t) {
  for (auto& e : entries_) {
    if (e.name == name) {
      e.tensor = std::move(t);
      return;
    }
  }
  throw std::invalid_argument("unknown parameter: " + std::string(name));
}

bool ParamStore::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

double grad_norm(const ParamStore& params) {
  double acc = 0.0;
  for (const auto& e : params.entries())
    for (double g : e.tensor.grad()) acc += g * g;
  return std::sqrt(acc);
}

void zero_grads(ParamStore& params) {
  for (auto& e : params.entries_mut()) {
    e.tensor.ensure_grad();
    e.tensor.zero_grad();
  }
}

// --- Generator ---------------------------------------------------------------

Generator Generator::init(const NetConfig& cfg, Rng& rng) {
  check(!cfg.channels.empty(), "channel schedule must not be empty");
  Generator g;
  g.cfg_ = cfg;
  auto& p = g.params_;
  const int d = cfg.latent_dim;
  for (int i = 0; i < 3; ++i) {
    const std::string base = "mapping." + std::to_string(i);
    p.add(base + ".weight", init_weight({d, d}, d, 2.0, rng));
    p.add(base + ".bias", Tensor::zeros({d}, true));
  }
  p.add("const", Tensor::randn({1, cfg.channels[0], 4, 4}, rng, 1.0, true));
  for (int s = 0; s <= cfg.max_stage(); ++s) {
    const std::string base = "block" + std::to_string(s);
    const int cin = s == 0 ? cfg.channels[0] : cfg.channels[s - 1];
    const int cout = cfg.channels[s];
    p.add(base + ".conv1.weight",
          init_weight({cout, cin, 3, 3}, cin * 9, 2.0, rng));
    p.add(base + ".conv1.bias", Tensor::zeros({cout}, true));
    p.add(base + ".style1.weight", init_weight({d, 2 * cout}, d, 1.0, rng));
    p.add(base + ".style1.bias", Tensor::zeros({2 * cout}, true));
    p.add(base + ".conv2.weight",
          init_weight({cout, cout, 3, 3}, cout * 9, 2.0, rng));
    p.add(base + ".conv2.bias", Tensor::zeros({cout}, true));
    p.add(base + ".style2.weight", init_weight({d, 2 * cout}, d, 1.0, rng));
    p.add(base + ".style2.bias", Tensor::zeros({2 * cout}, true));
    const std::string rgb = "torgb" + std::to_string(s);
    p.add(rgb + ".weight", init_weight({3, cout, 1, 1}, cout, 1.0, rng));
    p.add(rgb + ".bias", Tensor::zeros({3}, true));
  }
  return g;
}

Generator Generator::from_params(NetConfig cfg, ParamStore params) {
  Generator g;
  g.cfg_ = std::move(cfg);
  g.params_ = std::move(params);
  return g;
}

Tensor Generator::mapping_forward(Tape& tape, const Tensor& z) const {
  check(z.shape().size() == 2 && z.shape()[1] == cfg_.latent_dim,
        "mapping input must be [batch," + std::to_string(cfg_.latent_dim) +
            "], got " + shape_str(z.shape()));
  Tensor x = z;
  for (int i = 0; i < 3; ++i) {
    const std::string base = "mapping." + std::to_string(i);
    x = dense(tape, x, params_.at(base + ".weight"), params_.at(base + ".bias"));
    x = leaky_relu(tape, x, kLReluSlope);
  }
  return x;
}

Tensor Generator::block_forward(Tape& tape, Tensor x, const Tensor& w,
                                int stage) const {
  const std::string base = "block" + std::to_string(stage);
  const int batch = x.shape()[0];
  for (int conv_idx = 1; conv_idx <= 2; ++conv_idx) {
    const std::string conv = base + ".conv" + std::to_string(conv_idx);
    const std::string style = base + ".style" + std::to_string(conv_idx);
    x = conv2d(tape, x, params_.at(conv + ".weight"),
               params_.at(conv + ".bias"));
    const int c = x.shape()[1];
    Tensor affine = dense(tape, w, params_.at(style + ".weight"),
                          params_.at(style + ".bias"));
    // scale sits around 1 so zero-initialized affine biases start near the
    // identity modulation
    Tensor scl = add_const(tape, slice_cols(tape, affine, 0, c), 1.0);
    Tensor shf = slice_cols(tape, affine, c, c);
    x = modulate(tape, x, scl, shf);
    x = leaky_relu(tape, x, kLReluSlope);
    x = pixel_norm(tape, x);
    (void)batch;
  }
  return x;
}

Tensor Generator::to_rgb(Tape& tape, const Tensor& x, int stage) const {
  const std::string base = "torgb" + std::to_string(stage);
  return conv1x1(tape, x, params_.at(base + ".weight"),
                 params_.at(base + ".bias"));
}

Tensor Generator::synthesis_forward(Tape& tape, const Tensor& w,
                                    const GrowthState& growth) const {
  check(growth.stage >= 0 && growth.stage <= cfg_.max_stage(),
        "growth stage " + std::to_string(growth.stage) +
            " exceeds configured max stage " +
            std::to_string(cfg_.max_stage()));
  check(growth.alpha >= 0.0 && growth.alpha <= 1.0, "alpha must be in [0,1]");
  check(w.shape().size() == 2 && w.shape()[1] == cfg_.latent_dim,
        "style input must be [batch,latent_dim]");
  const int batch = w.shape()[0];
  Tensor x = broadcast_batch(tape, params_.at("const"), batch);
  Tensor prev;  // features entering the final stage, for the fade-in path
  for (int s = 0; s <= growth.stage; ++s) {
    if (s > 0) {
      prev = x;
      x = upsample_nearest2x(tape, x);
    }
    x = block_forward(tape, x, w, s);
  }
  Tensor rgb;
  if (growth.stage > 0 && growth.alpha < 1.0) {
    Tensor rgb_new = to_rgb(tape, x, growth.stage);
    Tensor rgb_prev =
        upsample_nearest2x(tape, to_rgb(tape, prev, growth.stage - 1));
    rgb = add(tape, scale(tape, rgb_new, growth.alpha),
              scale(tape, rgb_prev, 1.0 - growth.alpha));
  } else {
    rgb = to_rgb(tape, x, growth.stage);
  }
  return tanh(tape, rgb);
}

Tensor Generator::forward(Tape& tape, const Tensor& z,
                          const GrowthState& growth) const {
  return synthesis_forward(tape, mapping_forward(tape, z), growth);
}

// --- Discriminator ---------------------------------------------------------

Discriminator Discriminator::init(const NetConfig& cfg, Rng& rng) {
  check(!cfg.channels.empty(), "channel schedule must not be empty");
  Discriminator d;
  d.cfg_ = cfg;
  auto& p = d.params_;
  for (int s = 0; s <= cfg.max_stage(); ++s) {
    const std::string base = "fromrgb" + std::to_string(s);
    const int c = cfg.channels[s];
    p.add(base + ".weight", init_weight({c, 3, 1, 1}, 3, 2.0, rng));
    p.add(base + ".bias", Tensor::zeros({c}, true));
  }
  p.add("block0.conv1.weight",
        init_weight({cfg.channels[0], cfg.channels[0], 3, 3},
                    cfg.channels[0] * 9, 2.0, rng));
  p.add("block0.conv1.bias", Tensor::zeros({cfg.channels[0]}, true));
  for (int s = 1; s <= cfg.max_stage(); ++s) {
    const std::string base = "block" + std::to_string(s);
    const int c = cfg.channels[s];
    const int cdown = cfg.channels[s - 1];
    p.add(base + ".conv1.weight", init_weight({c, c, 3, 3}, c * 9, 2.0, rng));
    p.add(base + ".conv1.bias", Tensor::zeros({c}, true));
    p.add(base + ".conv2.weight",
          init_weight({cdown, c, 3, 3}, c * 9, 2.0, rng));
    p.add(base + ".conv2.bias", Tensor::zeros({cdown}, true));
  }
  const int flat = cfg.channels[0] * 16;
  p.add("embed.weight", init_weight({flat, cfg.embed_dim}, flat, 2.0, rng));
  p.add("embed.bias", Tensor::zeros({cfg.embed_dim}, true));
  p.add("logit.weight",
        init_weight({cfg.embed_dim, 1}, cfg.embed_dim, 1.0, rng));
  p.add("logit.bias", Tensor::zeros({1}, true));
  return d;
}

Discriminator Discriminator::from_params(NetConfig cfg, ParamStore params) {
  Discriminator d;
  d.cfg_ = std::move(cfg);
  d.params_ = std::move(params);
  return d;
}

Tensor Discriminator::from_rgb(Tape& tape, const Tensor& images,
                               int stage) const {
  const std::string base = "fromrgb" + std::to_string(stage);
  Tensor x = conv1x1(tape, images, params_.at(base + ".weight"),
                     params_.at(base + ".bias"));
  return leaky_relu(tape, x, kLReluSlope);
}

// Stage >= 1 block: two convs (second halves the channels), then avgpool.
Tensor Discriminator::block_forward(Tape& tape, Tensor x, int stage) const {
  const std::string base = "block" + std::to_string(stage);
  x = conv2d(tape, x, params_.at(base + ".conv1.weight"),
             params_.at(base + ".conv1.bias"));
  x = leaky_relu(tape, x, kLReluSlope);
  x = conv2d(tape, x, params_.at(base + ".conv2.weight"),
             params_.at(base + ".conv2.bias"));
  x = leaky_relu(tape, x, kLReluSlope);
  return avgpool2x(tape, x);
}

DiscriminatorOut Discriminator::forward(Tape& tape, const Tensor& images,
                                        const GrowthState& growth) const {
  check(growth.stage >= 0 && growth.stage <= cfg_.max_stage(),
        "growth stage exceeds configured max stage");
  const int res = cfg_.resolution(growth.stage);
  check(images.shape().size() == 4 && images.shape()[1] == 3 &&
            images.shape()[2] == res && images.shape()[3] == res,
        "discriminator expects [b,3," + std::to_string(res) + "," +
            std::to_string(res) + "], got " + shape_str(images.shape()));
  const int batch = images.shape()[0];
  Tensor x = from_rgb(tape, images, growth.stage);
  if (growth.stage > 0) {
    x = block_forward(tape, x, growth.stage);
    if (growth.alpha < 1.0) {
      // symmetric fade-in: blend against the previous-stage head applied to
      // the downsampled input
      Tensor skip = from_rgb(tape, avgpool2x(tape, images), growth.stage - 1);
      x = add(tape, scale(tape, x, growth.alpha),
              scale(tape, skip, 1.0 - growth.alpha));
    }
    for (int s = growth.stage - 1; s >= 1; --s) x = block_forward(tape, x, s);
  }
  x = conv2d(tape, x, params_.at("block0.conv1.weight"),
             params_.at("block0.conv1.bias"));
  x = leaky_relu(tape, x, kLReluSlope);
  Tensor flat = reshape(tape, x, {batch, cfg_.channels[0] * 16});
  Tensor emb = dense(tape, flat, params_.at("embed.weight"),
                     params_.at("embed.bias"));
  emb = leaky_relu(tape, emb, kLReluSlope);
  Tensor logit = dense(tape, emb, params_.at("logit.weight"),
                       params_.at("logit.bias"));
  return {logit, emb};
}

// --- config inference ------------------------------------------------------

NetConfig infer_generator_config(const ParamStore& params) {
  NetConfig cfg;
  cfg.latent_dim = params.at("mapping.0.weight").shape()[0];
  cfg.channels.clear();
  for (int s = 0;; ++s) {
    const std::string name = "block" + std::to_string(s) + ".conv1.weight";
    if (!params.contains(name)) break;
    cfg.channels.push_back(params.at(name).shape()[0]);
  }
  check(!cfg.channels.empty(), "no generator blocks in parameter set");
  return cfg;
}

NetConfig infer_discriminator_config(const ParamStore& params) {
  NetConfig cfg;
  cfg.embed_dim = params.at("logit.weight").shape()[0];
  cfg.channels.clear();
  for (int s = 0;; ++s) {
    const std::string name = "fromrgb" + std::to_string(s) + ".weight";
    if (!params.contains(name)) break;
    cfg.channels.push_back(params.at(name).shape()[0]);
  }
  check(!cfg.channels.empty(), "no discriminator heads in parameter set");
  return cfg;
}

}  // namespace uneq
