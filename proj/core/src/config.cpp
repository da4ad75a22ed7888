#include "uneq/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace uneq {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(uint8_t(s[b]))) ++b;
  while (e > b && std::isspace(uint8_t(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return s;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse number '" +
                      value + "'");
  }
}

int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer '" +
                      value + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer '" +
                      value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = lower(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': cannot parse boolean '" +
                    value + "'");
}

std::vector<int> parse_channels(const std::string& key,
                                const std::string& value) {
  std::vector<int> channels;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw ConfigError("config key '" + key + "': empty channel entry");
    channels.push_back(int(parse_int(key, item)));
  }
  if (channels.empty())
    throw ConfigError("config key '" + key + "': empty channel list");
  return channels;
}

}  // namespace

DistanceKind parse_distance(const std::string& s) {
  const std::string v = lower(s);
  if (v == "l1") return DistanceKind::L1;
  if (v == "l2") return DistanceKind::L2;
  if (v == "cosine") return DistanceKind::Cosine;
  throw ConfigError("unknown distance kind '" + s +
                    "' (expected l1, l2 or cosine)");
}

DiscMode parse_disc_mode(const std::string& s) {
  const std::string v = lower(s);
  if (v == "classifier") return DiscMode::Classifier;
  if (v == "diametric") return DiscMode::Diametric;
  throw ConfigError("unknown discriminator mode '" + s +
                    "' (expected classifier or diametric)");
}

GenObjective parse_objective(const std::string& s) {
  const std::string v = lower(s);
  if (v == "swap_classification") return GenObjective::SwapClassification;
  if (v == "embedding_proximity") return GenObjective::EmbeddingProximity;
  throw ConfigError("unknown generator objective '" + s +
                    "' (expected swap_classification or embedding_proximity)");
}

InterpMode parse_interp(const std::string& s) {
  const std::string v = lower(s);
  if (v == "lerp") return InterpMode::Lerp;
  if (v == "slerp") return InterpMode::Slerp;
  throw ConfigError("unknown interpolation mode '" + s +
                    "' (expected lerp or slerp)");
}

std::filesystem::path RunConfig::effective_metrics_path() const {
  return metrics_path.empty() ? out_dir / "metrics.jsonl" : metrics_path;
}

void RunConfig::finalize() {
  if (!keyframe_seed_set) render.keyframe_seed = train.seed;
  train.validate();
  render.validate();
}

void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& value) {
  TrainConfig& t = cfg.train;
  LossArrangement& a = t.arrangement;
  RenderPlan& r = cfg.render;
  if (key == "seed") {
    t.seed = parse_u64(key, value);
  } else if (key == "batch_size") {
    t.batch_size = int(parse_int(key, value));
  } else if (key == "steps") {
    t.steps = parse_int(key, value);
  } else if (key == "lr_g") {
    t.lr_g = parse_double(key, value);
  } else if (key == "lr_d") {
    t.lr_d = parse_double(key, value);
  } else if (key == "adam_beta1") {
    t.adam_beta1 = parse_double(key, value);
  } else if (key == "adam_beta2") {
    t.adam_beta2 = parse_double(key, value);
  } else if (key == "adam_eps") {
    t.adam_eps = parse_double(key, value);
  } else if (key == "arrangement.discriminator_mode") {
    a.discriminator_mode = parse_disc_mode(value);
  } else if (key == "arrangement.generator_objective") {
    a.generator_objective = parse_objective(value);
  } else if (key == "arrangement.distance_g1") {
    a.distance_g1 = parse_distance(value);
  } else if (key == "arrangement.distance_g2") {
    a.distance_g2 = parse_distance(value);
  } else if (key == "arrangement.diversity_weight") {
    a.diversity_weight = parse_double(key, value);
  } else if (key == "arrangement.diversity_margin") {
    a.diversity_margin = parse_double(key, value);
  } else if (key == "max_stage") {
    t.max_stage = int(parse_int(key, value));
  } else if (key == "steps_per_stage") {
    t.steps_per_stage = int(parse_int(key, value));
  } else if (key == "fade_fraction") {
    t.fade_fraction = parse_double(key, value);
  } else if (key == "diag_window") {
    t.diag_window = int(parse_int(key, value));
  } else if (key == "explode_threshold") {
    t.explode_threshold = parse_double(key, value);
  } else if (key == "stasis_threshold") {
    t.stasis_threshold = parse_double(key, value);
  } else if (key == "checkpoint_every") {
    t.checkpoint_every = int(parse_int(key, value));
  } else if (key == "net.latent_dim") {
    t.net.latent_dim = int(parse_int(key, value));
  } else if (key == "net.embed_dim") {
    t.net.embed_dim = int(parse_int(key, value));
  } else if (key == "net.channels") {
    t.net.channels = parse_channels(key, value);
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else if (key == "metrics_path") {
    cfg.metrics_path = value;
  } else if (key == "emit_previews") {
    cfg.emit_previews = parse_bool(key, value);
  } else if (key == "render.keyframes") {
    r.keyframe_count = int(parse_int(key, value));
  } else if (key == "render.frames_per_segment") {
    r.frames_per_segment = int(parse_int(key, value));
  } else if (key == "render.interpolation") {
    r.interpolation = parse_interp(value);
  } else if (key == "render.loop") {
    r.loop = parse_bool(key, value);
  } else if (key == "render.keyframe_seed") {
    r.keyframe_seed = parse_u64(key, value);
    cfg.keyframe_seed_set = true;
  } else if (key == "render.share_latents") {
    r.share_latents = parse_bool(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void apply_override_kv(RunConfig& cfg, const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + kv + "' is not of the form key=value");
  apply_override(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file '" + path.string() + "'");
  RunConfig cfg;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config file '" + path.string() + "' line " +
                        std::to_string(line_number) +
                        ": expected key=value, got '" + line + "'");
    try {
      apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config file '" + path.string() + "' line " +
                        std::to_string(line_number) + ": " + e.what());
    }
  }
  return cfg;
}

}  // namespace uneq
