#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "uneq/render.hpp"
#include "uneq/training.hpp"

namespace uneq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Full run configuration: training, render plan, output locations. Parsed
// from a flat key=value file with dotted sections, then overridden by
// repeated --set key=value flags.
struct RunConfig {
  TrainConfig train;
  RenderPlan render;
  std::filesystem::path out_dir = "runs/run";
  std::filesystem::path metrics_path;  // empty: out_dir/metrics.jsonl
  bool emit_previews = false;

  // set when render.keyframe_seed was given explicitly; otherwise it follows
  // the training seed
  bool keyframe_seed_set = false;

  std::filesystem::path effective_metrics_path() const;
  // Applies dependent defaults (keyframe seed, metrics path) and validates
  // everything; call once after all overrides are in.
  void finalize();
};

RunConfig parse_config_file(const std::filesystem::path& path);
// key must be a known config key; throws ConfigError otherwise.
void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& value);
// "key=value" form used by --set.
void apply_override_kv(RunConfig& cfg, const std::string& kv);

DistanceKind parse_distance(const std::string& s);
DiscMode parse_disc_mode(const std::string& s);
GenObjective parse_objective(const std::string& s);
InterpMode parse_interp(const std::string& s);

}  // namespace uneq
