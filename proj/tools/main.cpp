#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uneq/checkpoint.hpp"
#include "uneq/config.hpp"
#include "uneq/gradcheck.hpp"
#include "uneq/log.hpp"
#include "uneq/metrics.hpp"
#include "uneq/render.hpp"
#include "uneq/training.hpp"

namespace fs = std::filesystem;
using namespace uneq;

namespace {

// exit codes: 0 ok, 2 config or input error, 3 unrecoverable numeric failure
constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitNumericFailure = 3;
constexpr int kExitCheckFailed = 1;

struct TrainArgs {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<int64_t> steps;
  std::optional<std::string> out;
  std::vector<std::string> sets;
  std::string resume;
};

std::string checkpoint_name(int64_t step) {
  char buf[64];
  snprintf(buf, sizeof buf, "checkpoint_%06" PRId64 ".uneq", step);
  return buf;
}

std::string preview_name(int64_t step) {
  char buf[64];
  snprintf(buf, sizeof buf, "preview_%06" PRId64 ".ppm", step);
  return buf;
}

void write_preview(const TrainState& state, const RunConfig& cfg,
                   const fs::path& path) {
  Rng rng(cfg.train.seed, rng_stream::kPreview);
  const int dim = cfg.train.net.latent_dim;
  Tensor z1 = Tensor::randn({1, dim}, rng);
  Tensor z2 = Tensor::randn({1, dim}, rng);
  Tape off;
  off.set_recording(false);
  Tensor img1 = state.g1.forward(off, z1, state.growth);
  Tensor img2 = state.g2.forward(off, z2, state.growth);
  const auto rgb = compose_side_by_side(img1, img2);
  const int res = img1.shape()[2];
  write_ppm(path, 2 * res, res, rgb);
}

int run_train(const TrainArgs& args) {
  RunConfig cfg;
  try {
    if (!args.config_path.empty()) cfg = parse_config_file(args.config_path);
    if (args.seed) cfg.train.seed = *args.seed;
    if (args.steps) cfg.train.steps = *args.steps;
    if (args.out) cfg.out_dir = *args.out;
    for (const auto& kv : args.sets) apply_override_kv(cfg, kv);
    cfg.finalize();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }
  try {
    fs::create_directories(cfg.out_dir);
    MetricsWriter metrics(cfg.effective_metrics_path());
    TrainState state = args.resume.empty()
                           ? TrainState::init(cfg.train)
                           : restore_train_state(
                                 load_checkpoint(args.resume), cfg.train);
    if (!args.resume.empty())
      log_info("resumed from " + args.resume + " at step " +
               std::to_string(state.step));
    const uint64_t config_hash = cfg.train.dynamics_hash();
    TrainRunResult result = run_training(
        state, cfg.train,
        [&](const DiagnosticsRecord& rec, TrainState& st) {
          metrics.write(rec);
          if (st.step % cfg.train.checkpoint_every == 0) {
            save_checkpoint(cfg.out_dir / checkpoint_name(st.step), st,
                            config_hash);
            if (cfg.emit_previews)
              write_preview(st, cfg, cfg.out_dir / preview_name(st.step));
          }
          if (rec.step % 100 == 0)
            log_debug("step " + std::to_string(rec.step) + " stage " +
                      std::to_string(rec.stage) + " d_loss " +
                      std::to_string(rec.d_loss));
        });
    save_checkpoint(cfg.out_dir / "checkpoint_final.uneq", state, config_hash);
    metrics.flush();
    if (result.aborted_exploding) {
      std::cerr << "training aborted: losses or gradients stayed non-finite "
                   "for "
                << cfg.train.diag_window << " consecutive steps\n";
      return kExitNumericFailure;
    }
    log_info("trained " + std::to_string(result.steps_run) + " steps, state at step " +
             std::to_string(state.step));
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
}

struct RenderArgs {
  std::string checkpoint_path;
  std::string config_path;
  std::optional<std::string> out;
  std::optional<int> keyframes;
  std::optional<int> frames_per_segment;
  std::optional<std::string> interpolation;
  std::optional<uint64_t> keyframe_seed;
  bool loop = false;
  bool share_latents = false;
  std::vector<std::string> sets;
};

int run_render(const RenderArgs& args) {
  RunConfig cfg;
  try {
    if (!args.config_path.empty()) cfg = parse_config_file(args.config_path);
    for (const auto& kv : args.sets) apply_override_kv(cfg, kv);
    if (args.keyframes) cfg.render.keyframe_count = *args.keyframes;
    if (args.frames_per_segment)
      cfg.render.frames_per_segment = *args.frames_per_segment;
    if (args.interpolation)
      cfg.render.interpolation = parse_interp(*args.interpolation);
    if (args.keyframe_seed) {
      cfg.render.keyframe_seed = *args.keyframe_seed;
      cfg.keyframe_seed_set = true;
    }
    if (args.loop) cfg.render.loop = true;
    if (args.share_latents) cfg.render.share_latents = true;
    if (args.out) cfg.out_dir = *args.out;
    cfg.finalize();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }
  try {
    const CheckpointData data = load_checkpoint(args.checkpoint_path);
    const RenderResult result =
        render_sequence(data, cfg.render, cfg.out_dir);
    std::cout << "wrote " << result.frames << " frames (" << result.width
              << "x" << result.height << ") to " << cfg.out_dir.string()
              << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
}

int run_gradcheck(uint64_t seed) {
  const auto entries = gradcheck_registry();
  const GradCheckReport report = run_gradcheck(entries, seed, 10, 1e-3);
  for (const auto& r : report.results) {
    printf("%-32s %10.3e  %s\n", r.name.c_str(), r.max_rel_err,
           r.passed ? "PASS" : "FAIL");
  }
  printf("%zu checks, tolerance 1e-3, 10 seeds from %" PRIu64 ": %s\n",
         report.results.size(), seed, report.all_passed ? "PASS" : "FAIL");
  return report.all_passed ? kExitOk : kExitCheckFailed;
}

struct DiagnoseArgs {
  std::string metrics_path;
  int window = 50;
  double explode_threshold = 1e3;
  double stasis_threshold = 1e-5;
};

int run_diagnose(const DiagnoseArgs& args) {
  std::vector<DiagnosticsRecord> records;
  try {
    records = read_metrics(args.metrics_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfigError;
  }
  if (records.size() < 2) {
    std::cerr << "error: metrics file '" << args.metrics_path << "' holds "
              << records.size() << " records; need at least 2\n";
    return kExitConfigError;
  }
  const size_t window = std::min<size_t>(size_t(args.window), records.size());
  const StabilityConfig scfg{args.explode_threshold, args.stasis_threshold};
  const size_t total = records.size() - window + 1;
  size_t counts[3] = {0, 0, 0};
  std::vector<Stability> classes(total);
  for (size_t i = 0; i < total; ++i) {
    classes[i] = stability_diagnose(
        std::span<const DiagnosticsRecord>(records).subspan(i, window), scfg);
    counts[size_t(classes[i])] += 1;
  }
  printf("windows: %zu (size %zu)\n", total, window);
  printf("healthy: %zu (%.6f)\n", counts[size_t(Stability::Healthy)],
         double(counts[size_t(Stability::Healthy)]) / double(total));
  printf("exploding: %zu (%.6f)\n", counts[size_t(Stability::Exploding)],
         double(counts[size_t(Stability::Exploding)]) / double(total));
  printf("static: %zu (%.6f)\n", counts[size_t(Stability::Static)],
         double(counts[size_t(Stability::Static)]) / double(total));
  bool found = false;
  for (size_t i = 1; i < total; ++i) {
    if (classes[i] != classes[i - 1]) {
      printf("first transition: step %" PRId64 " (%s -> %s)\n",
             records[i + window - 1].step,
             to_string(classes[i - 1]).c_str(), to_string(classes[i]).c_str());
      found = true;
      break;
    }
  }
  if (!found) printf("first transition: none\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uneq - data-free adversarial training engine"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train two generators against one "
                                            "discriminator from a config");
  train->add_option("--config", train_args.config_path, "config file path");
  train->add_option("--seed", train_args.seed, "override the run seed");
  train->add_option("--steps", train_args.steps, "override total step count");
  train->add_option("--out", train_args.out, "output directory");
  train->add_option("--set", train_args.sets,
                    "key=value config override (repeatable)");
  train->add_option("--resume", train_args.resume,
                    "checkpoint to resume from");

  RenderArgs render_args;
  auto* render = app.add_subcommand(
      "render", "render a synchronized latent interpolation from a checkpoint");
  render->add_option("checkpoint", render_args.checkpoint_path,
                     "checkpoint file")->required();
  render->add_option("--config", render_args.config_path, "config file path");
  render->add_option("--out", render_args.out, "output directory");
  render->add_option("--keyframes", render_args.keyframes,
                     "number of keyframes (>= 2)");
  render->add_option("--frames-per-segment", render_args.frames_per_segment,
                     "frames per keyframe segment");
  render->add_option("--interpolation", render_args.interpolation,
                     "lerp or slerp");
  render->add_option("--keyframe-seed", render_args.keyframe_seed,
                     "seed for keyframe sampling");
  render->add_flag("--loop", render_args.loop, "close the keyframe loop");
  render->add_flag("--share-latents", render_args.share_latents,
                   "use the same latents for both generators");
  render->add_option("--set", render_args.sets,
                     "key=value config override (repeatable)");

  uint64_t gradcheck_seed = 1;
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of every differentiable op");
  gradcheck->add_option("--seed", gradcheck_seed, "base seed (10 seeds run)");

  DiagnoseArgs diagnose_args;
  auto* diagnose = app.add_subcommand(
      "diagnose", "classify stability over sliding metric windows");
  diagnose->add_option("metrics", diagnose_args.metrics_path,
                       "metrics JSONL file")->required();
  diagnose->add_option("--window", diagnose_args.window, "window size");
  diagnose->add_option("--explode-threshold", diagnose_args.explode_threshold,
                       "gradient norm explosion threshold");
  diagnose->add_option("--stasis-threshold", diagnose_args.stasis_threshold,
                       "stasis threshold");

  CLI11_PARSE(app, argc, argv);

  if (*train) return run_train(train_args);
  if (*render) return run_render(render_args);
  if (*gradcheck) return run_gradcheck(gradcheck_seed);
  if (*diagnose) return run_diagnose(diagnose_args);
  return kExitConfigError;
}
