#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "uneq/checkpoint.hpp"

namespace uneq {

enum class InterpMode { Lerp, Slerp };
std::string to_string(InterpMode mode);

// Paired latents on a shared timeline: each generator keeps its own latent
// space, both are interpolated with the same t.
struct Keyframe {
  std::vector<double> z1;
  std::vector<double> z2;
};

struct RenderPlan {
  int keyframe_count = 4;       // >= 2
  int frames_per_segment = 30;  // >= 1
  InterpMode interpolation = InterpMode::Slerp;
  bool loop = false;  // loop emits the closing frame, identical to the first
  uint64_t keyframe_seed = 0;
  bool share_latents = false;  // z2 = z1 per keyframe when set

  // segments * frames_per_segment + 1 closing endpoint frame; loop mode wraps
  // the last keyframe back to the first.
  int64_t frame_count() const;
  uint64_t hash() const;
  void validate() const;
};

std::vector<Keyframe> sample_keyframes(uint64_t seed, int count, int dim,
                                       bool share_latents);

// LERP = (1-t)a + tb; SLERP follows the great arc, falling back to LERP when
// the angle is below 1e-4. t must be in [0,1]; endpoints are returned exactly.
std::vector<double> interpolate(std::span<const double> a,
                                std::span<const double> b, double t,
                                InterpMode mode);

struct RenderResult {
  int64_t frames = 0;
  int width = 0;
  int height = 0;
};

// Writes frame_%06d.ppm (G1 left, G2 right) plus manifest.json, manifest
// last. Deterministic: same checkpoint + plan give byte-identical frames.
RenderResult render_sequence(const CheckpointData& checkpoint,
                             const RenderPlan& plan,
                             const std::filesystem::path& out_dir);

// Binary PPM, exactly "P6\n{w} {h}\n255\n" + RGB bytes row-major. Values must
// already be in [0,255]; anything else is rejected.
void write_ppm(const std::filesystem::path& path, int width, int height,
               std::span<const double> rgb255);

struct PpmImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;
};
PpmImage read_ppm(const std::filesystem::path& path);

// [-1,1] -> [0,255] with clamping, shared by rendering and previews.
std::vector<double> image_to_rgb255(std::span<const double> values);

// Side-by-side composition of two [1,3,R,R] image tensors into interleaved
// RGB255 rows of width 2R.
std::vector<double> compose_side_by_side(const Tensor& left,
                                         const Tensor& right);

}  // namespace uneq
