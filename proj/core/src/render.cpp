#include "uneq/render.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace uneq {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

uint64_t fnv1a(std::string_view text) {
  uint64_t hash = 0xcbf29ce484222325ull;
  for (char c : text) {
    hash ^= uint8_t(c);
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::string frame_name(int64_t index) {
  char buf[32];
  snprintf(buf, sizeof buf, "frame_%06lld.ppm", (long long)index);
  return buf;
}

}  // namespace

std::string to_string(InterpMode mode) {
  return mode == InterpMode::Lerp ? "lerp" : "slerp";
}

void RenderPlan::validate() const {
  check(keyframe_count >= 2, "render plan needs at least 2 keyframes");
  check(frames_per_segment >= 1, "frames_per_segment must be at least 1");
}

int64_t RenderPlan::frame_count() const {
  const int64_t segments = loop ? keyframe_count : keyframe_count - 1;
  return segments * frames_per_segment + 1;
}

uint64_t RenderPlan::hash() const {
  std::ostringstream os;
  os << "kf=" << keyframe_count << ";fps=" << frames_per_segment
     << ";mode=" << to_string(interpolation) << ";loop=" << (loop ? 1 : 0)
     << ";seed=" << keyframe_seed << ";share=" << (share_latents ? 1 : 0);
  return fnv1a(os.str());
}

std::vector<Keyframe> sample_keyframes(uint64_t seed, int count, int dim,
                                       bool share_latents) {
  check(count >= 2, "need at least 2 keyframes");
  check(dim >= 1, "latent dim must be positive");
  Rng rng(seed, rng_stream::kKeyframes);
  std::vector<Keyframe> keyframes(static_cast<size_t>(count));
  for (auto& kf : keyframes) {
    kf.z1.resize(size_t(dim));
    kf.z2.resize(size_t(dim));
    for (double& v : kf.z1) v = double(float(rng.next_normal()));
    if (share_latents) {
      kf.z2 = kf.z1;
    } else {
      for (double& v : kf.z2) v = double(float(rng.next_normal()));
    }
  }
  return keyframes;
}

std::vector<double> interpolate(std::span<const double> a,
                                std::span<const double> b, double t,
                                InterpMode mode) {
  check(a.size() == b.size() && !a.empty(), "latent dims differ");
  check(t >= 0.0 && t <= 1.0, "interpolation parameter must be in [0,1]");
  if (t == 0.0) return {a.begin(), a.end()};
  if (t == 1.0) return {b.begin(), b.end()};
  std::vector<double> out(a.size());
  if (mode == InterpMode::Slerp) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na > 0.0 && nb > 0.0) {
      const double cosang = std::min(1.0, std::max(-1.0, dot / (na * nb)));
      const double angle = std::acos(cosang);
      if (angle >= 1e-4 && std::sin(angle) > 0.0) {
        const double s = std::sin(angle);
        const double wa = std::sin((1.0 - t) * angle) / s;
        const double wb = std::sin(t * angle) / s;
        for (size_t i = 0; i < a.size(); ++i) out[i] = wa * a[i] + wb * b[i];
        return out;
      }
    }
    // near-parallel or degenerate: fall back to lerp
  }
  for (size_t i = 0; i < a.size(); ++i)
    out[i] = (1.0 - t) * a[i] + t * b[i];
  return out;
}

void write_ppm(const std::filesystem::path& path, int width, int height,
               std::span<const double> rgb255) {
  check(width >= 1 && height >= 1, "image dims must be positive");
  check(rgb255.size() == size_t(width) * height * 3,
        "pixel buffer size does not match dims");
  for (double v : rgb255)
    check(v >= 0.0 && v <= 255.0, "pixel values must lie in [0,255]");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot open '" + path.string() +
                             "' for writing");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  std::string bytes;
  bytes.reserve(rgb255.size());
  for (double v : rgb255) bytes.push_back(char(uint8_t(std::lround(v))));
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

PpmImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 PPM file");
  PpmImage img;
  int maxval = 0;
  in >> img.width >> img.height >> maxval;
  if (maxval != 255) throw std::runtime_error("unsupported PPM maxval");
  in.get();  // single whitespace after header
  img.rgb.resize(size_t(img.width) * img.height * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()),
          std::streamsize(img.rgb.size()));
  if (in.gcount() != std::streamsize(img.rgb.size()))
    throw std::runtime_error("truncated PPM payload");
  return img;
}

std::vector<double> image_to_rgb255(std::span<const double> values) {
  std::vector<double> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    const double unit = std::min(1.0, std::max(0.0, (values[i] + 1.0) * 0.5));
    out[i] = unit * 255.0;
  }
  return out;
}

std::vector<double> compose_side_by_side(const Tensor& left,
                                         const Tensor& right) {
  check(left.shape().size() == 4 && left.shape()[0] == 1 &&
            left.shape()[1] == 3 && left.shape() == right.shape(),
        "compose expects two [1,3,R,R] images");
  const int r = left.shape()[2];
  check(left.shape()[3] == r, "compose expects square images");
  auto lv = left.value();
  auto rv = right.value();
  // planar [3,R,R] -> interleaved rows of width 2R
  std::vector<double> rgb(size_t(r) * 2 * r * 3);
  const size_t plane = size_t(r) * r;
  for (int y = 0; y < r; ++y)
    for (int x = 0; x < 2 * r; ++x) {
      const bool from_left = x < r;
      const auto& src = from_left ? lv : rv;
      const int sx = from_left ? x : x - r;
      for (int c = 0; c < 3; ++c)
        rgb[(size_t(y) * 2 * r + x) * 3 + c] =
            src[size_t(c) * plane + size_t(y) * r + sx];
    }
  return image_to_rgb255(rgb);
}

RenderResult render_sequence(const CheckpointData& checkpoint,
                             const RenderPlan& plan,
                             const std::filesystem::path& out_dir) {
  plan.validate();
  GeneratorPair pair = load_generators(checkpoint);
  const int dim = pair.g1.config().latent_dim;
  check(pair.g2.config().latent_dim == dim,
        "generators disagree on latent dim");
  const auto keyframes = sample_keyframes(plan.keyframe_seed,
                                          plan.keyframe_count, dim,
                                          plan.share_latents);
  const int res = pair.g1.config().resolution(pair.growth.stage);
  std::filesystem::create_directories(out_dir);

  const int64_t total = plan.frame_count();
  const int fps = plan.frames_per_segment;
  const int64_t segments = plan.loop ? plan.keyframe_count
                                     : plan.keyframe_count - 1;
  for (int64_t f = 0; f < total; ++f) {
    int64_t seg = f / fps;
    int64_t within = f % fps;
    if (seg >= segments) {  // closing endpoint frame
      seg = segments - 1;
      within = fps;
    }
    const double t = double(within) / double(fps);
    const Keyframe& ka = keyframes[size_t(seg)];
    const Keyframe& kb = keyframes[size_t((seg + 1) % plan.keyframe_count)];
    // synchronization contract: one t drives both latent spaces
    const auto z1 = interpolate(ka.z1, kb.z1, t, plan.interpolation);
    const auto z2 = interpolate(ka.z2, kb.z2, t, plan.interpolation);
    Tape off;
    off.set_recording(false);
    Tensor img1 =
        pair.g1.forward(off, Tensor::from({1, dim}, z1), pair.growth);
    Tensor img2 =
        pair.g2.forward(off, Tensor::from({1, dim}, z2), pair.growth);
    const auto rgb = compose_side_by_side(img1, img2);
    write_ppm(out_dir / frame_name(f), 2 * res, res, rgb);
  }

  // manifest last, after every frame is on disk
  nlohmann::json manifest;
  manifest["frames"] = total;
  manifest["width"] = 2 * res;
  manifest["height"] = res;
  manifest["keyframe_seed"] = plan.keyframe_seed;
  manifest["plan"] = {
      {"keyframes", plan.keyframe_count},
      {"frames_per_segment", plan.frames_per_segment},
      {"interpolation", to_string(plan.interpolation)},
      {"loop", plan.loop},
      {"share_latents", plan.share_latents},
      {"hash", plan.hash()},
  };
  std::ofstream mf(out_dir / "manifest.json", std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write manifest.json");
  mf << manifest.dump(2) << '\n';
  return {total, 2 * res, res};
}

}  // namespace uneq
