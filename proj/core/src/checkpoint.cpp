#include "uneq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace uneq {

namespace {

constexpr char kMagic[5] = {'U', 'N', 'E', 'Q', '1'};

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char(uint8_t(v >> (8 * i))));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char(uint8_t(v >> (8 * i))));
}

void put_f32(std::string& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw CheckpointError("truncated checkpoint");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void append_entry(std::string& buf, const std::string& name, const Tensor& t) {
  put_u32(buf, uint32_t(name.size()));
  buf.append(name);
  const auto& shape = t.shape();
  put_u32(buf, uint32_t(shape.size()));
  for (int d : shape) put_u32(buf, uint32_t(d));
  for (double v : t.value()) put_f32(buf, float(v));
}

void append_store(std::string& buf, const std::string& prefix,
                  const ParamStore& params, uint32_t& count) {
  for (const auto& e : params.entries()) {
    append_entry(buf, prefix + e.name, e.tensor);
    ++count;
  }
}

void append_moments(std::string& buf, const std::string& prefix,
                    const Adam& opt, uint32_t& count) {
  for (const auto& e : opt.moments_m()) {
    append_entry(buf, "opt." + prefix + e.name + ".m", e.tensor);
    ++count;
  }
  for (const auto& e : opt.moments_v()) {
    append_entry(buf, "opt." + prefix + e.name + ".v", e.tensor);
    ++count;
  }
}

void copy_into(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape())
    throw CheckpointError("shape mismatch for entry '" + name + "': expected " +
                          shape_str(dst.shape()) + ", found " +
                          shape_str(src.shape()));
  auto sv = src.value();
  auto dv = dst.value_mut();
  for (size_t i = 0; i < sv.size(); ++i) dv[i] = sv[i];
}

void restore_store(ParamStore& params, const std::string& prefix,
                   const std::map<std::string, const Tensor*>& index) {
  for (auto& e : params.entries_mut()) {
    auto it = index.find(prefix + e.name);
    if (it == index.end())
      throw CheckpointError("missing checkpoint entry '" + prefix + e.name +
                            "'");
    copy_into(e.tensor, *it->second, prefix + e.name);
  }
}

void restore_moments(Adam& opt, const std::string& prefix,
                     const std::map<std::string, const Tensor*>& index) {
  for (auto& e : opt.moments_m()) {
    const std::string name = "opt." + prefix + e.name + ".m";
    auto it = index.find(name);
    if (it == index.end())
      throw CheckpointError("missing checkpoint entry '" + name + "'");
    copy_into(e.tensor, *it->second, name);
  }
  for (auto& e : opt.moments_v()) {
    const std::string name = "opt." + prefix + e.name + ".v";
    auto it = index.find(name);
    if (it == index.end())
      throw CheckpointError("missing checkpoint entry '" + name + "'");
    copy_into(e.tensor, *it->second, name);
  }
}

ParamStore collect_prefixed(const CheckpointData& data,
                            const std::string& prefix) {
  ParamStore store;
  for (const auto& e : data.entries) {
    if (e.name.rfind(prefix, 0) == 0)
      store.add(e.name.substr(prefix.size()), e.tensor);
  }
  return store;
}

}  // namespace

const Tensor* CheckpointData::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e.tensor;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path,
                     const TrainState& state, uint64_t config_hash) {
  std::string body;
  uint32_t count = 0;
  append_store(body, "g1.", state.g1.params(), count);
  append_store(body, "g2.", state.g2.params(), count);
  append_store(body, "d.", state.d.params(), count);
  append_moments(body, "g1.", state.opt_g1, count);
  append_moments(body, "g2.", state.opt_g2, count);
  append_moments(body, "d.", state.opt_d, count);

  std::string buf;
  buf.append(kMagic, sizeof kMagic);
  put_u32(buf, kCheckpointVersion);
  put_u64(buf, config_hash);
  put_u32(buf, count);
  buf.append(body);
  const auto rng = state.rng.state();
  for (uint64_t w : rng) put_u64(buf, w);
  put_u64(buf, uint64_t(state.step));
  put_u32(buf, uint32_t(state.growth.stage));
  put_f32(buf, float(state.growth.alpha));

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + tmp.string() +
                                    "' for writing");
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw CheckpointError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  Reader r{buf};

  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw CheckpointError("bad checkpoint magic in '" + path.string() + "'");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  CheckpointData data;
  data.config_hash = r.u64();
  const uint32_t count = r.u32();
  data.entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    if (name_len == 0 || name_len > 4096)
      throw CheckpointError("corrupt entry name length");
    const std::string name = r.bytes(name_len);
    const uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw CheckpointError("corrupt entry rank");
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = r.u32();
      if (dim == 0 || dim > (1u << 24)) throw CheckpointError("corrupt entry dim");
      shape[d] = int(dim);
      numel *= dim;
    }
    if (numel > (int64_t(1) << 28)) throw CheckpointError("corrupt entry size");
    std::vector<double> values(static_cast<size_t>(numel));
    for (auto& v : values) v = double(r.f32());
    data.entries.push_back({name, Tensor::from(shape, values)});
  }
  for (auto& w : data.rng_state) w = r.u64();
  data.step = r.u64();
  data.stage = r.u32();
  data.alpha = r.f32();
  if (r.pos != buf.size())
    throw CheckpointError("trailing bytes after checkpoint trailer");
  return data;
}

TrainState restore_train_state(const CheckpointData& data,
                               const TrainConfig& cfg) {
  if (data.config_hash != cfg.dynamics_hash())
    throw CheckpointError(
        "checkpoint was produced by a different configuration (config hash "
        "mismatch)");
  TrainState state = TrainState::init(cfg);
  std::map<std::string, const Tensor*> index;
  for (const auto& e : data.entries) index[e.name] = &e.tensor;
  restore_store(state.g1.params(), "g1.", index);
  restore_store(state.g2.params(), "g2.", index);
  restore_store(state.d.params(), "d.", index);
  restore_moments(state.opt_g1, "g1.", index);
  restore_moments(state.opt_g2, "g2.", index);
  restore_moments(state.opt_d, "d.", index);
  state.rng.set_state(data.rng_state);
  state.step = int64_t(data.step);
  state.growth = growth_schedule(state.step, cfg);
  return state;
}

GeneratorPair load_generators(const CheckpointData& data) {
  ParamStore p1 = collect_prefixed(data, "g1.");
  ParamStore p2 = collect_prefixed(data, "g2.");
  if (p1.size() == 0 || p2.size() == 0)
    throw CheckpointError("checkpoint holds no generator parameters");
  GeneratorPair pair{
      Generator::from_params(infer_generator_config(p1), std::move(p1)),
      Generator::from_params(infer_generator_config(p2), std::move(p2)),
      GrowthState{int(data.stage), double(data.alpha)}};
  return pair;
}

}  // namespace uneq
