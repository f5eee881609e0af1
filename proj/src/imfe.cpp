#include "rthare/imfe.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "rthare/tensor_io.hpp"

namespace rthare {

using json = nlohmann::json;

IMFEConfig IMFEConfig::full() { return {"full", 6, 256, 344, 256, 2048}; }
IMFEConfig IMFEConfig::tiny() { return {"tiny", 3, 32, 40, 8, 64}; }

IMFEConfig IMFEConfig::from_profile(std::string_view name) {
  if (name == "full") return full();
  if (name == "tiny") return tiny();
  throw ConfigError("unknown profile '" + std::string(name) + "' (expected tiny or full)");
}

void IMFEConfig::validate() const {
  if (K < 2) throw ConfigError("IMFE clip length K must be >= 2");
  if (H == 0 || W == 0 || H % 8 || W % 8) {
    throw ConfigError("IMFE input " + std::to_string(H) + "x" + std::to_string(W) + " must be positive multiples of 8");
  }
  if (D < 4 || D % 4) throw ConfigError("IMFE width D must be a positive multiple of 4");
  if (feature_len != 8 * D) {
    throw ConfigError("IMFE feature_len " + std::to_string(feature_len) + " must equal 8*D = " + std::to_string(8 * D));
  }
}

const ForwardTrace::Record* ForwardTrace::find(std::string_view stage) const {
  for (const auto& r : records) {
    if (r.stage == stage) return &r;
  }
  return nullptr;
}

std::size_t ForwardTrace::max_spatial() const {
  std::size_t m = 0;
  for (const auto& r : records) {
    if (r.shape.size() >= 3) m = std::max(m, r.shape[r.shape.size() - 1] * r.shape[r.shape.size() - 2]);
  }
  return m;
}

namespace {

template <typename F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const DimensionError& e) {
    throw DimensionError(name + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError("first non-finite output at " + name + ": " + e.what());
  }
}

template <typename T>
void note(ForwardTrace* trace, const std::string& name, const Var<T>& v) {
  if (!trace) return;
  trace->record(name, v.shape());
  if (trace->taps.count(name)) trace->tapped[name] = v.value().template cast<double>();
}

}  // namespace

template <typename T>
IMFENetwork<T>::IMFENetwork(IMFEConfig cfg, std::uint64_t seed) : IMFENetwork(std::move(cfg), Initializer(seed)) {}

template <typename T>
IMFENetwork<T> IMFENetwork<T>::uninitialized(IMFEConfig cfg) {
  return IMFENetwork(std::move(cfg), Initializer());
}

template <typename T>
IMFENetwork<T>::IMFENetwork(IMFEConfig cfg, Initializer init) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t D = cfg_.D;
  stem_ = ConvNormAct<T>::make("stem", 3, D / 4, 7, 2, init);

  const std::size_t enc_width[3] = {D / 4, D / 2, D};
  std::size_t in = D / 4;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t b = 0; b < 2; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      encoder_.push_back(ResidualBlock<T>::make("encoder." + std::to_string(encoder_.size()), in, enc_width[s], stride, init));
      in = enc_width[s];
    }
  }

  const std::size_t vol_ch = (cfg_.K - 1) * cfg_.positions();
  struct Spec {
    std::size_t in, out, k, stride;
  };
  const Spec comp[5] = {{vol_ch, 4 * D, 1, 1}, {4 * D, 2 * D, 3, 1}, {2 * D, 2 * D, 3, 2}, {2 * D, 4 * D, 3, 2}, {4 * D, 4 * D, 3, 1}};
  for (std::size_t i = 0; i < 5; ++i) {
    compression_.push_back(
        ConvNormAct<T>::make("compress." + std::to_string(i), comp[i].in, comp[i].out, comp[i].k, comp[i].stride, init));
  }

  in = 4 * D;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t width = s == 0 ? 4 * D : 8 * D;
    for (std::size_t b = 0; b < 3; ++b) {
      const std::size_t stride = (s == 1 && b == 0) ? 2 : 1;
      feature_encoder_.push_back(
          ResidualBlock<T>::make("feature." + std::to_string(feature_encoder_.size()), in, width, stride, init));
      in = width;
    }
  }
}

template <typename T>
std::vector<Parameter<T>*> IMFENetwork<T>::parameters() {
  std::vector<Parameter<T>*> out;
  stem_.parameters(out);
  for (auto& b : encoder_) b.parameters(out);
  for (auto& c : compression_) c.parameters(out);
  for (auto& b : feature_encoder_) b.parameters(out);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> IMFENetwork<T>::parameters() const {
  auto mut = const_cast<IMFENetwork*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::size_t IMFENetwork<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
Var<T> IMFENetwork<T>::encode(const Context<T>& ctx, const Var<T>& frames, ForwardTrace* trace) const {
  const Shape expect{cfg_.K, 3, cfg_.H, cfg_.W};
  if (frames.shape() != expect) {
    throw DimensionError("imfe.encode: expected clip " + to_string(expect) + ", got " + to_string(frames.shape()));
  }
  Var<T> h = stage("stem", [&] { return stem_.forward(ctx, frames, trace); });
  note(trace, "stem", h);
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    const std::string name = "encoder." + std::to_string(i);
    h = stage(name, [&] { return encoder_[i].forward(ctx, h, trace); });
    note(trace, name, h);
  }
  note(trace, "encoder", h);
  return h;
}

template <typename T>
Var<T> IMFENetwork<T>::forward(const Context<T>& ctx, const Var<T>& clip, ForwardTrace* trace) const {
  Var<T> maps = encode(ctx, clip, trace);
  const T scale = T{1} / std::sqrt(static_cast<T>(cfg_.D));
  std::vector<Var<T>> volumes;
  for (std::size_t k = 0; k + 1 < cfg_.K; ++k) {
    const std::string name = "corr." + std::to_string(k);
    volumes.push_back(stage(name, [&] { return correlate(select(maps, k), select(maps, k + 1), scale); }));
    note(trace, name, volumes.back());
  }
  maps = Var<T>();
  Var<T> h = stage("concat", [&] { return concat(std::span<const Var<T>>(volumes)); });
  volumes.clear();
  note(trace, "concat", h);
  for (std::size_t i = 0; i < compression_.size(); ++i) {
    const std::string name = "compress." + std::to_string(i);
    h = stage(name, [&] { return compression_[i].forward(ctx, h, trace); });
    note(trace, name, h);
  }
  for (std::size_t i = 0; i < feature_encoder_.size(); ++i) {
    const std::string name = "feature." + std::to_string(i);
    h = stage(name, [&] { return feature_encoder_[i].forward(ctx, h, trace); });
    note(trace, name, h);
  }
  h = stage("pool", [&] { return global_avg_pool(h); });
  note(trace, "pool", h);
  return h;
}

template <typename T>
BasicTensor<T> normalize_pixels(const BasicTensor<T>& raw) {
  BasicTensor<T> out = raw;
  for (auto& v : out.data()) v = v / T(127.5) - T{1};
  return out;
}

template <typename T>
BasicTensor<T> batched_feature_encode(const BasicTensor<T>& frames, const IMFENetwork<T>& net) {
  return net.encode(Context<T>{}, borrow(frames)).value();
}

template <typename T>
BasicTensor<T> correlate(const BasicTensor<T>& fa, const BasicTensor<T>& fb, T scale) {
  return correlate(borrow(fa), borrow(fb), scale).value();
}

template <typename T>
BasicTensor<T> concat_volumes(const std::vector<BasicTensor<T>>& volumes) {
  if (volumes.empty()) throw ContractError("concat_volumes: empty volume list");
  for (const auto& v : volumes) {
    if (v.shape() != volumes[0].shape()) {
      throw DimensionError("concat_volumes: volume " + to_string(v.shape()) + " differs from " +
                           to_string(volumes[0].shape()));
    }
  }
  std::vector<Var<T>> parts;
  for (const auto& v : volumes) parts.push_back(borrow(v));
  return concat(std::span<const Var<T>>(parts)).value();
}

template <typename T>
BasicTensor<T> extract_motion_feature(const BasicTensor<T>& clip, const IMFENetwork<T>& net, ForwardTrace* trace) {
  return net.forward(Context<T>{}, borrow(clip), trace).value();
}

namespace {

json config_to_json(const IMFEConfig& c) {
  return {{"profile", c.profile}, {"K", c.K}, {"H", c.H}, {"W", c.W}, {"D", c.D}, {"feature_len", c.feature_len}};
}

json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw IoError("checkpoint manifest not found: " + path.string());
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError("invalid checkpoint manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace

IMFEConfig load_checkpoint_config(const std::filesystem::path& dir) {
  const json m = read_manifest(dir);
  try {
    const json& c = m.at("config");
    IMFEConfig cfg{c.at("profile").get<std::string>(), c.at("K").get<std::size_t>(), c.at("H").get<std::size_t>(),
                   c.at("W").get<std::size_t>(),       c.at("D").get<std::size_t>(), c.at("feature_len").get<std::size_t>()};
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint manifest in " + dir.string() + " lacks a valid config: " + e.what());
  }
}

template <typename T>
void save_checkpoint(const IMFENetwork<T>& net, const std::filesystem::path& dir, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  json tensors = json::object();
  for (const auto* p : net.parameters()) {
    const std::string file = p->name + ".rtt";
    save_rtt(dir / file, p->value);
    tensors[p->name] = file;
  }
  json manifest = {{"format", "rthare-imfe"},
                   {"version", 1},
                   {"dtype", dtype_of<T> == DType::f32 ? "f32" : "f64"},
                   {"seed", seed},
                   {"config", config_to_json(net.config())},
                   {"tensors", tensors}};
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

template <typename T>
IMFENetwork<T> load_checkpoint(const std::filesystem::path& dir) {
  const IMFEConfig cfg = load_checkpoint_config(dir);
  const json m = read_manifest(dir);
  auto net = IMFENetwork<T>::uninitialized(cfg);
  const json& tensors = m.value("tensors", json::object());
  for (auto* p : net.parameters()) {
    if (!tensors.contains(p->name)) throw IoError("checkpoint " + dir.string() + " is missing tensor " + p->name);
    BasicTensor<T> v = load_rtt<T>(dir / tensors[p->name].template get<std::string>());
    if (v.shape() != p->value.shape()) {
      throw DimensionError("checkpoint tensor " + p->name + " has shape " + to_string(v.shape()) + ", expected " +
                           to_string(p->value.shape()));
    }
    p->value = std::move(v);
  }
  return net;
}

#define RTHARE_INSTANTIATE(T)                                                                           \
  template class IMFENetwork<T>;                                                                        \
  template BasicTensor<T> normalize_pixels<T>(const BasicTensor<T>&);                                   \
  template BasicTensor<T> batched_feature_encode<T>(const BasicTensor<T>&, const IMFENetwork<T>&);      \
  template BasicTensor<T> correlate<T>(const BasicTensor<T>&, const BasicTensor<T>&, T);                \
  template BasicTensor<T> concat_volumes<T>(const std::vector<BasicTensor<T>>&);                        \
  template BasicTensor<T> extract_motion_feature<T>(const BasicTensor<T>&, const IMFENetwork<T>&,       \
                                                    ForwardTrace*);                                     \
  template void save_checkpoint<T>(const IMFENetwork<T>&, const std::filesystem::path&, std::uint64_t); \
  template IMFENetwork<T> load_checkpoint<T>(const std::filesystem::path&);

RTHARE_INSTANTIATE(float)
RTHARE_INSTANTIATE(double)
#undef RTHARE_INSTANTIATE

}  // namespace rthare
