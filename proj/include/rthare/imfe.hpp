#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rthare/layers.hpp"

namespace rthare {

struct IMFEConfig {
  std::string profile = "tiny";
  std::size_t K = 3;
  std::size_t H = 32;
  std::size_t W = 40;
  std::size_t D = 8;
  std::size_t feature_len = 64;

  static IMFEConfig full();
  static IMFEConfig tiny();
  // "full" | "tiny"; anything else throws ConfigError
  static IMFEConfig from_profile(std::string_view name);

  void validate() const;
  std::size_t map_h() const { return H / 8; }
  std::size_t map_w() const { return W / 8; }
  std::size_t positions() const { return map_h() * map_w(); }
  bool operator==(const IMFEConfig&) const = default;
};

// Records what a forward pass touched. Shapes are always kept; tensors only for stages
// named in `taps`.
struct ForwardTrace {
  struct Record {
    std::string stage;
    Shape shape;
  };
  std::vector<Record> records;
  std::set<std::string> taps;
  std::map<std::string, TensorD> tapped;
  std::uint64_t relu_signature = 0xcbf29ce484222325ULL;
  std::size_t relu_count = 0;

  void record(const std::string& stage, const Shape& shape) { records.push_back({stage, shape}); }
  const Record* find(std::string_view stage) const;
  // largest spatial extent (H*W) of any rank-3/4 record
  std::size_t max_spatial() const;
};

/// The integrated motion feature extractor.
///
/// clip [K,3,H,W] -> stem + 6 residual blocks (per frame, shared weights) -> [K,D,H/8,W/8]
/// -> K-1 consecutive-pair correlation volumes [hw,h,w] -> concat [(K-1)hw,h,w]
/// -> 5 conv layers -> 9 residual blocks -> global average pool -> [8D]
template <typename T>
class IMFENetwork {
 public:
  IMFENetwork(IMFEConfig cfg, std::uint64_t seed);
  // all parameters zero (gamma one)
  static IMFENetwork uninitialized(IMFEConfig cfg);

  const IMFEConfig& config() const { return cfg_; }
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;

  template <typename U>
  IMFENetwork<U> cast() const {
    auto out = IMFENetwork<U>::uninitialized(cfg_);
    auto dst = out.parameters();
    auto src = parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }

  // [K,3,H,W] -> [K,D,H/8,W/8]
  Var<T> encode(const Context<T>& ctx, const Var<T>& frames, ForwardTrace* trace = nullptr) const;
  // [K,3,H,W] -> [feature_len]
  Var<T> forward(const Context<T>& ctx, const Var<T>& clip, ForwardTrace* trace = nullptr) const;

  // number of distinct correlation resolutions built by forward (always one)
  std::size_t correlation_levels() const { return 1; }

  const ConvNormAct<T>& stem() const { return stem_; }
  const std::vector<ResidualBlock<T>>& encoder() const { return encoder_; }
  const std::vector<ConvNormAct<T>>& compression() const { return compression_; }
  const std::vector<ResidualBlock<T>>& feature_encoder() const { return feature_encoder_; }

 private:
  IMFENetwork(IMFEConfig cfg, Initializer init);

  IMFEConfig cfg_;
  ConvNormAct<T> stem_;
  std::vector<ResidualBlock<T>> encoder_;
  std::vector<ConvNormAct<T>> compression_;
  std::vector<ResidualBlock<T>> feature_encoder_;
};

// pixel/127.5 - 1
template <typename T>
BasicTensor<T> normalize_pixels(const BasicTensor<T>& raw);

template <typename T>
BasicTensor<T> batched_feature_encode(const BasicTensor<T>& frames, const IMFENetwork<T>& net);

template <typename T>
BasicTensor<T> correlate(const BasicTensor<T>& fa, const BasicTensor<T>& fb, T scale);

template <typename T>
BasicTensor<T> concat_volumes(const std::vector<BasicTensor<T>>& volumes);

template <typename T>
BasicTensor<T> extract_motion_feature(const BasicTensor<T>& clip, const IMFENetwork<T>& net,
                                      ForwardTrace* trace = nullptr);

// Directory of RTT1 files plus manifest.json (config, seed, parameter name -> file).
template <typename T>
void save_checkpoint(const IMFENetwork<T>& net, const std::filesystem::path& dir, std::uint64_t seed = 0);

template <typename T>
IMFENetwork<T> load_checkpoint(const std::filesystem::path& dir);

IMFEConfig load_checkpoint_config(const std::filesystem::path& dir);

}  // namespace rthare
