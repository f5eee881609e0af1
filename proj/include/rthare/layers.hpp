#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rthare/autodiff.hpp"

namespace rthare {

struct ForwardTrace;

// Fills new parameters. With no seed every tensor is zero (gamma one); used when the
// values are about to be overwritten by a checkpoint or a cast.
class Initializer {
 public:
  Initializer() = default;
  explicit Initializer(std::uint64_t seed) : rng_(std::in_place, seed) {}

  bool random() const { return rng_.has_value(); }
  // uniform in [-bound, bound]
  double uniform(double bound);

 private:
  std::optional<std::mt19937_64> rng_;
};

std::size_t norm_groups_for(std::size_t channels);

template <typename T>
struct ConvLayer {
  Parameter<T> weight;  // [out, in, kh, kw]
  Parameter<T> bias;    // [out]
  std::size_t stride = 1;
  std::size_t pad = 0;

  static ConvLayer make(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                        Initializer& init);

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const;
  void parameters(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct NormLayer {
  Parameter<T> gamma;
  Parameter<T> beta;
  std::size_t groups = 1;
  T eps = T(1e-5);

  static NormLayer make(const std::string& name, std::size_t channels);

  Var<T> forward(const Context<T>& ctx, const Var<T>& x) const;
  void parameters(std::vector<Parameter<T>*>& out);
};

// conv -> group norm -> relu
template <typename T>
struct ConvNormAct {
  ConvLayer<T> conv;
  NormLayer<T> norm;

  static ConvNormAct make(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                          Initializer& init);
  Var<T> forward(const Context<T>& ctx, const Var<T>& x, ForwardTrace* trace) const;
  void parameters(std::vector<Parameter<T>*>& out);
};

template <typename T>
struct ResidualBlock {
  ConvLayer<T> conv_a, conv_b;
  NormLayer<T> norm_a, norm_b;
  std::optional<ConvLayer<T>> projection;
  std::optional<NormLayer<T>> projection_norm;

  static ResidualBlock make(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                            Initializer& init);

  std::size_t in_channels() const { return conv_a.in_channels(); }
  std::size_t out_channels() const { return conv_b.out_channels(); }
  Var<T> forward(const Context<T>& ctx, const Var<T>& x, ForwardTrace* trace) const;
  void parameters(std::vector<Parameter<T>*>& out);
};

// relu that also feeds the trace's activation-pattern signature
template <typename T>
Var<T> traced_relu(const Var<T>& x, ForwardTrace* trace);

}  // namespace rthare
