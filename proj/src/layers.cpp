#include "rthare/layers.hpp"

#include <cmath>
#include <numeric>

#include "rthare/imfe.hpp"

namespace rthare {

double Initializer::uniform(double bound) {
  if (!rng_) return 0.0;
  // 53 random bits -> [0,1); avoids implementation-defined std distributions
  const double u = static_cast<double>((*rng_)() >> 11) * 0x1.0p-53;
  return (2.0 * u - 1.0) * bound;
}

std::size_t norm_groups_for(std::size_t channels) { return std::gcd(std::size_t{8}, channels); }

template <typename T>
ConvLayer<T> ConvLayer<T>::make(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                                std::size_t stride, Initializer& init) {
  ConvLayer layer;
  layer.weight = {name + ".weight", BasicTensor<T>(Shape{out, in, k, k})};
  layer.bias = {name + ".bias", BasicTensor<T>(Shape{out})};
  layer.stride = stride;
  layer.pad = k / 2;
  if (init.random()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
    for (auto& w : layer.weight.value.data()) w = static_cast<T>(init.uniform(bound));
  }
  return layer;
}

template <typename T>
Var<T> ConvLayer<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  return conv2d(x, ctx.param(weight), ctx.param(bias), stride, pad);
}

template <typename T>
void ConvLayer<T>::parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
NormLayer<T> NormLayer<T>::make(const std::string& name, std::size_t channels) {
  NormLayer layer;
  layer.gamma = {name + ".gamma", BasicTensor<T>::filled(Shape{channels}, T{1})};
  layer.beta = {name + ".beta", BasicTensor<T>(Shape{channels})};
  layer.groups = norm_groups_for(channels);
  return layer;
}

template <typename T>
Var<T> NormLayer<T>::forward(const Context<T>& ctx, const Var<T>& x) const {
  return group_norm(x, groups, ctx.param(gamma), ctx.param(beta), eps);
}

template <typename T>
void NormLayer<T>::parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
Var<T> traced_relu(const Var<T>& x, ForwardTrace* trace) {
  Var<T> y = relu(x);
  if (trace) {
    std::uint64_t h = trace->relu_signature;
    for (T v : x.value().data()) {
      h ^= v > T{0} ? 1u : 0u;
      h *= 0x100000001b3ULL;
    }
    trace->relu_signature = h;
    trace->relu_count += x.value().size();
  }
  return y;
}

template <typename T>
ConvNormAct<T> ConvNormAct<T>::make(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                                    std::size_t stride, Initializer& init) {
  return {ConvLayer<T>::make(name + ".conv", in, out, k, stride, init), NormLayer<T>::make(name + ".norm", out)};
}

template <typename T>
Var<T> ConvNormAct<T>::forward(const Context<T>& ctx, const Var<T>& x, ForwardTrace* trace) const {
  return traced_relu(norm.forward(ctx, conv.forward(ctx, x)), trace);
}

template <typename T>
void ConvNormAct<T>::parameters(std::vector<Parameter<T>*>& out) {
  conv.parameters(out);
  norm.parameters(out);
}

template <typename T>
ResidualBlock<T> ResidualBlock<T>::make(const std::string& name, std::size_t in, std::size_t out, std::size_t stride,
                                        Initializer& init) {
  ResidualBlock b;
  b.conv_a = ConvLayer<T>::make(name + ".conv_a", in, out, 3, stride, init);
  b.norm_a = NormLayer<T>::make(name + ".norm_a", out);
  b.conv_b = ConvLayer<T>::make(name + ".conv_b", out, out, 3, 1, init);
  b.norm_b = NormLayer<T>::make(name + ".norm_b", out);
  if (stride != 1 || in != out) {
    b.projection = ConvLayer<T>::make(name + ".proj", in, out, 1, stride, init);
    b.projection_norm = NormLayer<T>::make(name + ".proj_norm", out);
  }
  return b;
}

template <typename T>
Var<T> ResidualBlock<T>::forward(const Context<T>& ctx, const Var<T>& x, ForwardTrace* trace) const {
  Var<T> path = traced_relu(norm_a.forward(ctx, conv_a.forward(ctx, x)), trace);
  path = norm_b.forward(ctx, conv_b.forward(ctx, path));
  Var<T> shortcut = projection ? projection_norm->forward(ctx, projection->forward(ctx, x)) : x;
  if (shortcut.shape() != path.shape()) {
    throw DimensionError("residual block: path " + to_string(path.shape()) + " vs shortcut " +
                         to_string(shortcut.shape()));
  }
  return traced_relu(add(path, shortcut), trace);
}

template <typename T>
void ResidualBlock<T>::parameters(std::vector<Parameter<T>*>& out) {
  conv_a.parameters(out);
  norm_a.parameters(out);
  conv_b.parameters(out);
  norm_b.parameters(out);
  if (projection) {
    projection->parameters(out);
    projection_norm->parameters(out);
  }
}

template struct ConvLayer<float>;
template struct ConvLayer<double>;
template struct NormLayer<float>;
template struct NormLayer<double>;
template struct ConvNormAct<float>;
template struct ConvNormAct<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;
template Var<float> traced_relu<float>(const Var<float>&, ForwardTrace*);
template Var<double> traced_relu<double>(const Var<double>&, ForwardTrace*);

}  // namespace rthare
