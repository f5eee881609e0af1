#include "rthare/autodiff.hpp"

#include <cmath>

#include "rthare/kernels.hpp"

namespace rthare {

using detail::Node;

template <typename T>
void require_finite(const BasicTensor<T>& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite value in " + what + " output " + to_string(t.shape()));
}

template <typename T>
Var<T> Tape<T>::watch(const Parameter<T>& p) {
  if (auto it = watched_.find(&p); it != watched_.end()) return Var<T>(it->second, this);
  auto node = std::make_shared<Node<T>>();
  node->borrowed = &p.value;
  node->requires_grad = true;
  watched_.emplace(&p, node);
  return Var<T>(node, this);
}

template <typename T>
Var<T> Tape<T>::variable(BasicTensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->own = std::move(value);
  node->requires_grad = true;
  nodes_.push_back(node);
  return Var<T>(node, this);
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (consumed_) throw ContractError("backward called twice on the same tape");
  if (!loss.valid() || loss.value().size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.valid() ? to_string(loss.shape()) : std::string("<null>")));
  }
  consumed_ = true;
  if (loss.tape() == this && loss.requires_grad()) {
    loss.node()->grad_buffer()[0] = T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.pullback && !n.grad.empty()) n.pullback(n);
    }
  }
  for (auto& [param, node] : watched_) node->grad_buffer();
  for (auto& n : nodes_) {
    if (n->requires_grad) n->grad_buffer();
  }
}

template <typename T>
const BasicTensor<T>& Tape<T>::grad(const Parameter<T>& p) const {
  if (!consumed_) throw ContractError("grad requested before backward");
  auto it = watched_.find(&p);
  if (it == watched_.end()) throw ContractError("parameter '" + p.name + "' was not watched by this tape");
  return it->second->grad;
}

template <typename T>
const BasicTensor<T>& Tape<T>::grad(const Var<T>& v) const {
  if (!consumed_) throw ContractError("grad requested before backward");
  if (v.tape() != this || v.node()->grad.empty()) throw ContractError("variable has no gradient on this tape");
  return v.node()->grad;
}

template <typename T>
Var<T> constant(BasicTensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->own = std::move(value);
  return Var<T>(node, nullptr);
}

template <typename T>
Var<T> borrow(const BasicTensor<T>& value) {
  auto node = std::make_shared<Node<T>>();
  node->borrowed = &value;
  return Var<T>(node, nullptr);
}

namespace {

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : vars) {
    if (!v || !v->valid() || !v->requires_grad() || !v->tape()) continue;
    if (tape && tape != v->tape()) throw ContractError("operands recorded on different tapes");
    tape = v->tape();
  }
  return tape;
}

template <typename T>
Var<T> make_result(BasicTensor<T> value, Tape<T>* tape, std::vector<std::shared_ptr<Node<T>>> inputs,
                   std::function<void(Node<T>&)> pullback, const char* op) {
  require_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->own = std::move(value);
  if (tape) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->pullback = std::move(pullback);
    tape->record(node);
  }
  return Var<T>(node, tape);
}

struct ImageDims {
  std::size_t batch, channels, height, width;
  bool batched;
};

inline ImageDims image_dims(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw DimensionError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " + to_string(s));
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t pad) {
  const auto d = image_dims(x.shape(), "conv2d");
  const Shape& ws = weight.shape();
  if (ws.size() != 4 || ws[1] != d.channels) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " incompatible with weight " + to_string(ws));
  }
  const bool has_bias = bias.valid();
  if (has_bias && (bias.value().size() != ws[0])) {
    throw DimensionError("conv2d: bias " + to_string(bias.shape()) + " does not match weight " + to_string(ws));
  }
  kernels::ConvGeometry g{d.channels, d.height, d.width, ws[0], ws[2], ws[3], stride, pad};
  g.validate();
  const std::size_t in_sz = d.channels * d.height * d.width;
  const std::size_t out_sz = g.out_ch * g.out_plane();
  Shape out_shape = d.batched ? Shape{d.batch, g.out_ch, g.out_h(), g.out_w()} : Shape{g.out_ch, g.out_h(), g.out_w()};
  BasicTensor<T> out(out_shape);
  for (std::size_t n = 0; n < d.batch; ++n) {
    kernels::parallel::conv2d(g, x.value().raw() + n * in_sz, weight.value().raw(),
                              has_bias ? bias.value().raw() : nullptr, out.raw() + n * out_sz);
  }
  Tape<T>* tape = common_tape<T>({&x, &weight, &bias});
  std::vector<std::shared_ptr<Node<T>>> inputs{x.node(), weight.node()};
  if (has_bias) inputs.push_back(bias.node());
  auto pullback = [g, batch = d.batch, in_sz, out_sz, has_bias](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& wn = *self.inputs[1];
    Node<T>* bn = has_bias ? self.inputs[2].get() : nullptr;
    const bool want_b = bn && bn->requires_grad;
    std::vector<T> scratch;
    T* gw = nullptr;
    if (wn.requires_grad) {
      gw = wn.grad_buffer().raw();
    } else if (want_b) {
      scratch.assign(wn.value().size(), T{0});
      gw = scratch.data();
    }
    for (std::size_t n = 0; n < batch; ++n) {
      const T* gout = self.grad.raw() + n * out_sz;
      if (xn.requires_grad) {
        kernels::parallel::conv2d_grad_input(g, wn.value().raw(), gout, xn.grad_buffer().raw() + n * in_sz);
      }
      if (gw) {
        kernels::parallel::conv2d_grad_weight(g, xn.value().raw() + n * in_sz, gout, gw,
                                              want_b ? bn->grad_buffer().raw() : nullptr);
      }
    }
  };
  return make_result<T>(std::move(out), tape, std::move(inputs), pullback, "conv2d");
}

template <typename T>
Var<T> group_norm(const Var<T>& x, std::size_t groups, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const auto d = image_dims(x.shape(), "group_norm");
  if (groups == 0 || d.channels % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(d.channels) + " channels not divisible by " +
                      std::to_string(groups) + " groups");
  }
  if (gamma.value().size() != d.channels || beta.value().size() != d.channels) {
    throw DimensionError("group_norm: affine parameters " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " do not match input " + to_string(x.shape()));
  }
  const std::size_t plane = d.height * d.width;
  const std::size_t sample = d.channels * plane;
  BasicTensor<T> out(x.shape());
  auto stats = std::make_shared<std::vector<T>>(2 * d.batch * groups);
  for (std::size_t n = 0; n < d.batch; ++n) {
    kernels::group_norm_forward(d.channels, plane, groups, x.value().raw() + n * sample, gamma.value().raw(),
                                beta.value().raw(), eps, out.raw() + n * sample, stats->data() + n * groups,
                                stats->data() + (d.batch + n) * groups);
  }
  Tape<T>* tape = common_tape<T>({&x, &gamma, &beta});
  auto pullback = [d, groups, plane, sample, stats](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    Node<T>& gn = *self.inputs[1];
    Node<T>& bn = *self.inputs[2];
    for (std::size_t n = 0; n < d.batch; ++n) {
      kernels::group_norm_backward(d.channels, plane, groups, xn.value().raw() + n * sample, gn.value().raw(),
                                   stats->data() + n * groups, stats->data() + (d.batch + n) * groups,
                                   self.grad.raw() + n * sample,
                                   xn.requires_grad ? xn.grad_buffer().raw() + n * sample : nullptr,
                                   gn.requires_grad ? gn.grad_buffer().raw() : nullptr,
                                   bn.requires_grad ? bn.grad_buffer().raw() : nullptr);
    }
  };
  return make_result<T>(std::move(out), tape, {x.node(), gamma.node(), beta.node()}, pullback, "group_norm");
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  BasicTensor<T> out(x.shape());
  const T* in = x.value().raw();
  T* o = out.raw();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = in[i] > T{0} ? in[i] : T{0};
  auto pullback = [](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* gx = xn.grad_buffer().raw();
    const T* y = self.value().raw();
    const T* gy = self.grad.raw();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (y[i] > T{0}) gx[i] += gy[i];
    }
  };
  return make_result<T>(std::move(out), common_tape<T>({&x}), {x.node()}, pullback, "relu");
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto pullback = [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      T* g = in->grad_buffer().raw();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  };
  return make_result<T>(std::move(out), common_tape<T>({&a, &b}), {a.node(), b.node()}, pullback, "add");
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto d = image_dims(x.shape(), "global_avg_pool");
  const std::size_t plane = d.height * d.width;
  BasicTensor<T> out(d.batched ? Shape{d.batch, d.channels} : Shape{d.channels});
  const T* in = x.value().raw();
  for (std::size_t c = 0; c < d.batch * d.channels; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += in[c * plane + i];
    out[c] = static_cast<T>(s / static_cast<double>(plane));
  }
  auto pullback = [plane](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* gx = xn.grad_buffer().raw();
    const T inv = T{1} / static_cast<T>(plane);
    for (std::size_t c = 0; c < self.grad.size(); ++c) {
      const T g = self.grad[c] * inv;
      for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] += g;
    }
  };
  return make_result<T>(std::move(out), common_tape<T>({&x}), {x.node()}, pullback, "global_avg_pool");
}

template <typename T>
Var<T> select(const Var<T>& x, std::size_t index) {
  const Shape& s = x.shape();
  if (s.size() < 2 || index >= s[0]) {
    throw DimensionError("select: index " + std::to_string(index) + " out of range for " + to_string(s));
  }
  Shape inner(s.begin() + 1, s.end());
  const std::size_t sz = numel(inner);
  const T* src = x.value().raw() + index * sz;
  BasicTensor<T> out(inner, std::vector<T>(src, src + sz));
  auto pullback = [index, sz](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* gx = xn.grad_buffer().raw() + index * sz;
    for (std::size_t i = 0; i < sz; ++i) gx[i] += self.grad[i];
  };
  return make_result<T>(std::move(out), common_tape<T>({&x}), {x.node()}, pullback, "select");
}

template <typename T>
Var<T> correlate(const Var<T>& a, const Var<T>& b, T scale) {
  if (a.shape().size() != 3 || a.shape() != b.shape()) {
    throw DimensionError("correlate: expected matching [D,h,w] maps, got " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  if (!(scale > T{0})) throw ConfigError("correlate: scale must be positive");
  const std::size_t depth = a.shape()[0], h = a.shape()[1], w = a.shape()[2], positions = h * w;
  BasicTensor<T> out(Shape{positions, h, w});
  kernels::parallel::correlate(depth, positions, a.value().raw(), b.value().raw(), scale, out.raw());
  auto pullback = [depth, positions, scale](Node<T>& self) {
    Node<T>& an = *self.inputs[0];
    Node<T>& bn = *self.inputs[1];
    kernels::parallel::correlate_grad(depth, positions, an.value().raw(), bn.value().raw(), scale, self.grad.raw(),
                                      an.requires_grad ? an.grad_buffer().raw() : nullptr,
                                      bn.requires_grad ? bn.grad_buffer().raw() : nullptr);
  };
  return make_result<T>(std::move(out), common_tape<T>({&a, &b}), {a.node(), b.node()}, pullback, "correlate");
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat: empty input list");
  const Shape& first = parts[0].shape();
  if (first.empty()) throw DimensionError("concat: scalars cannot be concatenated");
  Shape out_shape = first;
  out_shape[0] = 0;
  Tape<T>* tape = nullptr;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw DimensionError("concat: shape " + to_string(s) + " incompatible with " + to_string(first));
    }
    out_shape[0] += s[0];
    inputs.push_back(p.node());
    sizes.push_back(p.value().size());
    if (Tape<T>* t = common_tape<T>({&p})) {
      if (tape && tape != t) throw ContractError("operands recorded on different tapes");
      tape = t;
    }
  }
  BasicTensor<T> out(out_shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.raw() + offset);
    offset += p.value().size();
  }
  auto pullback = [sizes](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node<T>& in = *self.inputs[k];
      if (in.requires_grad) {
        T* g = in.grad_buffer().raw();
        for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      }
      off += sizes[k];
    }
  };
  return make_result<T>(std::move(out), tape, std::move(inputs), pullback, "concat");
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  BasicTensor<T> out = x.value().reshaped(std::move(shape));
  auto pullback = [](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* g = xn.grad_buffer().raw();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  };
  return make_result<T>(std::move(out), common_tape<T>({&x}), {x.node()}, pullback, "reshape");
}

template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
  if (a.value().size() != b.value().size()) {
    throw DimensionError("mse_loss: length mismatch " + std::to_string(a.value().size()) + " vs " +
                         std::to_string(b.value().size()));
  }
  const std::size_t n = a.value().size();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(a.value()[i]) - b.value()[i];
    s += diff * diff;
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(s / static_cast<double>(n)));
  auto pullback = [n](Node<T>& self) {
    Node<T>& an = *self.inputs[0];
    Node<T>& bn = *self.inputs[1];
    const T k = self.grad[0] * T{2} / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T g = k * (an.value()[i] - bn.value()[i]);
      if (an.requires_grad) an.grad_buffer()[i] += g;
      if (bn.requires_grad) bn.grad_buffer()[i] -= g;
    }
  };
  return make_result<T>(std::move(out), common_tape<T>({&a, &b}), {a.node(), b.node()}, pullback, "mse_loss");
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double s = 0;
  for (T v : x.value().data()) s += v;
  auto pullback = [](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    for (auto& g : xn.grad_buffer().data()) g += self.grad[0];
  };
  return make_result<T>(BasicTensor<T>::scalar(static_cast<T>(s)), common_tape<T>({&x}), {x.node()}, pullback, "sum");
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const BasicTensor<T>& weights) {
  if (weights.size() != x.value().size()) {
    throw DimensionError("weighted_sum: weights " + to_string(weights.shape()) + " vs input " + to_string(x.shape()));
  }
  double s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += static_cast<double>(x.value()[i]) * weights[i];
  auto pullback = [weights](Node<T>& self) {
    Node<T>& xn = *self.inputs[0];
    if (!xn.requires_grad) return;
    T* g = xn.grad_buffer().raw();
    for (std::size_t i = 0; i < weights.size(); ++i) g[i] += self.grad[0] * weights[i];
  };
  return make_result<T>(BasicTensor<T>::scalar(static_cast<T>(s)), common_tape<T>({&x}), {x.node()}, pullback,
                        "weighted_sum");
}

#define RTHARE_INSTANTIATE(T)                                                                        \
  template class Tape<T>;                                                                            \
  template void require_finite<T>(const BasicTensor<T>&, const std::string&);                        \
  template Var<T> constant<T>(BasicTensor<T>);                                                       \
  template Var<T> borrow<T>(const BasicTensor<T>&);                                                  \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);  \
  template Var<T> group_norm<T>(const Var<T>&, std::size_t, const Var<T>&, const Var<T>&, T);        \
  template Var<T> relu<T>(const Var<T>&);                                                            \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                                 \
  template Var<T> select<T>(const Var<T>&, std::size_t);                                             \
  template Var<T> correlate<T>(const Var<T>&, const Var<T>&, T);                                     \
  template Var<T> concat<T>(std::span<const Var<T>>);                                                \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                  \
  template Var<T> mse_loss<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> sum<T>(const Var<T>&);                                                             \
  template Var<T> weighted_sum<T>(const Var<T>&, const BasicTensor<T>&);

RTHARE_INSTANTIATE(float)
RTHARE_INSTANTIATE(double)
#undef RTHARE_INSTANTIATE

}  // namespace rthare
