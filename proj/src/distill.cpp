#include "rthare/distill.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rthare/tensor_io.hpp"

namespace rthare {

void TrainConfig::validate() const {
  if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
  if (!(decay > 0 && decay <= 1)) throw ConfigError("decay must lie in (0, 1]");
  if (decay_points_per_epoch == 0) throw ConfigError("decay_points_per_epoch must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0 && max_iters == 0) throw ConfigError("epochs or max_iters must be positive");
  if (!(adamw.beta1 >= 0 && adamw.beta1 < 1) || !(adamw.beta2 >= 0 && adamw.beta2 < 1) || !(adamw.eps > 0) ||
      !(adamw.weight_decay >= 0)) {
    throw ConfigError("invalid AdamW hyper-parameters");
  }
}

double lr_at(std::size_t iter, std::size_t iters_per_epoch, const TrainConfig& cfg) {
  const std::size_t interval = std::max<std::size_t>(1, iters_per_epoch / cfg.decay_points_per_epoch);
  return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(iter / interval));
}

template <typename T>
double mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("mse_loss: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

template <typename T>
void AdamW<T>::step(const std::vector<Parameter<T>*>& params, const std::vector<BasicTensor<T>>& grads, double lr) {
  if (params.size() != grads.size()) throw ContractError("AdamW: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("AdamW: parameter list changed between steps");
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    T* p = params[k]->value.raw();
    const T* g = grads[k].raw();
    if (grads[k].size() != params[k]->value.size()) throw DimensionError("AdamW: gradient shape mismatch for " + params[k]->name);
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      double x = static_cast<double>(p[i]) * (1.0 - lr * cfg_.weight_decay);
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i];
      x -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      p[i] = static_cast<T>(x);
    }
  }
}

struct TeacherOracle::Network {
  IMFEConfig cfg;
  std::vector<ConvNormAct<float>> layers;

  Tensor forward(const Tensor& clip) const {
    const Shape expect{cfg.K, 3, cfg.H, cfg.W};
    if (clip.shape() != expect) {
      throw DimensionError("teacher: expected clip " + to_string(expect) + ", got " + to_string(clip.shape()));
    }
    const std::size_t frame = 3 * cfg.H * cfg.W;
    Tensor diffs(Shape{3 * (cfg.K - 1), cfg.H, cfg.W});
    for (std::size_t k = 0; k + 1 < cfg.K; ++k) {
      for (std::size_t i = 0; i < frame; ++i) diffs[k * frame + i] = std::abs(clip[(k + 1) * frame + i] - clip[k * frame + i]);
    }
    Context<float> ctx;
    Var<float> h = borrow(diffs);
    for (const auto& l : layers) h = l.forward(ctx, h, nullptr);
    return global_avg_pool(h).value();
  }
};

TeacherOracle TeacherOracle::frozen_network(const IMFEConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto net = std::make_shared<Network>();
  net->cfg = cfg;
  Initializer init(seed);
  const std::size_t D = cfg.D;
  net->layers.push_back(ConvNormAct<float>::make("teacher.0", 3 * (cfg.K - 1), D, 3, 2, init));
  net->layers.push_back(ConvNormAct<float>::make("teacher.1", D, 2 * D, 3, 2, init));
  net->layers.push_back(ConvNormAct<float>::make("teacher.2", 2 * D, 4 * D, 3, 2, init));
  net->layers.push_back(ConvNormAct<float>::make("teacher.3", 4 * D, cfg.feature_len, 3, 1, init));
  TeacherOracle t;
  t.mode_ = Mode::frozen_network;
  t.net_ = std::move(net);
  return t;
}

TeacherOracle TeacherOracle::file(std::map<std::string, Tensor> targets) {
  TeacherOracle t;
  t.mode_ = Mode::file;
  t.targets_ = std::make_shared<const std::map<std::string, Tensor>>(std::move(targets));
  return t;
}

Tensor TeacherOracle::target(const Tensor& clip, const std::string& id) const {
  if (mode_ == Mode::frozen_network) return net_->forward(clip);
  auto it = targets_->find(id);
  if (it == targets_->end()) throw IoError("teacher file has no target for clip '" + id + "'");
  return it->second;
}

std::vector<DistillSample> label_samples(const std::vector<std::pair<std::string, Tensor>>& clips,
                                         const TeacherOracle& teacher) {
  std::vector<DistillSample> out;
  out.reserve(clips.size());
  for (const auto& [id, clip] : clips) out.push_back({id, clip, teacher.target(clip, id)});
  return out;
}

template <typename T>
BatchGradient<T> batch_gradient(const IMFENetwork<T>& net, const std::vector<const DistillSample*>& batch) {
  if (batch.empty()) throw ContractError("batch_gradient: empty batch");
  const auto params = net.parameters();
  const std::size_t n = batch.size();
  std::vector<double> losses(n, 0.0);
  std::vector<std::vector<BasicTensor<T>>> per(n);
  std::vector<std::string> errors(n);

#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    try {
      Tape<T> tape;
      Context<T> ctx{&tape};
      const BasicTensor<T> clip = batch[i]->clip.template cast<T>();
      const BasicTensor<T> target = batch[i]->target.template cast<T>();
      Var<T> out = net.forward(ctx, borrow(clip));
      Var<T> loss = mse_loss(out, borrow(target));
      losses[i] = static_cast<double>(loss.value().item());
      tape.backward(loss);
      per[i].reserve(params.size());
      for (const auto* p : params) per[i].push_back(tape.grad(*p));
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw NumericError("clip '" + batch[i]->id + "': " + errors[i]);
  }

  BatchGradient<T> result;
  const T inv = T{1} / static_cast<T>(n);
  result.grads = std::move(per[0]);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      T* dst = result.grads[k].raw();
      const T* src = per[i][k].raw();
      for (std::size_t j = 0; j < result.grads[k].size(); ++j) dst[j] += src[j];
    }
  }
  for (auto& g : result.grads) {
    for (auto& v : g.data()) v *= inv;
  }
  for (double l : losses) result.loss += l;
  result.loss /= static_cast<double>(n);
  if (!std::isfinite(result.loss)) throw NumericError("non-finite batch loss");
  return result;
}

template <typename T>
double train_step(IMFENetwork<T>& net, AdamW<T>& opt, const std::vector<const DistillSample*>& batch, double lr) {
  BatchGradient<T> g = batch_gradient(net, batch);
  opt.step(net.parameters(), g.grads, lr);
  return g.loss;
}

template <typename T>
double validate(const IMFENetwork<T>& net, const std::vector<DistillSample>& samples) {
  if (samples.empty()) throw ContractError("validate: empty validation set");
  std::vector<double> losses(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const BasicTensor<T> clip = samples[i].clip.template cast<T>();
    losses[i] = mse_loss(extract_motion_feature(clip, net), samples[i].target.template cast<T>());
  }
  double s = 0;
  for (double l : losses) s += l;
  return s / static_cast<double>(samples.size());
}

std::string format_train_log(const std::vector<TrainLogRow>& log) {
  std::ostringstream out;
  out.precision(9);
  out << "iter,lr,train_loss,val_loss\n";
  for (const auto& r : log) {
    out << r.iter << ',' << r.lr << ',';
    if (r.train_loss) out << *r.train_loss;
    out << ',';
    if (r.val_loss) out << *r.val_loss;
    out << '\n';
  }
  return out.str();
}

template <typename T>
TrainResult train(IMFENetwork<T>& net, const std::vector<DistillSample>& train_set,
                  const std::vector<DistillSample>& val_set, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (val_set.empty()) throw ContractError("train: empty validation set");
  const std::size_t batch = std::min(cfg.batch_size, train_set.size());
  const std::size_t ipe = (train_set.size() + batch - 1) / batch;
  const std::size_t total = cfg.max_iters ? cfg.max_iters : cfg.epochs * ipe;
  const std::size_t val_every =
      cfg.val_every ? cfg.val_every : std::max<std::size_t>(1, ipe / cfg.decay_points_per_epoch);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  auto next_batch = [&] {
    std::vector<const DistillSample*> b;
    while (b.size() < batch) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        cursor = 0;
      }
      b.push_back(&train_set[order[cursor++]]);
    }
    return b;
  };

  AdamW<T> opt(cfg.adamw);
  TrainResult result;
  std::vector<BasicTensor<T>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto* p : net.parameters()) best.push_back(p->value);
  };

  result.initial_val = validate(net, val_set);
  result.best_val = result.initial_val;
  snapshot();
  double last_val = result.initial_val;
  for (std::size_t it = 0; it < total; ++it) {
    TrainLogRow row;
    row.iter = it;
    row.lr = lr_at(it, ipe, cfg);
    if (it == 0) {
      row.val_loss = last_val;
    } else if (it % val_every == 0) {
      last_val = validate(net, val_set);
      row.val_loss = last_val;
      if (last_val < result.best_val) {
        result.best_val = last_val;
        result.best_iter = it;
        snapshot();
      }
    }
    row.train_loss = train_step(net, opt, next_batch(), row.lr);
    result.log.push_back(row);
  }
  result.iterations = total;
  result.final_val = validate(net, val_set);
  result.log.push_back({total, lr_at(total, ipe, cfg), std::nullopt, result.final_val});
  if (result.final_val < result.best_val) {
    result.best_val = result.final_val;
    result.best_iter = total;
    snapshot();
  }

  if (out_dir) {
    write_text_atomic(*out_dir / "train_log.csv", format_train_log(result.log));
    save_checkpoint(net, *out_dir / "final", cfg.seed);
    auto best_net = IMFENetwork<T>::uninitialized(net.config());
    auto dst = best_net.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = best[i];
    save_checkpoint(best_net, *out_dir / "best", cfg.seed);
  }
  return result;
}

#define RTHARE_INSTANTIATE(T)                                                                                   \
  template double mse_loss<T>(const BasicTensor<T>&, const BasicTensor<T>&);                                    \
  template class AdamW<T>;                                                                                      \
  template BatchGradient<T> batch_gradient<T>(const IMFENetwork<T>&, const std::vector<const DistillSample*>&); \
  template double train_step<T>(IMFENetwork<T>&, AdamW<T>&, const std::vector<const DistillSample*>&, double);  \
  template double validate<T>(const IMFENetwork<T>&, const std::vector<DistillSample>&);                        \
  template TrainResult train<T>(IMFENetwork<T>&, const std::vector<DistillSample>&,                             \
                                const std::vector<DistillSample>&, const TrainConfig&,                          \
                                const std::optional<std::filesystem::path>&);

RTHARE_INSTANTIATE(float)
RTHARE_INSTANTIATE(double)
#undef RTHARE_INSTANTIATE

}  // namespace rthare
