#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rthare/imfe.hpp"

namespace rthare {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct TrainConfig {
  double lr0 = 1e-3;
  double decay = 0.9;
  std::size_t decay_points_per_epoch = 5;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  // stop after this many updates when nonzero
  std::size_t max_iters = 0;
  // validation cadence in updates; 0 = at every decay point
  std::size_t val_every = 0;
  std::uint64_t seed = 0;
  AdamWConfig adamw;

  void validate() const;
};

// lr0 * decay^(completed decay intervals); an interval is iters_per_epoch / decay_points_per_epoch updates
double lr_at(std::size_t iter, std::size_t iters_per_epoch, const TrainConfig& cfg);

template <typename T>
double mse_loss(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Decoupled weight decay Adam over a fixed parameter list.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Parameter<T>*>& params, const std::vector<BasicTensor<T>>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Fixed target feature function standing in for the optical-flow teacher.
class TeacherOracle {
 public:
  enum class Mode { frozen_network, file };

  // reference network over absolute differences of consecutive frames
  static TeacherOracle frozen_network(const IMFEConfig& cfg, std::uint64_t seed);
  // precomputed targets keyed by clip id
  static TeacherOracle file(std::map<std::string, Tensor> targets);

  Mode mode() const { return mode_; }
  // clip: normalized [K,3,H,W]
  Tensor target(const Tensor& clip, const std::string& id = {}) const;

 private:
  struct Network;
  Mode mode_ = Mode::frozen_network;
  std::shared_ptr<const Network> net_;
  std::shared_ptr<const std::map<std::string, Tensor>> targets_;
};

struct DistillSample {
  std::string id;
  Tensor clip;    // normalized [K,3,H,W]
  Tensor target;  // [feature_len]
};

std::vector<DistillSample> label_samples(const std::vector<std::pair<std::string, Tensor>>& clips,
                                         const TeacherOracle& teacher);

template <typename T>
struct BatchGradient {
  double loss = 0;
  std::vector<BasicTensor<T>> grads;  // aligned with net.parameters()
};

// Mean per-clip MSE over the batch and its gradient. Clips run on separate tapes in
// parallel; gradients are summed in batch order.
template <typename T>
BatchGradient<T> batch_gradient(const IMFENetwork<T>& net, const std::vector<const DistillSample*>& batch);

template <typename T>
double train_step(IMFENetwork<T>& net, AdamW<T>& opt, const std::vector<const DistillSample*>& batch, double lr);

template <typename T>
double validate(const IMFENetwork<T>& net, const std::vector<DistillSample>& samples);

struct TrainLogRow {
  std::size_t iter = 0;
  double lr = 0;
  std::optional<double> train_loss;
  std::optional<double> val_loss;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  double initial_val = 0;
  double final_val = 0;
  double best_val = 0;
  std::size_t best_iter = 0;
  std::size_t iterations = 0;
};

std::string format_train_log(const std::vector<TrainLogRow>& log);

// Trains in place. When out_dir is set, writes train_log.csv plus best/ and final/ checkpoints.
template <typename T>
TrainResult train(IMFENetwork<T>& net, const std::vector<DistillSample>& train_set,
                  const std::vector<DistillSample>& val_set, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace rthare
