#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rthare/tensor.hpp"

namespace rthare {

// Portable seeded generator: mt19937_64 bits with fixed uniform/normal transforms, so
// draws do not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next() { return engine_(); }
  double uniform();  // [0,1)
  double normal();   // standard normal

 private:
  std::mt19937_64 engine_;
};

struct StageLatencyModel {
  enum class Kind { constant, gaussian, motion_affine };
  Kind kind = Kind::constant;
  double mean_ms = 0;  // constant / gaussian
  double std_ms = 0;   // gaussian std, or noise std for motion_affine
  double floor_ms = 0;
  double a = 0, b = 0, p = 1;  // motion_affine: a + b * motion^p + noise

  static StageLatencyModel constant(double ms);
  static StageLatencyModel gaussian(double mean, double std, double floor = 0);
  static StageLatencyModel motion_affine(double a, double b, double noise_std, double floor = 0, double p = 1);

  void validate() const;
};

// K * 1000 / fps
double deadline_ms(std::size_t K, double fps);

double sample_latency(const StageLatencyModel& model, double motion, Rng& rng);

using MotionTrace = std::vector<double>;

// mean absolute inter-frame pixel difference of a raw [K,3,H,W] clip
double motion_intensity(const Tensor& clip);

// Seeded stand-in trace: uniform motion in [lo, hi].
MotionTrace uniform_motion_trace(std::size_t n, std::uint64_t seed, double lo = 2.0, double hi = 20.0);

// Motion-affine model (p = 1) whose floor-truncated latency over the trace has the target
// mean and std. Throws ConfigError when the targets cannot be met above the floor.
StageLatencyModel fit_tvl1_model(double mean_ms, double std_ms, double floor_ms, const MotionTrace& trace);

// analytic mean/std of the model's truncated latency over the trace's empirical distribution
std::pair<double, double> model_moments(const StageLatencyModel& model, const MotionTrace& trace);

enum class TimingRole { motion, rgb, recog, post, other };

struct SimStage {
  std::string name;
  TimingRole role = TimingRole::other;
  StageLatencyModel model;
  // when set, the model is fitted to these (mean, std, floor) against the run's trace
  std::optional<std::array<double, 3>> fit;
};

enum class BacklogPolicy { queue, isolated };

struct SimPlan {
  std::string name;
  std::vector<SimStage> stages;
  std::vector<std::vector<std::string>> parallel_groups;
  double overhead_ms = 4.0;
  double fps = 30.0;
  std::size_t K = 6;
  std::size_t jobs = 100000;
  std::uint64_t seed = 0;
  BacklogPolicy backlog = BacklogPolicy::queue;

  double deadline_ms() const;
  void validate() const;
};

struct JobTiming {
  std::size_t clip_index = 0;  // 1-based
  double arrival_ms = 0, start_ms = 0;
  double motion_ms = 0, rgb_ms = 0, recog_ms = 0, post_ms = 0;
  double end_ms = 0, deadline_ms = 0;
  bool missed = false;

  double latency_ms() const { return end_ms - start_ms; }
  double response_ms() const { return end_ms - arrival_ms; }
};

using TimingLog = std::vector<JobTiming>;

// Deterministic discrete-event run of plan.jobs clip jobs. The trace is cycled. An empty trace
// means zero motion, except that plans with fitted stages then draw a seeded uniform trace.
TimingLog simulate(const SimPlan& plan, const MotionTrace& trace = {});

// fraction of jobs whose end - arrival exceeds deadline_ms (strict)
double miss_ratio(const TimingLog& log, double deadline_ms);

struct LatencySummary {
  std::size_t jobs = 0;
  double mean_ms = 0, std_ms = 0;  // service latency (end - start)
  double mean_response_ms = 0;     // end - arrival
  double min_ms = 0, max_ms = 0;
};
LatencySummary summarize(const TimingLog& log);

std::string format_timing_csv(const TimingLog& log);
TimingLog parse_timing_csv(const std::string& text);

TimingRole role_from_name(const std::string& stage_name);
SimPlan plan_from_json(const std::string& text);
std::string plan_to_json(const SimPlan& plan);

// Named plans from a JSON-with-comments preset file.
std::map<std::string, SimPlan> load_presets(const std::filesystem::path& path);
std::filesystem::path default_preset_path();
SimPlan find_preset(const std::string& name);

MotionTrace load_motion_trace(const std::filesystem::path& path);

}  // namespace rthare
