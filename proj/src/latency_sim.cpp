#include "rthare/latency_sim.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "rthare/tensor_io.hpp"

namespace rthare {

using json = nlohmann::json;

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // Box-Muller, one value per call
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

StageLatencyModel StageLatencyModel::constant(double ms) {
  StageLatencyModel m;
  m.kind = Kind::constant;
  m.mean_ms = ms;
  return m;
}

StageLatencyModel StageLatencyModel::gaussian(double mean, double std, double floor) {
  StageLatencyModel m;
  m.kind = Kind::gaussian;
  m.mean_ms = mean;
  m.std_ms = std;
  m.floor_ms = floor;
  return m;
}

StageLatencyModel StageLatencyModel::motion_affine(double a, double b, double noise_std, double floor, double p) {
  StageLatencyModel m;
  m.kind = Kind::motion_affine;
  m.a = a;
  m.b = b;
  m.p = p;
  m.std_ms = noise_std;
  m.floor_ms = floor;
  m.mean_ms = a;
  return m;
}

void StageLatencyModel::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(mean_ms) || !finite(std_ms) || !finite(floor_ms) || !finite(a) || !finite(b) || !finite(p)) {
    throw ConfigError("latency model parameters must be finite");
  }
  if (std_ms < 0) throw ConfigError("latency model std must be >= 0");
  if (floor_ms < 0) throw ConfigError("latency model floor must be >= 0");
  switch (kind) {
    case Kind::constant:
      if (mean_ms < floor_ms) throw ConfigError("constant latency below its floor");
      break;
    case Kind::gaussian:
      if (mean_ms < 0) throw ConfigError("gaussian latency mean must be >= 0");
      break;
    case Kind::motion_affine:
      if (p <= 0) throw ConfigError("motion exponent p must be positive");
      break;
  }
}

double deadline_ms(std::size_t K, double fps) {
  if (K == 0) throw ConfigError("clip length K must be >= 1");
  if (!(fps > 0) || !std::isfinite(fps)) throw ConfigError("fps must be positive");
  return 1000.0 * static_cast<double>(K) / fps;
}

namespace {

// standard normal truncated to [lo, inf)
double truncated_normal(double lo, Rng& rng) {
  if (lo <= 0.5) {
    for (;;) {
      const double z = rng.normal();
      if (z >= lo) return z;
    }
  }
  // exponential proposal (Robert 1995)
  const double rate = (lo + std::sqrt(lo * lo + 4.0)) / 2.0;
  for (;;) {
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    const double z = lo - std::log(u) / rate;
    if (rng.uniform() <= std::exp(-(z - rate) * (z - rate) / 2.0)) return z;
  }
}

double center_of(const StageLatencyModel& m, double motion) {
  switch (m.kind) {
    case StageLatencyModel::Kind::constant:
    case StageLatencyModel::Kind::gaussian:
      return m.mean_ms;
    case StageLatencyModel::Kind::motion_affine:
      return m.a + m.b * std::pow(motion, m.p);
  }
  return m.mean_ms;
}

// inverse Mills ratio phi(x) / (1 - Phi(x))
double mills(double x) {
  if (x > 30.0) return x + 1.0 / x - 2.0 / (x * x * x);
  const double tail = 0.5 * std::erfc(x / std::numbers::sqrt2);
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi) / tail;
}

// mean and variance of N(mu, sigma) truncated below at lo
std::pair<double, double> truncated_moments(double mu, double sigma, double lo) {
  if (sigma <= 0) return {std::max(mu, lo), 0.0};
  const double alpha = (lo - mu) / sigma;
  if (alpha < -40.0) return {mu, sigma * sigma};
  const double lam = mills(alpha);
  const double mean = mu + sigma * lam;
  const double var = sigma * sigma * std::max(0.0, 1.0 + alpha * lam - lam * lam);
  return {mean, var};
}

}  // namespace

double sample_latency(const StageLatencyModel& model, double motion, Rng& rng) {
  if (!(motion >= 0)) throw ConfigError("motion intensity must be >= 0");
  if (model.kind == StageLatencyModel::Kind::constant) return model.mean_ms;
  const double mu = center_of(model, motion);
  if (model.std_ms == 0) return std::max(mu, model.floor_ms);
  return mu + model.std_ms * truncated_normal((model.floor_ms - mu) / model.std_ms, rng);
}

double motion_intensity(const Tensor& clip) {
  if (clip.rank() != 4 || clip.dim(0) < 2) {
    throw DimensionError("motion_intensity expects [K>=2,C,H,W], got " + to_string(clip.shape()));
  }
  const std::size_t frame = clip.size() / clip.dim(0);
  double s = 0;
  for (std::size_t k = 1; k < clip.dim(0); ++k) {
    for (std::size_t i = 0; i < frame; ++i) s += std::abs(static_cast<double>(clip[k * frame + i]) - clip[(k - 1) * frame + i]);
  }
  return s / static_cast<double>(frame * (clip.dim(0) - 1));
}

MotionTrace uniform_motion_trace(std::size_t n, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  MotionTrace t(n);
  for (auto& v : t) v = lo + (hi - lo) * rng.uniform();
  return t;
}

std::pair<double, double> model_moments(const StageLatencyModel& model, const MotionTrace& trace) {
  if (model.kind == StageLatencyModel::Kind::constant) return {model.mean_ms, 0.0};
  const MotionTrace zero{0.0};
  const MotionTrace& t = trace.empty() ? zero : trace;
  double m1 = 0, m2 = 0;
  for (double motion : t) {
    auto [mean, var] = truncated_moments(center_of(model, motion), model.std_ms, model.floor_ms);
    m1 += mean;
    m2 += var + mean * mean;
  }
  m1 /= static_cast<double>(t.size());
  m2 /= static_cast<double>(t.size());
  return {m1, std::sqrt(std::max(0.0, m2 - m1 * m1))};
}

StageLatencyModel fit_tvl1_model(double mean_ms, double std_ms, double floor_ms, const MotionTrace& trace) {
  if (trace.empty()) throw ConfigError("fit_tvl1_model: empty motion trace");
  if (!(std_ms >= 0) || !(floor_ms >= 0) || !std::isfinite(mean_ms)) throw ConfigError("fit_tvl1_model: invalid targets");
  if (mean_ms < floor_ms) throw ConfigError("fit_tvl1_model: target mean below floor");
  for (double m : trace) {
    if (!(m >= 0)) throw ConfigError("fit_tvl1_model: motion trace values must be >= 0");
  }
  if (std_ms == 0) return StageLatencyModel::motion_affine(mean_ms, 0.0, 0.0, floor_ms);

  double tm = 0, tv = 0;
  for (double m : trace) tm += m;
  tm /= static_cast<double>(trace.size());
  for (double m : trace) tv += (m - tm) * (m - tm);
  const bool spread = tv > 0;

  // A quarter of the spread is motion-independent noise and the slope b carries the rest.
  // Without motion variation the noise alone is fitted. Mean rises with a, std with the
  // outer variable, so both are found by bisection.
  const double fixed_noise = 0.25 * std_ms;
  auto make = [&](double a, double x) {
    return spread ? StageLatencyModel::motion_affine(a, x, fixed_noise, floor_ms)
                  : StageLatencyModel::motion_affine(a, 0.0, x, floor_ms);
  };
  auto fit_mean = [&](double x) {
    const double hi = mean_ms;
    double lo = mean_ms - std::max(1.0, std_ms);
    for (int i = 0; i < 200 && model_moments(make(lo, x), trace).first > mean_ms; ++i) lo -= 2 * (hi - lo);
    double l = lo, h = hi;
    for (int i = 0; i < 64; ++i) {
      const double mid = 0.5 * (l + h);
      (model_moments(make(mid, x), trace).first < mean_ms ? l : h) = mid;
    }
    return 0.5 * (l + h);
  };
  auto std_at = [&](double x) { return model_moments(make(fit_mean(x), x), trace).second; };

  double xl = spread ? 0.0 : 1e-9 * std_ms, xh = spread ? std_ms / std::sqrt(tv / trace.size()) : std_ms;
  for (int i = 0; i < 60 && std_at(xh) < std_ms; ++i) xh *= 2;
  for (int i = 0; i < 56; ++i) {
    const double mid = 0.5 * (xl + xh);
    (std_at(mid) < std_ms ? xl : xh) = mid;
  }
  const double x = 0.5 * (xl + xh);
  const auto model = make(fit_mean(x), x);
  const auto [m, s] = model_moments(model, trace);
  if (std::abs(m - mean_ms) <= 1e-6 * mean_ms && std::abs(s - std_ms) <= 1e-6 * std_ms) return model;
  throw ConfigError("fit_tvl1_model: mean " + std::to_string(mean_ms) + " / std " + std::to_string(std_ms) +
                    " not reachable above floor " + std::to_string(floor_ms));
}

double SimPlan::deadline_ms() const { return rthare::deadline_ms(K, fps); }

void SimPlan::validate() const {
  if (stages.empty()) throw ConfigError("plan '" + name + "' has no stages");
  if (!(overhead_ms >= 0)) throw ConfigError("overhead_ms must be >= 0");
  rthare::deadline_ms(K, fps);
  if (jobs == 0) throw ConfigError("plan must cover at least one clip");
  std::map<std::string, int> seen;
  for (const auto& s : stages) {
    if (seen.count(s.name)) throw ConfigError("duplicate stage name '" + s.name + "'");
    seen[s.name] = 0;
    if (!s.fit) s.model.validate();
  }
  for (const auto& g : parallel_groups) {
    if (g.empty()) throw ConfigError("empty parallel group");
    for (const auto& n : g) {
      auto it = seen.find(n);
      if (it == seen.end()) throw ConfigError("parallel group names unknown stage '" + n + "'");
      if (it->second++) throw ConfigError("stage '" + n + "' appears in more than one parallel group");
    }
  }
}

TimingLog simulate(const SimPlan& plan, const MotionTrace& trace) {
  plan.validate();
  bool needs_fit = false;
  for (const auto& s : plan.stages) needs_fit |= s.fit.has_value();
  const MotionTrace motion = (trace.empty() && needs_fit) ? uniform_motion_trace(4096, plan.seed ^ 0x9e3779b97f4a7c15ULL) : trace;

  std::vector<StageLatencyModel> models;
  for (const auto& s : plan.stages) {
    models.push_back(s.fit ? fit_tvl1_model((*s.fit)[0], (*s.fit)[1], (*s.fit)[2], motion) : s.model);
  }
  std::vector<int> group(plan.stages.size(), -1);
  for (std::size_t g = 0; g < plan.parallel_groups.size(); ++g) {
    for (const auto& n : plan.parallel_groups[g]) {
      for (std::size_t i = 0; i < plan.stages.size(); ++i) {
        if (plan.stages[i].name == n) group[i] = static_cast<int>(g);
      }
    }
  }

  Rng rng(plan.seed);
  const double period = 1000.0 / plan.fps;
  const double deadline = plan.deadline_ms();
  TimingLog log;
  log.reserve(plan.jobs);
  double prev_end = 0;
  std::vector<double> lat(plan.stages.size());
  std::vector<double> group_max(plan.parallel_groups.size());
  for (std::size_t j = 0; j < plan.jobs; ++j) {
    JobTiming job;
    job.clip_index = j + 1;
    job.arrival_ms = static_cast<double>((j + 1) * plan.K - 1) * period;
    const double m = motion.empty() ? 0.0 : motion[j % motion.size()];
    std::fill(group_max.begin(), group_max.end(), 0.0);
    double total = plan.overhead_ms;
    for (std::size_t i = 0; i < plan.stages.size(); ++i) {
      lat[i] = sample_latency(models[i], m, rng);
      if (group[i] < 0) {
        total += lat[i];
      } else {
        group_max[group[i]] = std::max(group_max[group[i]], lat[i]);
      }
      switch (plan.stages[i].role) {
        case TimingRole::motion: job.motion_ms += lat[i]; break;
        case TimingRole::rgb: job.rgb_ms += lat[i]; break;
        case TimingRole::recog: job.recog_ms += lat[i]; break;
        case TimingRole::post: job.post_ms += lat[i]; break;
        case TimingRole::other: break;
      }
    }
    for (double g : group_max) total += g;
    job.post_ms += plan.overhead_ms;
    job.start_ms = plan.backlog == BacklogPolicy::queue ? std::max(job.arrival_ms, prev_end) : job.arrival_ms;
    job.end_ms = job.start_ms + total;
    job.deadline_ms = deadline;
    job.missed = job.response_ms() > deadline;
    prev_end = job.end_ms;
    log.push_back(job);
  }
  return log;
}

double miss_ratio(const TimingLog& log, double deadline) {
  if (log.empty()) throw ContractError("miss_ratio: empty timing log");
  std::size_t missed = 0;
  for (const auto& j : log) missed += j.response_ms() > deadline;
  return static_cast<double>(missed) / static_cast<double>(log.size());
}

LatencySummary summarize(const TimingLog& log) {
  if (log.empty()) throw ContractError("summarize: empty timing log");
  LatencySummary s;
  s.jobs = log.size();
  s.min_ms = log[0].latency_ms();
  s.max_ms = s.min_ms;
  double sum = 0, resp = 0;
  for (const auto& j : log) {
    sum += j.latency_ms();
    resp += j.response_ms();
    s.min_ms = std::min(s.min_ms, j.latency_ms());
    s.max_ms = std::max(s.max_ms, j.latency_ms());
  }
  s.mean_ms = sum / static_cast<double>(log.size());
  s.mean_response_ms = resp / static_cast<double>(log.size());
  double var = 0;
  for (const auto& j : log) var += (j.latency_ms() - s.mean_ms) * (j.latency_ms() - s.mean_ms);
  s.std_ms = std::sqrt(var / static_cast<double>(log.size()));
  return s;
}

static const char* kTimingHeader = "clip_index,arrival_ms,start_ms,motion_ms,rgb_ms,recog_ms,post_ms,end_ms,deadline_ms,missed";

std::string format_timing_csv(const TimingLog& log) {
  std::string out = std::string(kTimingHeader) + "\n";
  char buf[320];
  for (const auto& j : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%d\n", j.clip_index, j.arrival_ms,
                  j.start_ms, j.motion_ms, j.rgb_ms, j.recog_ms, j.post_ms, j.end_ms, j.deadline_ms, j.missed ? 1 : 0);
    out += buf;
  }
  return out;
}

TimingLog parse_timing_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind(kTimingHeader, 0) != 0) {
    throw ParseError("timing log: line 1: expected header '" + std::string(kTimingHeader) + "'");
  }
  TimingLog log;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    JobTiming j;
    int missed = 0;
    const int n = std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%d", &j.clip_index, &j.arrival_ms,
                              &j.start_ms, &j.motion_ms, &j.rgb_ms, &j.recog_ms, &j.post_ms, &j.end_ms, &j.deadline_ms,
                              &missed);
    if (n != 10 || (missed != 0 && missed != 1)) throw ParseError("timing log: line " + std::to_string(lineno) + ": malformed row");
    j.missed = missed == 1;
    log.push_back(j);
  }
  return log;
}

TimingRole role_from_name(const std::string& n) {
  if (n == "imfe" || n == "raft" || n == "tvl1" || n == "flow" || n == "motion") return TimingRole::motion;
  if (n == "rgb") return TimingRole::rgb;
  if (n == "recog" || n == "lstr") return TimingRole::recog;
  if (n == "post") return TimingRole::post;
  return TimingRole::other;
}

namespace {

const char* role_name(TimingRole r) {
  switch (r) {
    case TimingRole::motion: return "motion";
    case TimingRole::rgb: return "rgb";
    case TimingRole::recog: return "recog";
    case TimingRole::post: return "post";
    case TimingRole::other: return "other";
  }
  return "other";
}

TimingRole parse_role(const std::string& s) {
  for (TimingRole r : {TimingRole::motion, TimingRole::rgb, TimingRole::recog, TimingRole::post, TimingRole::other}) {
    if (s == role_name(r)) return r;
  }
  throw ConfigError("unknown stage role '" + s + "'");
}

SimPlan plan_from_value(const json& j, const std::string& fallback_name) {
  if (!j.is_object()) throw ConfigError("plan must be a JSON object");
  SimPlan p;
  try {
    p.name = j.value("name", fallback_name);
    p.fps = j.value("fps", p.fps);
    p.K = j.value("K", p.K);
    p.overhead_ms = j.value("overhead_ms", p.overhead_ms);
    p.seed = j.value("seed", p.seed);
    if (j.contains("duration_s")) {
      const double d = j.at("duration_s").get<double>();
      p.jobs = static_cast<std::size_t>(std::floor(d * p.fps / static_cast<double>(p.K)));
    }
    p.jobs = j.value("jobs", p.jobs);
    const std::string backlog = j.value("backlog", std::string("queue"));
    if (backlog == "queue") {
      p.backlog = BacklogPolicy::queue;
    } else if (backlog == "isolated") {
      p.backlog = BacklogPolicy::isolated;
    } else {
      throw ConfigError("unknown backlog policy '" + backlog + "'");
    }
    for (const auto& s : j.at("stages")) {
      SimStage st;
      st.name = s.at("name").get<std::string>();
      st.role = s.contains("role") ? parse_role(s.at("role").get<std::string>()) : role_from_name(st.name);
      const std::string kind = s.at("kind").get<std::string>();
      const double floor = s.value("floor_ms", 0.0);
      if (kind == "constant") {
        st.model = StageLatencyModel::constant(s.at("mean_ms").get<double>());
        st.model.floor_ms = floor;
      } else if (kind == "gaussian") {
        st.model = StageLatencyModel::gaussian(s.at("mean_ms").get<double>(), s.at("std_ms").get<double>(), floor);
      } else if (kind == "motion_affine") {
        st.model = StageLatencyModel::motion_affine(s.at("a").get<double>(), s.at("b").get<double>(),
                                                    s.value("std_ms", 0.0), floor, s.value("p", 1.0));
      } else if (kind == "tvl1_fit") {
        st.fit = std::array<double, 3>{s.at("mean_ms").get<double>(), s.at("std_ms").get<double>(), floor};
      } else {
        throw ConfigError("stage '" + st.name + "': unknown kind '" + kind + "'");
      }
      p.stages.push_back(st);
    }
    if (j.contains("parallel_groups")) p.parallel_groups = j.at("parallel_groups").get<std::vector<std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw ConfigError("plan '" + p.name + "': " + e.what());
  }
  p.validate();
  return p;
}

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": " + e.what());
  }
}

}  // namespace

SimPlan plan_from_json(const std::string& text) { return plan_from_value(parse_json_text(text, "plan"), "plan"); }

std::string plan_to_json(const SimPlan& p) {
  json stages = json::array();
  for (const auto& s : p.stages) {
    json js = {{"name", s.name}, {"role", role_name(s.role)}};
    if (s.fit) {
      js["kind"] = "tvl1_fit";
      js["mean_ms"] = (*s.fit)[0];
      js["std_ms"] = (*s.fit)[1];
      js["floor_ms"] = (*s.fit)[2];
    } else {
      switch (s.model.kind) {
        case StageLatencyModel::Kind::constant:
          js["kind"] = "constant";
          js["mean_ms"] = s.model.mean_ms;
          break;
        case StageLatencyModel::Kind::gaussian:
          js["kind"] = "gaussian";
          js["mean_ms"] = s.model.mean_ms;
          js["std_ms"] = s.model.std_ms;
          break;
        case StageLatencyModel::Kind::motion_affine:
          js["kind"] = "motion_affine";
          js["a"] = s.model.a;
          js["b"] = s.model.b;
          js["p"] = s.model.p;
          js["std_ms"] = s.model.std_ms;
          break;
      }
      js["floor_ms"] = s.model.floor_ms;
    }
    stages.push_back(js);
  }
  json j = {{"name", p.name},
            {"fps", p.fps},
            {"K", p.K},
            {"jobs", p.jobs},
            {"seed", p.seed},
            {"overhead_ms", p.overhead_ms},
            {"backlog", p.backlog == BacklogPolicy::queue ? "queue" : "isolated"},
            {"stages", stages},
            {"parallel_groups", p.parallel_groups}};
  return j.dump(2);
}

std::map<std::string, SimPlan> load_presets(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("preset file not found: " + path.string());
  const json j = parse_json_text(read_text_file(path), path.string());
  if (!j.contains("presets") || !j.at("presets").is_object()) throw ConfigError(path.string() + ": missing 'presets' object");
  std::map<std::string, SimPlan> out;
  for (const auto& [name, value] : j.at("presets").items()) {
    SimPlan p = plan_from_value(value, name);
    p.name = name;
    out.emplace(name, std::move(p));
  }
  return out;
}

std::filesystem::path default_preset_path() {
  if (const char* env = std::getenv("RTHARE_PRESETS"); env && *env) return env;
#ifdef RTHARE_PRESET_DIR
  return std::filesystem::path(RTHARE_PRESET_DIR) / "latency_presets.jsonc";
#else
  return "presets/latency_presets.jsonc";
#endif
}

SimPlan find_preset(const std::string& name) {
  const auto presets = load_presets(default_preset_path());
  auto it = presets.find(name);
  if (it == presets.end()) {
    std::string known;
    for (const auto& [n, p] : presets) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

MotionTrace load_motion_trace(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("motion trace not found: " + path.string());
  std::istringstream in(read_text_file(path));
  std::string line;
  MotionTrace t;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comma = line.find(',');
    std::string cell = line.substr(0, comma);
    if (cell.find_first_not_of(" \t\r") == std::string::npos) continue;
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str()) {
      if (lineno == 1) continue;  // header
      throw ParseError(path.string() + ": line " + std::to_string(lineno) + ": not a number");
    }
    if (!(v >= 0) || !std::isfinite(v)) {
      throw ParseError(path.string() + ": line " + std::to_string(lineno) + ": motion must be finite and >= 0");
    }
    t.push_back(v);
  }
  if (t.empty()) throw ParseError(path.string() + ": empty motion trace");
  return t;
}

}  // namespace rthare
