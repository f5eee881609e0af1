// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "oracles/metrics_oracle.hpp"
#include "rthare/distill.hpp"
#include "rthare/imfe.hpp"
#include "rthare/latency_sim.hpp"
#include "rthare/metrics.hpp"
#include "rthare/postproc.hpp"
#include "rthare/stream_pipeline.hpp"
#include "rthare/synthetic.hpp"
#include "rthare/tensor_io.hpp"

using namespace rthare;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::path(RTHARE_TEST_TMP) / "acceptance" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---- 1 ----
Outcome shape_fidelity() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = IMFEConfig::full();
  IMFENetwork<float> net(c, 1);
  const Tensor clip = normalize_pixels(synthetic_clip(c.K, c.H, c.W, 1));
  ForwardTrace trace;
  const Tensor out = net.forward(Context<float>{}, borrow(clip), &trace).value();
  const double secs = seconds_since(t0);
  auto shape = [&](const std::string& stage) {
    const auto* r = trace.find(stage);
    return r ? r->shape : Shape{};
  };
  o.require(clip.shape() == Shape{6, 3, 256, 344}, "input [6,3,256,344]");
  o.require(shape("encoder") == Shape{6, 256, 32, 43}, "encoder [6,256,32,43], got " + to_string(shape("encoder")));
  std::size_t volumes = 0;
  for (std::size_t k = 0; k < 5; ++k) volumes += shape("corr." + std::to_string(k)) == Shape{1376, 32, 43};
  o.require(volumes == 5, "5 correlation volumes [1376,32,43]");
  o.require(shape("concat") == Shape{6880, 32, 43}, "concat [6880,32,43], got " + to_string(shape("concat")));
  o.require(out.shape() == Shape{2048}, "output [2048], got " + to_string(out.shape()));
  o.require(secs < 60, "runtime < 60 s");
  o.note("encoder " + to_string(shape("encoder")) + ", corr " + to_string(shape("corr.0")) + " x" +
         std::to_string(volumes) + ", concat " + to_string(shape("concat")) + ", out " + to_string(out.shape()) +
         ", " + fmt("%.1f s", secs));
  return o;
}

// ---- 2 ----
// Relative error |a - n| / max(|a|, |n|, 1e-4): below 1e-4 the check is absolute.
// Coordinates where any relu flips inside the stencil are skipped.
Outcome gradient_check() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = IMFEConfig::tiny();
  double worst = 0;
  std::size_t checked = 0, skipped = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    IMFENetwork<double> net(c, seed);
    std::mt19937_64 rng(seed * 7919);
    std::uniform_real_distribution<double> u(-1, 1);
    const TensorD clip = normalize_pixels(synthetic_clip(c.K, c.H, c.W, seed)).cast<double>();
    TensorD target(Shape{c.feature_len});
    for (auto& v : target.data()) v = u(rng);

    Tape<double> tape;
    const Var<double> loss = mse_loss(net.forward(Context<double>{&tape}, borrow(clip)), borrow(target));
    tape.backward(loss);

    auto eval = [&](std::uint64_t* sig) {
      ForwardTrace tr;
      const double l = mse_loss(net.forward(Context<double>{}, borrow(clip), &tr), borrow(target)).value().item();
      *sig = tr.relu_signature;
      return l;
    };
    std::uint64_t base_sig;
    eval(&base_sig);

    auto params = net.parameters();
    for (auto* p : params) {
      const TensorD grad = tape.grad(*p);
      for (int draw = 0; draw < 2; ++draw) {
        const std::size_t i = rng() % p->value.size();
        const double x0 = p->value[i];
        const double h = 1e-3 * std::max(1.0, std::abs(x0));
        // five-point stencil
        double f[4];
        bool kink = false;
        const double offsets[4] = {-2, -1, 1, 2};
        for (int j = 0; j < 4; ++j) {
          std::uint64_t sig;
          p->value[i] = x0 + offsets[j] * h;
          f[j] = eval(&sig);
          kink |= sig != base_sig;
        }
        p->value[i] = x0;
        if (kink) {
          ++skipped;  // a relu changed side inside the stencil
          continue;
        }
        const double num = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h), ana = grad[i];
        const double scale = std::max({std::abs(num), std::abs(ana), 1e-4});
        worst = std::max(worst, std::abs(num - ana) / scale);
        ++checked;
      }
    }
  }
  const double secs = seconds_since(t0);
  o.require(worst < 1e-6, "max relative error < 1e-6");
  o.require(checked >= 20 * 40, "enough coordinates checked");
  o.require(secs < 300, "runtime < 5 min");
  o.note("20 seeds, " + std::to_string(checked) + " coordinates (" + std::to_string(skipped) +
         " skipped at relu kinks), max rel err " + fmt("%.2e", worst) + ", " + fmt("%.1f s", secs));
  return o;
}

// ---- 3 ----
Outcome distill_convergence() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const auto c = IMFEConfig::tiny();
  std::vector<double> ratios;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto teacher = TeacherOracle::frozen_network(c, seed + 1);
    auto labelled = [&](std::size_t n, std::uint64_t s) {
      std::vector<std::pair<std::string, Tensor>> clips;
      for (auto& [id, raw] : synthetic_clips(n, c.K, c.H, c.W, s)) clips.emplace_back(id, normalize_pixels(raw));
      return label_samples(clips, teacher);
    };
    const auto train_set = labelled(200, seed * 10);
    const auto val_set = labelled(40, seed * 10 + 1);
    IMFENetwork<float> net(c, seed);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.max_iters = 200;
    cfg.val_every = 50;
    cfg.seed = seed;
    const auto r = train(net, train_set, val_set, cfg);
    ratios.push_back(1.0 - r.final_val / r.initial_val);
    per_seed += (per_seed.empty() ? "" : ", ") + fmt("%.1f%%", 100 * ratios.back());
  }
  std::vector<double> sorted = ratios;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[2];
  const double secs = seconds_since(t0);
  o.require(median >= 0.5, "median val MSE reduction >= 50%");
  o.require(secs < 600, "runtime < 10 min");
  o.note("reductions " + per_seed + ", median " + fmt("%.1f%%", 100 * median) + ", " + fmt("%.1f s", secs));
  return o;
}

// ---- 4, 5, 6 ----
LatencySummary run_preset(const std::string& name, TimingLog* log = nullptr) {
  SimPlan p = find_preset(name);
  p.jobs = 100000;
  const TimingLog t = simulate(p);
  if (log) *log = t;
  return summarize(t);
}

Outcome simulator_moments() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  struct Target {
    const char* preset;
    double mean, std;
  };
  for (const Target& t : {Target{"rt-hare-30fps", 68.83, 2.94}, Target{"raft-30fps", 169.74, 1.53},
                          Target{"rgb-only-30fps", 24.52, 1.48}, Target{"tvl1-30fps", 614.01, 139.94}}) {
    const auto s = run_preset(t.preset);
    o.require(std::abs(s.mean_ms - t.mean) <= 0.02 * t.mean, std::string(t.preset) + " mean within 2%");
    o.require(std::abs(s.std_ms - t.std) <= 0.15 * t.std, std::string(t.preset) + " std within 15%");
    o.note(std::string(t.preset) + " " + fmt("%.2f", s.mean_ms) + "+-" + fmt("%.2f", s.std_ms));
  }
  const double secs = seconds_since(t0);
  o.require(secs < 60, "runtime < 1 min");
  o.note(fmt("%.1f s", secs));
  return o;
}

Outcome miss_ratios() {
  Outcome o;
  for (const char* name : {"rt-hare-30fps", "raft-30fps", "rgb-only-30fps"}) {
    TimingLog log;
    run_preset(name, &log);
    const double r = miss_ratio(log, 200);
    o.require(r == 0.0, std::string(name) + " miss ratio 0");
    o.note(std::string(name) + " " + fmt("%.4f", r));
  }
  TimingLog tv;
  run_preset("tvl1-30fps", &tv);
  const double r30 = miss_ratio(tv, 200);
  o.require(r30 == 1.0, "tvl1-30fps miss ratio 1");
  o.note("tvl1-30fps " + fmt("%.4f", r30));
  TimingLog tv3;
  run_preset("tvl1-3fps", &tv3);
  const double r3 = miss_ratio(tv3, 2000);
  o.require(std::abs(r3 - 0.199) <= 0.01, "tvl1-3fps miss ratio 0.199 +- 0.01");
  o.note("tvl1-3fps @ 2000 ms " + fmt("%.4f", r3));
  return o;
}

Outcome dla_effect() {
  Outcome o;
  const double seq = run_preset("rt-hare-30fps").mean_ms;
  const double par = run_preset("rt-hare-dla-30fps").mean_ms;
  const double d = seq - par;
  o.require(d >= 5 && d <= 9, "mean reduction in [5, 9] ms");
  o.note(fmt("%.2f", seq) + " -> " + fmt("%.2f", par) + " ms, reduction " + fmt("%.2f ms", d));
  return o;
}

// ---- 7 ----
Outcome metric_oracle() {
  Outcome o;
  std::mt19937_64 rng(2024);
  double worst = 0;
  auto random_seq = [&](std::size_t T, int C) {
    std::vector<int> s;
    while (s.size() < T) s.insert(s.end(), 1 + rng() % 25, static_cast<int>(rng() % static_cast<unsigned>(C)));
    s.resize(T);
    return s;
  };
  for (int i = 0; i < 100; ++i) {
    const std::size_t T = 1 + rng() % 200;
    const int C = 1 + static_cast<int>(rng() % 10);
    const auto g = random_seq(T, C), p = random_seq(T, C);
    worst = std::max(worst, std::abs(frame_accuracy(p, g) - oracle::accuracy(p, g)));
    worst = std::max(worst, std::abs(edit_score(p, g) - oracle::edit(p, g)));
    for (double k : {10.0, 25.0, 50.0}) worst = std::max(worst, std::abs(f1_at_k(p, g, k) - oracle::f1(p, g, k)));
  }
  o.require(worst <= 1e-9, "max deviation from oracle <= 1e-9");
  const double e = edit_score({0, 0, 1, 1, 2, 2}, {0, 0, 0, 2, 2, 2});
  o.require(std::abs(e - 66.67) < 0.005, "edit([A,B,C],[A,C]) = 66.67");
  o.note("100 pairs, max deviation " + fmt("%.1e", worst) + ", edit([A,B,C],[A,C]) = " + fmt("%.2f", e));
  return o;
}

// ---- 8 ----
Outcome postproc_property() {
  Outcome o;
  const PostprocConfig cfg;
  std::size_t worse = 0, short_left = 0;
  double gain = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    LabelSequence gt(150, 0);
    gt.insert(gt.end(), 150, 1);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    LabelSequence noisy = gt;
    for (auto& l : noisy) {
      if (u(rng) < 0.05) l = 1 - l;
    }
    std::vector<double> v;
    for (int l : noisy) {
      v.push_back(l == 0 ? 0.8 : 0.2);
      v.push_back(l == 1 ? 0.8 : 0.2);
    }
    const ProbSeries probs(noisy.size(), 2, v);
    const LabelSequence out = refine(noisy, probs, cfg);
    const double before = edit_score(noisy, gt), after = edit_score(out, gt);
    worse += after < before;
    gain += after - before;
    const auto segs = merge_segments(out);
    if (segs.size() > 1) {
      for (const auto& s : segs) short_left += s.length() < cfg.min_dur;
    }
  }
  o.require(worse == 0, "edit never decreases");
  o.require(short_left == 0, "no segment shorter than min_dur");
  o.note("20 corruptions, decreases " + std::to_string(worse) + ", short segments left " + std::to_string(short_left) +
         ", mean edit gain " + fmt("%.1f", gain / 20));
  return o;
}

// ---- 9 ----
Outcome pipeline_semantics() {
  Outcome o;
  o.require(deadline_ms(6, 30) == 200.0, "deadline_ms(6,30) == 200");
  o.require(deadline_ms(6, 3) == 2000.0, "deadline_ms(6,3) == 2000");
  FeatureBuffer full(240);
  for (int i = 0; i < 240; ++i) full.push(Tensor(Shape{1}, {static_cast<float>(i)}));
  const auto v = memory_view(full);
  o.require(v.short_mem.size() == 80 && v.long_mem.size() == 32, "memory view 80/32");
  std::mt19937_64 rng(9);
  bool fifo = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t cap = 1 + rng() % 300, n = rng() % 700;
    FeatureBuffer b(cap);
    std::vector<float> pushed;
    for (std::size_t i = 0; i < n; ++i) {
      pushed.push_back(static_cast<float>(rng() % 100000));
      b.push(Tensor(Shape{1}, {pushed.back()}));
    }
    fifo &= b.size() == std::min(cap, n);
    for (std::size_t i = 0; i < b.size() && fifo; ++i) fifo &= b.at(i)[0] == pushed[n - b.size() + i];
  }
  o.require(fifo, "FIFO property over 200 random push sequences");
  o.note("deadlines 200/2000 ms, view " + std::to_string(v.short_mem.size()) + "/" + std::to_string(v.long_mem.size()) +
         ", FIFO " + (fifo ? "holds" : "violated"));
  return o;
}

// ---- 10 ----
int quiet_cli(std::vector<std::string> args) {
  std::ostringstream sink;
  auto* o = std::cout.rdbuf(sink.rdbuf());
  auto* e = std::cerr.rdbuf(sink.rdbuf());
  args.insert(args.begin(), "--quiet");
  const int code = rthare::cli::run(args);
  std::cout.rdbuf(o);
  std::cerr.rdbuf(e);
  return code;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (fs::is_regular_file(root)) {
    out[root.filename().string()] = slurp(root);
    return out;
  }
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

Outcome cli_determinism() {
  Outcome o;
  const fs::path base = scratch("determinism");
  const std::string d = base.string();
  struct Case {
    std::string name;
    std::function<std::vector<std::string>(const std::string& out)> args;
    bool dir;
  };
  // fixtures shared by the later commands
  if (quiet_cli({"--seed", "3", "generate", "clips", "--out", d + "/clips", "--count", "12", "--val-count", "4"}) ||
      quiet_cli({"--seed", "3", "generate", "weights", "--out", d + "/w"}) ||
      quiet_cli({"--seed", "1", "generate", "stream", "--segments", "2", "--segment-frames", "240", "--out",
                 d + "/train"}) ||
      quiet_cli({"--seed", "2", "generate", "stream", "--segments", "2", "--segment-frames", "240", "--out",
                 d + "/test"})) {
    o.require(false, "fixture generation");
    return o;
  }
  save_rtt(base / "clip.rtt", synthetic_clip(3, 32, 40, 4));
  {
    std::string probs = "action_0,action_1\n";
    std::mt19937_64 rng(5);
    for (int t = 0; t < 200; ++t) {
      const double p = (t < 100 ? 0.8 : 0.2) + 0.15 * (static_cast<double>(rng() % 1000) / 1000.0 - 0.5);
      probs += fmt("%.6f", p) + "," + fmt("%.6f", 1 - p) + "\n";
    }
    std::ofstream(base / "probs.csv") << probs;
    std::ofstream(base / "classes.txt") << "action_0\naction_1\n";
  }

  const std::vector<Case> cases{
      {"generate clips", [&](const std::string& out) {
         return std::vector<std::string>{"--seed", "8", "generate", "clips", "--out", out, "--count", "6", "--val-count", "2"};
       }, true},
      {"generate stream", [&](const std::string& out) {
         return std::vector<std::string>{"--seed", "8", "generate", "stream", "--segment-frames", "60", "--out", out};
       }, true},
      {"generate weights", [&](const std::string& out) {
         return std::vector<std::string>{"--seed", "8", "generate", "weights", "--out", out};
       }, true},
      {"simulate", [&](const std::string& out) {
         return std::vector<std::string>{"--seed", "8", "simulate", "--plan", "tvl1-30fps", "--jobs", "5000", "--out",
                                         out + "/t.csv", "--summary", out + "/s.json"};
       }, true},
      {"extract", [&](const std::string& out) {
         return std::vector<std::string>{"extract", "--frames", d + "/clip.rtt", "--weights", d + "/w", "--out", out + "/f.rtt"};
       }, true},
      {"distill", [&](const std::string& out) {
         return std::vector<std::string>{"--seed", "8", "distill", "--manifest", d + "/clips/manifest.json", "--out", out,
                                         "--batch-size", "4", "--max-iters", "12", "--val-every", "4"};
       }, true},
      {"evaluate", [&](const std::string& out) {
         return std::vector<std::string>{"evaluate", "--pred", d + "/test/labels.txt", "--gt", d + "/train/labels.txt",
                                         "--csv", out + "/r.csv"};
       }, true},
      {"postprocess", [&](const std::string& out) {
         return std::vector<std::string>{"postprocess", "--probs", d + "/probs.csv", "--labels", d + "/classes.txt",
                                         "--out", out + "/l.txt"};
       }, true},
      {"pipeline", [&](const std::string& out) {
         return std::vector<std::string>{"--seed", "8", "pipeline", "--stream", d + "/test", "--centroids-from",
                                         d + "/train", "--out", out};
       }, true},
  };
  std::size_t same = 0;
  for (const auto& c : cases) {
    // same output path both times, snapshot in between
    const fs::path out = base / ("run_" + std::to_string(&c - cases.data()));
    fs::create_directories(out);
    const int ca = quiet_cli(c.args(out.string()));
    const auto ta = tree_bytes(out);
    fs::remove_all(out);
    fs::create_directories(out);
    const int cb = quiet_cli(c.args(out.string()));
    const auto tb = tree_bytes(out);
    const bool ok = ca == 0 && cb == 0 && !ta.empty() && ta == tb;
    o.require(ok, c.name + " reruns byte-identical");
    same += ok;
  }
  o.note(std::to_string(same) + "/" + std::to_string(cases.size()) + " subcommands byte-identical on rerun");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  // optional criterion numbers restrict the run
  std::vector<int> only;
  for (int a = 1; a < argc; ++a) only.push_back(std::atoi(argv[a]));
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"shape fidelity", shape_fidelity},
      {"gradient correctness", gradient_check},
      {"distillation convergence", distill_convergence},
      {"simulator moments", simulator_moments},
      {"miss ratios", miss_ratios},
      {"DLA parallel-group effect", dla_effect},
      {"metric oracle equivalence", metric_oracle},
      {"post-processing property", postproc_property},
      {"pipeline semantics", pipeline_semantics},
      {"determinism", cli_determinism},
  };
  int failed = 0, i = 0;
  for (const auto& c : criteria) {
    ++i;
    if (!only.empty() && std::find(only.begin(), only.end(), i) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i << "] " << c.name << ": " << o.detail << std::endl;
  }
  const int ran = only.empty() ? 10 : static_cast<int>(only.size());
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
