#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "rthare/distill.hpp"
#include "rthare/errors.hpp"
#include "rthare/imfe.hpp"
#include "rthare/latency_sim.hpp"
#include "rthare/metrics.hpp"
#include "rthare/postproc.hpp"
#include "rthare/stream_pipeline.hpp"
#include "rthare/synthetic.hpp"
#include "rthare/tensor_io.hpp"

namespace rthare::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// --config: a JSON object. Top-level scalars set global options, nested objects set the
// options of the subcommand they are named after. Underscores in keys read as dashes.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("config: top level must be an object");
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number() || v.is_null()) return v.dump();
    throw ParseError("config: nested arrays/objects are not supported");
  }

  static void flatten(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, v] : j.items()) {
      std::string name = key;
      std::replace(name.begin(), name.end(), '_', '-');
      if (v.is_object()) {
        auto p = parents;
        p.push_back(name);
        flatten(v, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = name;
      if (v.is_array()) {
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      } else {
        item.inputs.push_back(scalar(v));
      }
      out.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 0;
  bool quiet = false;
};

class Logger {
 public:
  explicit Logger(const Globals& g) : g_(g) {}
  void info(const std::string& msg) const {
    if (!g_.quiet) std::cerr << msg << "\n";
  }
  void config(const std::string& cmd, json cfg) const {
    cfg["command"] = cmd;
    cfg["seed"] = g_.seed;
    info("config: " + cfg.dump());
  }

 private:
  const Globals& g_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

IMFEConfig profile_config(const std::string& profile) { return IMFEConfig::from_profile(profile); }

// ---- simulate ----

struct SimulateOpts {
  std::string plan;
  std::string trace;
  std::string out;
  std::string presets;
  std::string summary;
  std::size_t jobs = 0;
  std::vector<double> deadlines;
};

SimPlan resolve_plan(const SimulateOpts& o) {
  if (fs::exists(o.plan) && fs::is_regular_file(o.plan)) return plan_from_json(read_text_file(o.plan));
  const fs::path presets = o.presets.empty() ? default_preset_path() : fs::path(o.presets);
  const auto all = load_presets(presets);
  auto it = all.find(o.plan);
  if (it == all.end()) {
    std::string names;
    for (const auto& [n, _] : all) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown plan '" + o.plan + "' (not a file; presets: " + names + ")");
  }
  return it->second;
}

int cmd_simulate(const SimulateOpts& o, const Globals& g) {
  const Logger log(g);
  SimPlan plan = resolve_plan(o);
  plan.seed = g.seed;
  if (o.jobs) plan.jobs = o.jobs;
  const MotionTrace trace = o.trace.empty() ? MotionTrace{} : load_motion_trace(o.trace);
  std::vector<double> deadlines = o.deadlines;
  if (deadlines.empty()) deadlines.push_back(plan.deadline_ms());
  log.config("simulate", {{"plan", json::parse(plan_to_json(plan))},
                          {"trace", o.trace},
                          {"out", o.out},
                          {"deadlines", deadlines}});

  const TimingLog timing = simulate(plan, trace);
  if (!o.out.empty()) write_text_atomic(o.out, format_timing_csv(timing));
  const LatencySummary s = summarize(timing);

  json summary = {{"plan", plan.name},   {"jobs", s.jobs},           {"mean_ms", s.mean_ms},
                  {"std_ms", s.std_ms},  {"mean_response_ms", s.mean_response_ms},
                  {"min_ms", s.min_ms},  {"max_ms", s.max_ms},       {"seed", g.seed}};
  std::string text = "plan " + plan.name + ": " + std::to_string(s.jobs) + " jobs, latency mean " +
                     fmt("%.2f", s.mean_ms) + " ms, std " + fmt("%.2f", s.std_ms) + " ms\n";
  for (double d : deadlines) {
    const double r = miss_ratio(timing, d);
    summary["miss_ratio"][fmt("%g", d)] = r;
    text += "miss ratio @ " + fmt("%g", d) + " ms: " + fmt("%.4f", r) + "\n";
  }
  std::cout << text;
  if (!o.summary.empty()) write_text_atomic(o.summary, summary.dump(2) + "\n");
  return kOk;
}

// ---- extract ----

struct ExtractOpts {
  std::string frames, weights, out;
};

Tensor load_clip(const fs::path& path) {
  auto seq = load_rtt_sequence<float>(path);
  if (seq.size() == 1 && seq[0].rank() == 4) return seq[0];
  if (seq.empty()) throw ParseError(path.string() + ": no tensors");
  for (const auto& f : seq) {
    if (f.rank() != 3) throw DimensionError(path.string() + ": expected [K,3,H,W] or a sequence of [3,H,W] frames");
  }
  std::vector<Frame> frames;
  for (auto& f : seq) frames.push_back({std::move(f), 0});
  return Clip{1, std::move(frames)}.stacked();
}

int cmd_extract(const ExtractOpts& o, const Globals& g) {
  const Logger log(g);
  log.config("extract", {{"frames", o.frames}, {"weights", o.weights}, {"out", o.out}});
  const auto net = load_checkpoint<float>(o.weights);
  const Tensor clip = load_clip(o.frames);
  const IMFEConfig& c = net.config();
  if (clip.shape() != Shape{c.K, 3, c.H, c.W}) {
    throw DimensionError("clip shape " + to_string(clip.shape()) + " does not match network input " +
                         to_string(Shape{c.K, 3, c.H, c.W}));
  }
  const Tensor feat = extract_motion_feature(normalize_pixels(clip), net);
  save_rtt(o.out, feat);
  log.info("wrote feature " + to_string(feat.shape()) + " to " + o.out);
  return kOk;
}

// ---- distill ----

struct DistillOpts {
  std::string manifest, out, init, profile = "tiny";
  std::optional<std::uint64_t> teacher_seed;
  TrainConfig train;
};

struct Manifest {
  std::optional<std::string> profile;
  std::vector<std::pair<std::string, Tensor>> train, val;
  std::map<std::string, Tensor> targets;
  bool all_targets = true;
};

Manifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("manifest not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text_file(path), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Manifest m;
  const fs::path base = path.parent_path();
  try {
    if (j.contains("profile")) m.profile = j.at("profile").get<std::string>();
    for (const char* split : {"train", "val"}) {
      if (!j.contains(split)) continue;
      auto& dst = std::string(split) == "train" ? m.train : m.val;
      for (const auto& e : j.at(split)) {
        const std::string id = e.at("id").get<std::string>();
        dst.emplace_back(id, load_rtt<float>(base / e.at("clip").get<std::string>()));
        if (e.contains("target")) {
          m.targets[id] = load_rtt<float>(base / e.at("target").get<std::string>());
        } else {
          m.all_targets = false;
        }
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (m.train.empty()) throw ConfigError(path.string() + ": manifest lists no training clips");
  if (m.val.empty()) throw ConfigError(path.string() + ": manifest lists no validation clips");
  return m;
}

int cmd_distill(DistillOpts o, const Globals& g) {
  const Logger log(g);
  const Manifest m = load_manifest(o.manifest);
  std::optional<IMFENetwork<float>> net;
  if (!o.init.empty()) {
    net.emplace(load_checkpoint<float>(o.init));
  } else {
    net.emplace(profile_config(m.profile.value_or(o.profile)), g.seed);
  }
  const IMFEConfig cfg = net->config();
  o.train.seed = g.seed;
  const std::uint64_t teacher_seed = o.teacher_seed.value_or(g.seed + 1);
  const bool file_teacher = m.all_targets && !m.targets.empty();
  const TeacherOracle teacher =
      file_teacher ? TeacherOracle::file(m.targets) : TeacherOracle::frozen_network(cfg, teacher_seed);

  const json resolved = {{"manifest", o.manifest},
                         {"out", o.out},
                         {"profile", cfg.profile},
                         {"init", o.init},
                         {"teacher", file_teacher ? "file" : "frozen_network"},
                         {"teacher_seed", teacher_seed},
                         {"lr0", o.train.lr0},
                         {"decay", o.train.decay},
                         {"decay_points", o.train.decay_points_per_epoch},
                         {"batch_size", o.train.batch_size},
                         {"epochs", o.train.epochs},
                         {"max_iters", o.train.max_iters},
                         {"val_every", o.train.val_every},
                         {"weight_decay", o.train.adamw.weight_decay},
                         {"train_clips", m.train.size()},
                         {"val_clips", m.val.size()}};
  log.config("distill", resolved);
  json with_seed = resolved;
  with_seed["seed"] = g.seed;
  write_text_atomic(fs::path(o.out) / "config.json", with_seed.dump(2) + "\n");

  const auto train_set = label_samples(m.train, teacher);
  const auto val_set = label_samples(m.val, teacher);
  const TrainResult r = train(*net, train_set, val_set, o.train, fs::path(o.out));
  std::cout << "iterations " << r.iterations << ", val mse initial " << fmt("%.6g", r.initial_val) << ", final "
            << fmt("%.6g", r.final_val) << ", best " << fmt("%.6g", r.best_val) << " @ " << r.best_iter << "\n";
  return kOk;
}

// ---- evaluate ----

struct EvaluateOpts {
  std::string pred, gt, labels, csv;
  std::vector<double> ks{10, 25, 50};
  bool strict = false;
};

int cmd_evaluate(const EvaluateOpts& o, const Globals& g) {
  const Logger log(g);
  log.config("evaluate", {{"pred", o.pred}, {"gt", o.gt}, {"labels", o.labels}, {"k", o.ks}, {"strict", o.strict}});
  LabelSet labels = o.labels.empty() ? LabelSet{} : load_label_set(o.labels);
  const MetricsReport r = evaluate_files(o.pred, o.gt, labels, o.ks, o.strict);
  std::cout << format_report_table(r);
  if (!o.csv.empty()) write_text_atomic(o.csv, format_report_csv(r));
  return kOk;
}

// ---- postprocess ----

struct PostprocessOpts {
  std::string probs, labels, pred, out;
  std::optional<std::size_t> window, min_gap, min_dur;
  std::optional<double> fps;
  double thresh = 0.35, min_conf = 0.4;
};

PostprocConfig resolve_postproc(const PostprocessOpts& o) {
  PostprocConfig c = o.fps ? PostprocConfig::for_fps(*o.fps) : PostprocConfig{};
  if (o.window) c.window = c.min_gap = c.min_dur = *o.window;
  if (o.min_gap) c.min_gap = *o.min_gap;
  if (o.min_dur) c.min_dur = *o.min_dur;
  c.thresh = o.thresh;
  c.min_conf = o.min_conf;
  c.validate();
  return c;
}

int cmd_postprocess(const PostprocessOpts& o, const Globals& g) {
  const Logger log(g);
  const PostprocConfig c = resolve_postproc(o);
  log.config("postprocess", {{"probs", o.probs},
                             {"labels", o.labels},
                             {"pred", o.pred},
                             {"out", o.out},
                             {"window", c.window},
                             {"thresh", c.thresh},
                             {"min_gap", c.min_gap},
                             {"min_dur", c.min_dur},
                             {"min_conf", c.min_conf}});
  LabelSet labels = load_label_set(o.labels);
  const ProbSeries probs = load_prob_csv(o.probs, labels);
  LabelSequence seq = o.pred.empty() ? probs.argmax() : load_labels(o.pred, labels, false);
  if (seq.size() != probs.frames()) {
    throw DimensionError("labels have " + std::to_string(seq.size()) + " frames, probabilities " +
                         std::to_string(probs.frames()));
  }
  const LabelSequence refined = refine(seq, probs, c);
  write_text_atomic(o.out, format_labels(refined, labels));
  log.info("segments: " + std::to_string(merge_segments(seq).size()) + " -> " +
           std::to_string(merge_segments(refined).size()));
  return kOk;
}

// ---- pipeline ----

struct PipelineOpts {
  std::string stream, weights, out, centroids_from, profile = "tiny";
  std::string postproc = "on";
  std::string clock = "virtual";
  bool threaded = false;
  double fps = 30;
  std::vector<double> ks{10, 25, 50};
};

int majority(const LabelSequence& labels, std::size_t begin, std::size_t end) {
  std::map<int, std::size_t> count;
  for (std::size_t t = begin; t < end; ++t) ++count[labels[t]];
  int best = count.begin()->first;
  for (const auto& [l, n] : count) {
    if (n > count[best]) best = l;
  }
  return best;
}

std::vector<Tensor> stream_centroids(const StreamData& s, std::size_t K, const FeatureExtractor& motion,
                                     const FeatureExtractor& rgb) {
  if (s.labels.empty()) throw ConfigError("centroid stream has no labels.txt");
  std::vector<Tensor> feats;
  std::vector<int> labels;
  ClipAssembler assembler(K);
  for (std::size_t t = 0; t < s.frames.size(); ++t) {
    if (auto clip = assembler.push_frame(s.frames[t])) {
      feats.push_back(clip_feature(*clip, motion, rgb));
      labels.push_back(majority(s.labels, t + 1 - K, t + 1));
    }
  }
  if (feats.empty()) throw ConfigError("centroid stream is shorter than one clip");
  return fit_centroids(feats, labels, s.classes.size());
}

int cmd_pipeline(const PipelineOpts& o, const Globals& g) {
  const Logger log(g);
  if (o.postproc != "on" && o.postproc != "off") throw ConfigError("--postproc must be on or off");
  if (o.clock != "virtual" && o.clock != "wall") throw ConfigError("--clock must be virtual or wall");
  const StreamData stream = load_stream_dir(o.stream);
  const StreamData centroid_stream = o.centroids_from.empty() ? StreamData{} : load_stream_dir(o.centroids_from);
  const StreamData& cs = o.centroids_from.empty() ? stream : centroid_stream;

  auto net = o.weights.empty() ? std::make_shared<const IMFENetwork<float>>(profile_config(o.profile), g.seed)
                               : std::make_shared<const IMFENetwork<float>>(load_checkpoint<float>(o.weights));
  const IMFEConfig& nc = net->config();
  ImfeMotionExtractor motion(net);
  RgbStubExtractor rgb(nc.feature_len, g.seed + 2);

  PipelineConfig pc;
  pc.K = nc.K;
  pc.fps = o.fps;
  pc.threaded = o.threaded;
  pc.clock = o.clock == "wall" ? ClockMode::wall : ClockMode::virtual_time;
  pc.seed = g.seed;
  pc.validate();
  const PostprocConfig post = PostprocConfig::for_fps(o.fps);

  log.config("pipeline", {{"stream", o.stream},
                          {"weights", o.weights},
                          {"profile", nc.profile},
                          {"centroids_from", o.centroids_from},
                          {"out", o.out},
                          {"postproc", o.postproc},
                          {"clock", o.clock},
                          {"threaded", o.threaded},
                          {"fps", o.fps},
                          {"K", pc.K},
                          {"deadline_ms", pc.deadline_ms()},
                          {"window", post.window}});

  const CentroidRecognizer recognizer(stream_centroids(cs, nc.K, motion, rgb));
  LabelSet classes = cs.classes;
  if (stream.classes.size() && stream.classes.names() != classes.names()) {
    throw ConfigError("stream and centroid stream list different classes");
  }
  VectorFrameSource source(stream.frames);
  const LiveResult r = run_live(source, motion, rgb, recognizer, pc, o.postproc == "on" ? &post : nullptr);

  const fs::path out(o.out);
  write_text_atomic(out / "timing.csv", format_timing_csv(r.timing));
  write_text_atomic(out / "pred_labels.txt", format_labels(r.frame_labels, classes));
  if (r.frame_probs) write_text_atomic(out / "frame_probs.csv", format_prob_csv(*r.frame_probs, classes));
  std::size_t failed = static_cast<std::size_t>(std::count(r.failed.begin(), r.failed.end(), true));
  std::cout << "clips " << r.timing.size() << ", failed " << failed;
  if (!r.timing.empty()) std::cout << ", miss ratio " << fmt("%.4f", miss_ratio(r.timing, pc.deadline_ms()));
  std::cout << "\n";
  if (!stream.labels.empty() && !r.frame_labels.empty()) {
    const MetricsReport rep = evaluate(r.frame_labels, stream.labels, o.ks, false);
    write_text_atomic(out / "report.csv", format_report_csv(rep));
    std::cout << format_report_table(rep);
  }
  return kOk;
}

// ---- generate ----

struct GenerateOpts {
  std::string out, profile = "tiny";
  std::size_t count = 200, val_count = 40;
  SyntheticStreamConfig stream;
};

int cmd_generate_clips(const GenerateOpts& o, const Globals& g) {
  const Logger log(g);
  const IMFEConfig c = profile_config(o.profile);
  if (o.count == 0 || o.val_count == 0) throw ConfigError("--count and --val-count must be >= 1");
  log.config("generate clips", {{"out", o.out}, {"profile", c.profile}, {"count", o.count}, {"val_count", o.val_count}});
  const auto clips = synthetic_clips(o.count + o.val_count, c.K, c.H, c.W, g.seed);
  json m = {{"profile", c.profile}, {"train", json::array()}, {"val", json::array()}};
  const fs::path out(o.out);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::string rel = "clips/" + clips[i].first + ".rtt";
    save_rtt(out / rel, clips[i].second);
    m[i < o.count ? "train" : "val"].push_back({{"id", clips[i].first}, {"clip", rel}});
  }
  write_text_atomic(out / "manifest.json", m.dump(2) + "\n");
  return kOk;
}

int cmd_generate_stream(GenerateOpts o, const Globals& g) {
  const Logger log(g);
  const IMFEConfig c = profile_config(o.profile);
  o.stream.H = c.H;
  o.stream.W = c.W;
  o.stream.seed = g.seed;
  log.config("generate stream", {{"out", o.out},
                                 {"profile", c.profile},
                                 {"classes", o.stream.classes},
                                 {"segments", o.stream.segments},
                                 {"segment_frames", o.stream.segment_frames},
                                 {"noise", o.stream.noise},
                                 {"fps", o.stream.fps}});
  save_stream_dir(o.out, synthetic_stream(o.stream));
  return kOk;
}

int cmd_generate_weights(const GenerateOpts& o, const Globals& g) {
  const Logger log(g);
  const IMFEConfig c = profile_config(o.profile);
  log.config("generate weights", {{"out", o.out}, {"profile", c.profile}});
  save_checkpoint(IMFENetwork<float>(c, g.seed), o.out, g.seed);
  return kOk;
}

// unsigned options reject negative input instead of wrapping
template <typename T>
CLI::Option* add_count(CLI::App* app, const std::string& name, T& v, const std::string& desc) {
  return app->add_option(name, v, desc)->check(CLI::NonNegativeNumber)->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Real-time HAR toolkit: motion features, distillation, latency simulation, metrics"};
  app.config_formatter(std::make_shared<JsonConfig>());
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "JSON config file; command-line flags override it");
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every stochastic step")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress log output on stderr");

  SimulateOpts sim;
  auto* s = app.add_subcommand("simulate", "Discrete-event latency simulation of a pipeline plan");
  s->add_option("--plan", sim.plan, "Preset name or plan JSON file")->required();
  s->add_option("--trace", sim.trace, "Per-clip motion intensity CSV");
  s->add_option("--out", sim.out, "Timing log CSV");
  s->add_option("--summary", sim.summary, "Summary JSON");
  s->add_option("--presets", sim.presets, "Preset file (default: bundled presets)");
  add_count(s, "--jobs", sim.jobs, "Override the plan's job count (0 keeps it)");
  s->add_option("--deadline", sim.deadlines, "Deadlines in ms for miss ratios (default: plan deadline)");

  ExtractOpts ex;
  auto* e = app.add_subcommand("extract", "Motion feature of one clip");
  e->add_option("--frames", ex.frames, "RTT clip [K,3,H,W] or frame sequence, raw pixels")->required();
  e->add_option("--weights", ex.weights, "Checkpoint directory")->required();
  e->add_option("--out", ex.out, "Output feature RTT")->required();

  DistillOpts di;
  auto* d = app.add_subcommand("distill", "Train the motion extractor against the teacher");
  d->add_option("--manifest", di.manifest, "Training manifest JSON")->required();
  d->add_option("--out", di.out, "Output directory")->required();
  d->add_option("--init", di.init, "Initial checkpoint (default: seeded init)");
  d->add_option("--profile", di.profile, "Profile when the manifest names none")->envname("RTHARE_PROFILE")->capture_default_str();
  d->add_option("--teacher-seed", di.teacher_seed, "Frozen teacher seed (default: seed + 1)");
  d->add_option("--lr0", di.train.lr0, "Initial learning rate")->capture_default_str();
  d->add_option("--decay", di.train.decay, "Learning-rate decay factor")->capture_default_str();
  add_count(d, "--decay-points", di.train.decay_points_per_epoch, "Decay points per epoch");
  add_count(d, "--batch-size", di.train.batch_size, "Clips per update");
  add_count(d, "--epochs", di.train.epochs, "Epochs");
  add_count(d, "--max-iters", di.train.max_iters, "Stop after this many updates (0 = epochs)");
  add_count(d, "--val-every", di.train.val_every, "Validation cadence (0 = each decay point)");
  d->add_option("--weight-decay", di.train.adamw.weight_decay, "AdamW weight decay")->capture_default_str();

  EvaluateOpts ev;
  auto* v = app.add_subcommand("evaluate", "Frame accuracy, edit score and F1@k");
  v->add_option("--pred", ev.pred, "Predicted labels, one class per line")->required();
  v->add_option("--gt", ev.gt, "Ground-truth labels")->required();
  v->add_option("--labels", ev.labels, "Class list (default: classes seen in gt then pred)");
  v->add_option("--k", ev.ks, "F1 overlap thresholds in percent")->capture_default_str();
  v->add_flag("--strict", ev.strict, "Require IoU strictly above k");
  v->add_option("--csv", ev.csv, "Write the report as CSV");

  PostprocessOpts pp;
  auto* p = app.add_subcommand("postprocess", "Boundary regression and threshold filtering");
  p->add_option("--probs", pp.probs, "Per-frame probability CSV")->required();
  p->add_option("--labels", pp.labels, "Class list")->required();
  p->add_option("--pred", pp.pred, "Frame labels to refine (default: argmax of probs)");
  p->add_option("--out", pp.out, "Refined labels")->required();
  p->add_option("--window", pp.window, "Boundary window in frames (min-gap and min-dur follow)");
  p->add_option("--min-gap", pp.min_gap, "Minimum distance between boundaries");
  p->add_option("--min-dur", pp.min_dur, "Minimum segment length");
  p->add_option("--fps", pp.fps, "Derive the window from the frame rate");
  p->add_option("--thresh", pp.thresh, "Boundary score threshold")->capture_default_str();
  p->add_option("--min-conf", pp.min_conf, "Minimum segment confidence")->capture_default_str();

  PipelineOpts pl;
  auto* l = app.add_subcommand("pipeline", "Run the live recognition pipeline over a stream");
  l->add_option("--stream", pl.stream, "Stream directory")->required();
  l->add_option("--weights", pl.weights, "Checkpoint directory (default: seeded init)");
  l->add_option("--profile", pl.profile, "Profile for seeded init")->envname("RTHARE_PROFILE")->capture_default_str();
  l->add_option("--centroids-from", pl.centroids_from, "Labelled stream for class centroids (default: --stream)");
  l->add_option("--out", pl.out, "Output directory")->required();
  l->add_option("--postproc", pl.postproc, "on|off")->capture_default_str();
  l->add_option("--clock", pl.clock, "virtual|wall")->capture_default_str();
  l->add_flag("--threaded", pl.threaded, "Ingest frames on a separate thread");
  l->add_option("--fps", pl.fps, "Stream frame rate")->capture_default_str();
  l->add_option("--k", pl.ks, "F1 overlap thresholds")->capture_default_str();

  GenerateOpts ge;
  auto* gen = app.add_subcommand("generate", "Synthetic fixtures");
  gen->require_subcommand(1);
  auto* gc = gen->add_subcommand("clips", "Random clips plus a training manifest");
  auto* gs = gen->add_subcommand("stream", "Labelled multi-class frame stream");
  auto* gw = gen->add_subcommand("weights", "Seeded checkpoint");
  for (auto* sub : {gc, gs, gw}) {
    sub->add_option("--out", ge.out, "Output directory")->required();
    sub->add_option("--profile", ge.profile, "tiny|full")->envname("RTHARE_PROFILE")->capture_default_str();
  }
  add_count(gc, "--count", ge.count, "Training clips");
  add_count(gc, "--val-count", ge.val_count, "Validation clips");
  add_count(gs, "--classes", ge.stream.classes, "Classes");
  add_count(gs, "--segments", ge.stream.segments, "Segments");
  add_count(gs, "--segment-frames", ge.stream.segment_frames, "Frames per segment");
  gs->add_option("--noise", ge.stream.noise, "Pixel noise std")->capture_default_str();
  gs->add_option("--fps", ge.stream.fps, "Frame rate")->capture_default_str();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kInputError;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kInputError;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim, g);
    if (e->parsed()) return cmd_extract(ex, g);
    if (d->parsed()) return cmd_distill(di, g);
    if (v->parsed()) return cmd_evaluate(ev, g);
    if (p->parsed()) return cmd_postprocess(pp, g);
    if (l->parsed()) return cmd_pipeline(pl, g);
    if (gc->parsed()) return cmd_generate_clips(ge, g);
    if (gs->parsed()) return cmd_generate_stream(ge, g);
    if (gw->parsed()) return cmd_generate_weights(ge, g);
  } catch (const NumericError& ex) {
    std::cerr << "numeric error: " << ex.what() << "\n";
    return kNumericError;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kInputError;
  }
  return kInputError;
}

}  // namespace rthare::cli
