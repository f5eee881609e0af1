#include "rthare/stream_pipeline.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "rthare/tensor_io.hpp"

namespace rthare {

Tensor Clip::stacked() const {
  if (frames.empty()) throw ContractError("clip has no frames");
  const Shape& fs = frames[0].pixels.shape();
  Shape shape{frames.size()};
  shape.insert(shape.end(), fs.begin(), fs.end());
  std::vector<float> data;
  data.reserve(numel(shape));
  for (const auto& f : frames) data.insert(data.end(), f.pixels.data().begin(), f.pixels.data().end());
  return Tensor(std::move(shape), std::move(data));
}

ClipAssembler::ClipAssembler(std::size_t K) : K_(K) {
  if (K == 0) throw ConfigError("clip length K must be >= 1");
}

std::optional<Clip> ClipAssembler::push_frame(Frame frame) {
  if (frame.pixels.rank() != 3 || frame.pixels.dim(0) != 3) {
    throw DimensionError("frame must be [3,H,W], got " + to_string(frame.pixels.shape()));
  }
  if (frame_shape_.empty()) {
    frame_shape_ = frame.pixels.shape();
  } else if (frame.pixels.shape() != frame_shape_) {
    throw DimensionError("frame shape " + to_string(frame.pixels.shape()) + " differs from stream shape " +
                         to_string(frame_shape_));
  }
  if (last_ts_ && !(frame.timestamp_ms > *last_ts_)) {
    throw ContractError("frame timestamps must be strictly increasing (" + std::to_string(frame.timestamp_ms) +
                        " after " + std::to_string(*last_ts_) + ")");
  }
  last_ts_ = frame.timestamp_ms;
  pending_.push_back(std::move(frame));
  if (pending_.size() < K_) return std::nullopt;
  Clip clip{++emitted_, std::move(pending_)};
  pending_.clear();
  return clip;
}

Tensor concat_features(const Tensor& rgb, const Tensor& motion) {
  if (rgb.rank() != 1 || motion.rank() != 1) {
    throw DimensionError("concat_features expects vectors, got " + to_string(rgb.shape()) + " and " +
                         to_string(motion.shape()));
  }
  if (rgb.size() != motion.size()) {
    throw DimensionError("concat_features: rgb length " + std::to_string(rgb.size()) + " != motion length " +
                         std::to_string(motion.size()));
  }
  Tensor out(Shape{rgb.size() + motion.size()});
  std::copy(rgb.data().begin(), rgb.data().end(), out.data().begin());
  std::copy(motion.data().begin(), motion.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(rgb.size()));
  return out;
}

FeatureBuffer::FeatureBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("feature buffer capacity must be >= 1");
}

void FeatureBuffer::push(Tensor feature) {
  if (!entries_.empty() && feature.size() != entries_.front().size()) {
    throw DimensionError("feature length " + std::to_string(feature.size()) + " differs from buffered length " +
                         std::to_string(entries_.front().size()));
  }
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back(std::move(feature));
  ++pushes_;
}

FeatureBuffer& update_buffer(FeatureBuffer& buf, Tensor feature) {
  buf.push(std::move(feature));
  return buf;
}

void MemoryConfig::validate() const {
  if (b_short == 0 || long_stride == 0) throw ConfigError("memory: b_short and long_stride must be >= 1");
}

MemoryView memory_view(const FeatureBuffer& buf, const MemoryConfig& cfg) {
  cfg.validate();
  MemoryView v;
  const std::size_t n = buf.size();
  const std::size_t s = std::min(cfg.b_short, n);
  const std::size_t short_begin = n - s;
  const std::size_t long_begin = short_begin - std::min(cfg.b_long, short_begin);
  for (std::size_t i = long_begin; i < short_begin && v.long_index.size() < cfg.long_len; i += cfg.long_stride) {
    v.long_index.push_back(i);
  }
  for (std::size_t i = short_begin; i < n; ++i) v.short_index.push_back(i);
  for (std::size_t i : v.long_index) v.long_mem.push_back(buf.at(i));
  for (std::size_t i : v.short_index) v.short_mem.push_back(buf.at(i));
  return v;
}

namespace {

std::vector<double> short_mean(const MemoryView& view) {
  if (view.short_mem.empty()) throw ContractError("recognizer: empty memory view");
  std::vector<double> mean(view.short_mem[0].size(), 0.0);
  for (const auto& f : view.short_mem) {
    if (f.size() != mean.size()) throw DimensionError("recognizer: inconsistent feature lengths");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += f[i];
  }
  for (auto& m : mean) m /= static_cast<double>(view.short_mem.size());
  return mean;
}

std::vector<double> distances(const std::vector<double>& x, const std::vector<Tensor>& centroids) {
  std::vector<double> d;
  for (const auto& c : centroids) {
    if (c.size() != x.size()) {
      throw DimensionError("centroid length " + std::to_string(c.size()) + " vs feature length " + std::to_string(x.size()));
    }
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - c[i]) * (x[i] - c[i]);
    d.push_back(std::sqrt(s));
  }
  return d;
}

int nearest(const std::vector<double>& d) {
  int best = 0;
  for (std::size_t i = 1; i < d.size(); ++i) {
    if (d[i] < d[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace

int centroid_recognize(const MemoryView& view, const std::vector<Tensor>& centroids) {
  if (centroids.empty()) throw ContractError("centroid_recognize: no centroids");
  return nearest(distances(short_mean(view), centroids));
}

CentroidRecognizer::CentroidRecognizer(std::vector<Tensor> centroids) : centroids_(std::move(centroids)) {
  if (centroids_.empty()) throw ContractError("CentroidRecognizer: no centroids");
  double sum = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < centroids_.size(); ++i) {
    std::vector<double> ci(centroids_[i].data().begin(), centroids_[i].data().end());
    const auto d = distances(ci, centroids_);
    for (std::size_t j = i + 1; j < d.size(); ++j, ++pairs) sum += d[j];
  }
  temperature_ = pairs && sum > 0 ? sum / static_cast<double>(pairs) / 64.0 : 1.0;
}

Recognition CentroidRecognizer::recognize(const MemoryView& view) const {
  const auto d = distances(short_mean(view), centroids_);
  Recognition r;
  r.label = nearest(d);
  const double dmin = d[static_cast<std::size_t>(r.label)];
  double z = 0;
  for (double di : d) {
    r.probs.push_back(std::exp(-(di - dmin) / temperature_));
    z += r.probs.back();
  }
  for (auto& p : r.probs) p /= z;
  return r;
}

std::vector<Tensor> fit_centroids(const std::vector<Tensor>& features, const std::vector<int>& labels,
                                  std::size_t classes) {
  if (features.size() != labels.size()) throw DimensionError("fit_centroids: feature/label count mismatch");
  if (features.empty() || classes == 0) throw ContractError("fit_centroids: no samples");
  const std::size_t len = features[0].size();
  std::vector<std::vector<double>> sums(classes, std::vector<double>(len, 0.0));
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) throw ConfigError("fit_centroids: label out of range");
    if (features[i].size() != len) throw DimensionError("fit_centroids: inconsistent feature lengths");
    for (std::size_t k = 0; k < len; ++k) sums[labels[i]][k] += features[i][k];
    ++counts[labels[i]];
  }
  std::vector<Tensor> out;
  for (std::size_t c = 0; c < classes; ++c) {
    if (!counts[c]) throw ConfigError("fit_centroids: class " + std::to_string(c) + " has no samples");
    Tensor t(Shape{len});
    for (std::size_t k = 0; k < len; ++k) t[k] = static_cast<float>(sums[c][k] / static_cast<double>(counts[c]));
    out.push_back(std::move(t));
  }
  return out;
}

RgbStubExtractor::RgbStubExtractor(std::size_t feature_len, std::uint64_t seed) : feature_len_(feature_len) {
  if (feature_len == 0) throw ConfigError("rgb feature length must be >= 1");
  Initializer init(seed);
  layers_.push_back(ConvLayer<float>::make("rgb.0", 3, 16, 3, 2, init));
  layers_.push_back(ConvLayer<float>::make("rgb.1", 16, 32, 3, 2, init));
  layers_.push_back(ConvLayer<float>::make("rgb.2", 32, feature_len, 3, 2, init));
}

Tensor RgbStubExtractor::extract(const Tensor& clip) const {
  if (clip.rank() != 4 || clip.dim(1) != 3) throw DimensionError("rgb extractor expects [K,3,H,W], got " + to_string(clip.shape()));
  Context<float> ctx;
  Var<float> x = select(borrow(clip), clip.dim(0) / 2);
  for (const auto& l : layers_) x = relu(l.forward(ctx, x));
  return global_avg_pool(x).value();
}

Tensor ImfeMotionExtractor::extract(const Tensor& clip) const { return extract_motion_feature(clip, *net_); }

std::optional<Frame> VectorFrameSource::next() {
  if (pos_ >= frames_.size()) return std::nullopt;
  return frames_[pos_++];
}

void PipelineConfig::validate() const {
  deadline_ms();
  memory.validate();
  if (queue_capacity == 0) throw ConfigError("queue capacity must be >= 1");
  for (const auto* m : {&latency.motion, &latency.rgb, &latency.recog, &latency.post}) m->validate();
  if (!(latency.overhead_ms >= 0)) throw ConfigError("overhead must be >= 0");
}

Tensor clip_feature(const Clip& clip, const FeatureExtractor& motion, const FeatureExtractor& rgb) {
  const Tensor x = normalize_pixels(clip.stacked());
  return concat_features(rgb.extract(x), motion.extract(x));
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Bounded single-producer single-consumer queue of clips.
class ClipQueue {
 public:
  explicit ClipQueue(std::size_t cap) : cap_(cap) {}

  void push(Clip c, double arrival) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < cap_; });
    items_.emplace_back(std::move(c), arrival);
    not_empty_.notify_one();
  }
  void close(std::exception_ptr err = nullptr) {
    std::lock_guard lock(mu_);
    closed_ = true;
    error_ = err;
    not_empty_.notify_all();
  }
  // nullopt at end of stream
  std::optional<std::pair<Clip, double>> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) {
      if (error_) std::rethrow_exception(error_);
      return std::nullopt;
    }
    auto item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

 private:
  std::size_t cap_;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  std::deque<std::pair<Clip, double>> items_;
  bool closed_ = false;
  std::exception_ptr error_;
};

}  // namespace

LiveResult run_live(FrameSource& source, const FeatureExtractor& motion, const FeatureExtractor& rgb,
                    const Recognizer& recognizer, const PipelineConfig& cfg, const PostprocConfig* postproc) {
  cfg.validate();
  LiveResult res;
  FeatureBuffer buffer(cfg.memory.buffer_capacity());
  Rng rng(cfg.seed);
  const double deadline = cfg.deadline_ms();
  const auto t0 = Clock::now();
  std::size_t frames_seen = 0;
  double prev_end = 0;
  std::vector<double> prev_probs(recognizer.classes(), 1.0 / static_cast<double>(recognizer.classes()));
  int prev_label = 0;

  auto process = [&](const Clip& clip, double wall_arrival) {
    JobTiming job;
    job.clip_index = clip.index;
    job.deadline_ms = deadline;
    const bool virt = cfg.clock == ClockMode::virtual_time;
    job.arrival_ms = virt ? clip.arrival_ms() : wall_arrival;
    job.start_ms = virt ? std::max(job.arrival_ms, prev_end) : ms_since(t0);

    Tensor raw = clip.stacked();
    if (virt) {
      const double m = clip.frames.size() >= 2 ? motion_intensity(raw) : 0.0;
      job.motion_ms = sample_latency(cfg.latency.motion, m, rng);
      job.rgb_ms = sample_latency(cfg.latency.rgb, m, rng);
      job.recog_ms = sample_latency(cfg.latency.recog, m, rng);
      job.post_ms = sample_latency(cfg.latency.post, m, rng) + cfg.latency.overhead_ms;
    }
    bool failed = false;
    Recognition rec;
    try {
      const Tensor x = normalize_pixels(raw);
      auto t = Clock::now();
      const Tensor mf = motion.extract(x);
      if (!virt) job.motion_ms = ms_since(t);
      t = Clock::now();
      const Tensor rf = rgb.extract(x);
      if (!virt) job.rgb_ms = ms_since(t);
      t = Clock::now();
      update_buffer(buffer, concat_features(rf, mf));
      rec = recognizer.recognize(memory_view(buffer, cfg.memory));
      if (!virt) job.recog_ms = ms_since(t);
    } catch (const std::exception&) {
      failed = true;
      rec.label = prev_label;
      rec.probs = prev_probs;
    }
    if (virt) {
      job.end_ms = job.start_ms + job.motion_ms + job.rgb_ms + job.recog_ms + job.post_ms;
    } else {
      const auto t = Clock::now();
      prev_label = rec.label;
      job.post_ms = ms_since(t);
      job.end_ms = ms_since(t0);
    }
    job.missed = failed || job.response_ms() > deadline;
    prev_end = job.end_ms;
    prev_label = rec.label;
    prev_probs = rec.probs;
    res.clip_labels.push_back(rec.label);
    res.clip_probs.push_back(rec.probs);
    res.failed.push_back(failed);
    res.timing.push_back(job);
  };

  if (cfg.threaded) {
    ClipQueue queue(cfg.queue_capacity);
    std::thread ingest([&] {
      try {
        ClipAssembler assembler(cfg.K);
        while (auto f = source.next()) {
          ++frames_seen;
          if (auto clip = assembler.push_frame(std::move(*f))) queue.push(std::move(*clip), ms_since(t0));
        }
        queue.close();
      } catch (...) {
        queue.close(std::current_exception());
      }
    });
    try {
      while (auto item = queue.pop()) process(item->first, item->second);
    } catch (...) {
      ingest.join();
      throw;
    }
    ingest.join();
  } else {
    ClipAssembler assembler(cfg.K);
    while (auto f = source.next()) {
      ++frames_seen;
      if (auto clip = assembler.push_frame(std::move(*f))) process(*clip, ms_since(t0));
    }
  }

  const std::size_t C = recognizer.classes();
  std::vector<double> probs;
  probs.reserve(frames_seen * C);
  for (std::size_t t = 0; t < frames_seen; ++t) {
    const std::size_t j = std::min(t / cfg.K, res.clip_labels.empty() ? 0 : res.clip_labels.size() - 1);
    const bool any = !res.clip_labels.empty();
    res.frame_labels.push_back(any ? res.clip_labels[j] : 0);
    const auto& p = any ? res.clip_probs[j] : prev_probs;
    probs.insert(probs.end(), p.begin(), p.end());
  }
  if (frames_seen) {
    res.frame_probs = ProbSeries(frames_seen, C, std::move(probs));
    if (postproc) res.frame_labels = refine(res.frame_labels, *res.frame_probs, *postproc);
  }
  return res;
}

StreamData load_stream_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("stream directory not found: " + dir.string());
  StreamData s;
  const auto frames = load_rtt_sequence<float>(dir / "frames.rtts");
  const auto ts_path = dir / "timestamps.csv";
  std::vector<double> ts;
  if (std::filesystem::exists(ts_path)) {
    std::istringstream in(read_text_file(ts_path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto comma = line.find(',');
      const std::string cell = comma == std::string::npos ? line : line.substr(comma + 1);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        if (lineno == 1) continue;
        throw ParseError(ts_path.string() + ": line " + std::to_string(lineno) + ": bad timestamp");
      }
      ts.push_back(v);
    }
    if (ts.size() != frames.size()) {
      throw ParseError(ts_path.string() + ": " + std::to_string(ts.size()) + " timestamps for " +
                       std::to_string(frames.size()) + " frames");
    }
  } else {
    throw IoError("stream timestamps not found: " + ts_path.string());
  }
  for (std::size_t i = 0; i < frames.size(); ++i) s.frames.push_back({frames[i], ts[i]});
  if (std::filesystem::exists(dir / "classes.txt")) s.classes = load_label_set(dir / "classes.txt");
  if (std::filesystem::exists(dir / "labels.txt")) {
    s.labels = load_labels(dir / "labels.txt", s.classes, s.classes.size() == 0);
    if (s.labels.size() != s.frames.size()) {
      throw ParseError((dir / "labels.txt").string() + ": " + std::to_string(s.labels.size()) + " labels for " +
                       std::to_string(s.frames.size()) + " frames");
    }
  }
  return s;
}

void save_stream_dir(const std::filesystem::path& dir, const StreamData& s) {
  std::filesystem::create_directories(dir);
  std::vector<Tensor> pixels;
  pixels.reserve(s.frames.size());
  for (const auto& f : s.frames) pixels.push_back(f.pixels);
  save_rtt_sequence(dir / "frames.rtts", pixels);
  std::string ts = "frame,timestamp_ms\n";
  char buf[64];
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", i, s.frames[i].timestamp_ms);
    ts += buf;
  }
  write_text_atomic(dir / "timestamps.csv", ts);
  if (s.classes.size()) {
    std::string names;
    for (const auto& n : s.classes.names()) names += n + "\n";
    write_text_atomic(dir / "classes.txt", names);
  }
  if (!s.labels.empty()) write_text_atomic(dir / "labels.txt", format_labels(s.labels, s.classes));
}

}  // namespace rthare
