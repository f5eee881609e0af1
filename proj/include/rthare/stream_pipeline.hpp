#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rthare/imfe.hpp"
#include "rthare/latency_sim.hpp"
#include "rthare/metrics.hpp"
#include "rthare/postproc.hpp"

namespace rthare {

struct Frame {
  Tensor pixels;  // [3,H,W], raw 0..255
  double timestamp_ms = 0;
};

struct Clip {
  std::size_t index = 0;  // 1-based
  std::vector<Frame> frames;

  double arrival_ms() const { return frames.back().timestamp_ms; }
  // [K,3,H,W]
  Tensor stacked() const;
  const Frame& central() const { return frames[frames.size() / 2]; }
};

// Groups frames into disjoint clips of K.
class ClipAssembler {
 public:
  explicit ClipAssembler(std::size_t K);

  // a clip exactly when the K-th frame of a group arrives
  std::optional<Clip> push_frame(Frame frame);
  std::size_t pending() const { return pending_.size(); }
  std::size_t emitted() const { return emitted_; }

 private:
  std::size_t K_;
  std::vector<Frame> pending_;
  std::size_t emitted_ = 0;
  std::optional<double> last_ts_;
  Shape frame_shape_;
};

// rgb ++ motion
Tensor concat_features(const Tensor& rgb, const Tensor& motion);

// FIFO of per-clip feature vectors with a fixed capacity.
class FeatureBuffer {
 public:
  explicit FeatureBuffer(std::size_t capacity = 240);

  void push(Tensor feature);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  // 0 = oldest
  const Tensor& at(std::size_t i) const { return entries_.at(i); }
  std::size_t pushes() const { return pushes_; }

 private:
  std::size_t capacity_;
  std::deque<Tensor> entries_;
  std::size_t pushes_ = 0;
};

FeatureBuffer& update_buffer(FeatureBuffer& buf, Tensor feature);

struct MemoryConfig {
  std::size_t b_short = 80;
  std::size_t b_long = 160;
  std::size_t long_stride = 5;
  std::size_t long_len = 32;

  std::size_t buffer_capacity() const { return b_short + b_long; }
  void validate() const;
};

struct MemoryView {
  // buffer positions, oldest first
  std::vector<std::size_t> short_index, long_index;
  std::vector<Tensor> short_mem, long_mem;
};

MemoryView memory_view(const FeatureBuffer& buf, const MemoryConfig& cfg = {});

struct Recognition {
  int label = 0;
  std::vector<double> probs;
};

class Recognizer {
 public:
  virtual ~Recognizer() = default;
  virtual Recognition recognize(const MemoryView& view) const = 0;
  virtual std::size_t classes() const = 0;
};

// Nearest class centroid to the mean of the short memory.
class CentroidRecognizer : public Recognizer {
 public:
  explicit CentroidRecognizer(std::vector<Tensor> centroids);
  Recognition recognize(const MemoryView& view) const override;
  std::size_t classes() const override { return centroids_.size(); }
  const std::vector<Tensor>& centroids() const { return centroids_; }

 private:
  std::vector<Tensor> centroids_;
  double temperature_ = 1.0;
};

int centroid_recognize(const MemoryView& view, const std::vector<Tensor>& centroids);

// per-class means of labelled feature vectors; every class in [0, classes) needs a sample
std::vector<Tensor> fit_centroids(const std::vector<Tensor>& features, const std::vector<int>& labels,
                                  std::size_t classes);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  // clip: normalized [K,3,H,W]
  virtual Tensor extract(const Tensor& clip) const = 0;
  virtual std::size_t feature_len() const = 0;
};

// Fixed tiny conv encoder over the clip's central frame.
class RgbStubExtractor : public FeatureExtractor {
 public:
  RgbStubExtractor(std::size_t feature_len, std::uint64_t seed);
  Tensor extract(const Tensor& clip) const override;
  std::size_t feature_len() const override { return feature_len_; }

 private:
  std::size_t feature_len_;
  std::vector<ConvLayer<float>> layers_;
};

class ImfeMotionExtractor : public FeatureExtractor {
 public:
  explicit ImfeMotionExtractor(std::shared_ptr<const IMFENetwork<float>> net) : net_(std::move(net)) {}
  Tensor extract(const Tensor& clip) const override;
  std::size_t feature_len() const override { return net_->config().feature_len; }

 private:
  std::shared_ptr<const IMFENetwork<float>> net_;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<Frame> next() = 0;
};

class VectorFrameSource : public FrameSource {
 public:
  explicit VectorFrameSource(const std::vector<Frame>& frames) : frames_(frames) {}
  std::optional<Frame> next() override;

 private:
  const std::vector<Frame>& frames_;
  std::size_t pos_ = 0;
};

struct StageLatencyModels {
  StageLatencyModel motion = StageLatencyModel::gaussian(38.46, 0.59);
  StageLatencyModel rgb = StageLatencyModel::gaussian(7.11, 0.89);
  StageLatencyModel recog = StageLatencyModel::gaussian(19.26, 0.46);
  StageLatencyModel post = StageLatencyModel::constant(0.0);
  double overhead_ms = 4.0;
};

enum class ClockMode { virtual_time, wall };

struct PipelineConfig {
  std::size_t K = 6;
  double fps = 30;
  MemoryConfig memory;
  // ingestion thread + bounded clip queue; otherwise everything runs on the caller
  bool threaded = false;
  std::size_t queue_capacity = 8;
  ClockMode clock = ClockMode::virtual_time;
  StageLatencyModels latency;
  std::uint64_t seed = 0;

  double deadline_ms() const { return rthare::deadline_ms(K, fps); }
  void validate() const;
};

struct LiveResult {
  std::vector<int> clip_labels;
  std::vector<std::vector<double>> clip_probs;
  std::vector<bool> failed;
  TimingLog timing;
  // one label per input frame; frames of an incomplete trailing clip repeat the last label
  LabelSequence frame_labels;
  std::optional<ProbSeries> frame_probs;
};

// Streams frames through clip assembly, motion + RGB extraction, the feature buffer, the
// recognizer and post-processing. A job whose stage throws is logged as failed (missed=1)
// and keeps the previous label. With `postproc`, the final frame labels are refined.
LiveResult run_live(FrameSource& source, const FeatureExtractor& motion, const FeatureExtractor& rgb,
                    const Recognizer& recognizer, const PipelineConfig& cfg,
                    const PostprocConfig* postproc = nullptr);

// Features of one clip for centroid fitting: normalized pixels through both extractors.
Tensor clip_feature(const Clip& clip, const FeatureExtractor& motion, const FeatureExtractor& rgb);

// On-disk stream: frames.rtts (concatenated RTT1 [3,H,W]), timestamps.csv,
// optional labels.txt (one class per frame) and classes.txt.
struct StreamData {
  std::vector<Frame> frames;
  LabelSet classes;
  LabelSequence labels;
};

StreamData load_stream_dir(const std::filesystem::path& dir);
void save_stream_dir(const std::filesystem::path& dir, const StreamData& stream);

}  // namespace rthare
