#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rthare/metrics.hpp"

namespace rthare {

// Per-frame class probabilities, rows sum to 1.
class ProbSeries {
 public:
  ProbSeries() = default;
  ProbSeries(std::size_t frames, std::size_t classes, std::vector<double> values);

  std::size_t frames() const { return frames_; }
  std::size_t classes() const { return classes_; }
  std::span<const double> row(std::size_t t) const { return {values_.data() + t * classes_, classes_}; }
  double at(std::size_t t, std::size_t c) const { return values_[t * classes_ + c]; }
  // max probability per frame
  std::vector<double> frame_confidence() const;
  LabelSequence argmax() const;

 private:
  std::size_t frames_ = 0, classes_ = 0;
  std::vector<double> values_;
};

// CSV with a header of class names, one row per frame. Columns are reordered to the label
// set; unknown class names throw ParseError.
ProbSeries parse_prob_csv(const std::string& text, const LabelSet& labels, const std::string& source);
ProbSeries load_prob_csv(const std::filesystem::path& path, const LabelSet& labels);
std::string format_prob_csv(const ProbSeries& probs, const LabelSet& labels);

std::vector<std::size_t> detect_boundaries(const ProbSeries& probs, std::size_t window, double thresh,
                                           std::size_t min_gap);

// Unifies every span between consecutive boundaries to its majority label. Ties go to the
// label with the higher mean probability over the span (when probs are given), then to the
// lower class id.
LabelSequence boundary_regress(const LabelSequence& labels, const std::vector<std::size_t>& boundaries,
                               const ProbSeries* probs = nullptr);

// Absorbs segments shorter than min_dur or less confident than min_conf into a neighbour
// until none remain or one segment is left. frame_conf, when given, is used to recompute the
// confidence of merged segments.
SegmentList threshold_filter(SegmentList segs, std::size_t min_dur, double min_conf,
                             std::span<const double> frame_conf = {});

struct PostprocConfig {
  std::size_t window = 8;
  double thresh = 0.35;
  std::size_t min_gap = 8;
  std::size_t min_dur = 8;
  double min_conf = 0.4;

  // window max(2, round(8 * fps / 30)); min_gap and min_dur follow the window
  static PostprocConfig for_fps(double fps);
  void validate() const;
};

// segment list of `labels` with confidence = mean of frame_conf over each span
SegmentList scored_segments(const LabelSequence& labels, std::span<const double> frame_conf);

LabelSequence refine(const LabelSequence& labels, const ProbSeries& probs, const PostprocConfig& cfg);

}  // namespace rthare
