#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace rthare {

using LabelSequence = std::vector<int>;

// Half-open span [start, end) of one label.
struct Segment {
  int label = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  double confidence = 1.0;

  std::size_t length() const { return end - start; }
  bool operator==(const Segment&) const = default;
};

using SegmentList = std::vector<Segment>;

// maximal runs of identical labels
SegmentList merge_segments(const LabelSequence& seq);
LabelSequence expand_segments(const SegmentList& segs);
// throws ContractError unless segments are non-empty, contiguous and start at 0
void check_segment_list(const SegmentList& segs);

// percentages in [0, 100]
double frame_accuracy(const LabelSequence& pred, const LabelSequence& gt);
double edit_score(const LabelSequence& pred, const LabelSequence& gt);
// IoU >= k/100 counts as a hit, or > k/100 with strict
double f1_at_k(const LabelSequence& pred, const LabelSequence& gt, double k, bool strict = false);

struct MetricsReport {
  double accuracy = 0;
  double edit = 0;
  std::vector<double> ks;
  std::vector<double> f1;
};

MetricsReport evaluate(const LabelSequence& pred, const LabelSequence& gt, const std::vector<double>& ks = {10, 25, 50},
                       bool strict = false);

// Ordered class-name vocabulary.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names);

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  // -1 when unknown
  int find(const std::string& name) const;
  int add(const std::string& name);
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }

 private:
  std::vector<std::string> names_;
};

LabelSet load_label_set(const std::filesystem::path& path);

// One class name per line. Unknown names throw ParseError naming the line; with `grow`
// new names are appended to the set instead.
LabelSequence parse_labels(const std::string& text, LabelSet& labels, const std::string& source, bool grow = false);
LabelSequence load_labels(const std::filesystem::path& path, LabelSet& labels, bool grow = false);
std::string format_labels(const LabelSequence& seq, const LabelSet& labels);

MetricsReport evaluate_files(const std::filesystem::path& pred, const std::filesystem::path& gt, LabelSet& labels,
                             const std::vector<double>& ks = {10, 25, 50}, bool strict = false);

std::string format_report_table(const MetricsReport& r);
std::string format_report_csv(const MetricsReport& r);

}  // namespace rthare
