#include "rthare/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "rthare/errors.hpp"
#include "rthare/tensor_io.hpp"

namespace rthare {

SegmentList merge_segments(const LabelSequence& seq) {
  if (seq.empty()) throw ContractError("merge_segments: empty label sequence");
  SegmentList out;
  std::size_t start = 0;
  for (std::size_t t = 1; t <= seq.size(); ++t) {
    if (t == seq.size() || seq[t] != seq[start]) {
      out.push_back({seq[start], start, t, 1.0});
      start = t;
    }
  }
  return out;
}

LabelSequence expand_segments(const SegmentList& segs) {
  LabelSequence out;
  for (const auto& s : segs) out.insert(out.end(), s.length(), s.label);
  return out;
}

void check_segment_list(const SegmentList& segs) {
  if (segs.empty()) throw ContractError("segment list is empty");
  std::size_t at = 0;
  for (const auto& s : segs) {
    if (s.start != at || s.end <= s.start) throw ContractError("segment list is not a contiguous cover");
    at = s.end;
  }
}

static void check_pair(const LabelSequence& pred, const LabelSequence& gt, const char* what) {
  if (pred.empty() || gt.empty()) throw ContractError(std::string(what) + ": empty label sequence");
  if (pred.size() != gt.size()) {
    throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(pred.size()) + " vs " +
                         std::to_string(gt.size()));
  }
}

double frame_accuracy(const LabelSequence& pred, const LabelSequence& gt) {
  check_pair(pred, gt, "frame_accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gt[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

double edit_score(const LabelSequence& pred, const LabelSequence& gt) {
  const SegmentList p = merge_segments(pred);
  const SegmentList g = merge_segments(gt);
  const std::size_t n = p.size(), m = g.size();
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (p[i - 1].label == g[j - 1].label ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return 100.0 * (1.0 - static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m)));
}

double f1_at_k(const LabelSequence& pred, const LabelSequence& gt, double k, bool strict) {
  if (!(k > 0 && k < 100)) throw ConfigError("f1_at_k: k must lie in (0, 100)");
  const SegmentList p = merge_segments(pred);
  const SegmentList g = merge_segments(gt);
  const double thr = k / 100.0;
  std::vector<bool> matched(g.size(), false);
  std::size_t tp = 0, fp = 0;
  for (const auto& s : p) {
    double best = -1;
    std::size_t best_idx = 0;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g[j].label != s.label) continue;
      const double inter = static_cast<double>(std::max(0L, static_cast<long>(std::min(s.end, g[j].end)) -
                                                                static_cast<long>(std::max(s.start, g[j].start))));
      const double uni = static_cast<double>(std::max(s.end, g[j].end) - std::min(s.start, g[j].start));
      const double iou = inter / uni;
      if (iou > best) {
        best = iou;
        best_idx = j;
      }
    }
    const bool pass = strict ? best > thr : best >= thr;
    if (best >= 0 && pass && !matched[best_idx]) {
      matched[best_idx] = true;
      ++tp;
    } else {
      ++fp;
    }
  }
  const std::size_t fn = g.size() - tp;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (precision + recall == 0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

MetricsReport evaluate(const LabelSequence& pred, const LabelSequence& gt, const std::vector<double>& ks, bool strict) {
  MetricsReport r;
  r.accuracy = frame_accuracy(pred, gt);
  r.edit = edit_score(pred, gt);
  r.ks = ks;
  for (double k : ks) r.f1.push_back(f1_at_k(pred, gt, k, strict));
  return r;
}

LabelSet::LabelSet(std::vector<std::string> names) {
  for (auto& n : names) {
    if (find(n) >= 0) throw ConfigError("duplicate class name '" + n + "'");
    names_.push_back(std::move(n));
  }
}

int LabelSet::find(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

int LabelSet::add(const std::string& name) {
  if (int id = find(name); id >= 0) return id;
  names_.push_back(name);
  return static_cast<int>(names_.size() - 1);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

LabelSet load_label_set(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("label set not found: " + path.string());
  std::istringstream in(read_text_file(path));
  std::string line;
  std::vector<std::string> names;
  while (std::getline(in, line)) {
    const std::string n = trim(line);
    if (!n.empty()) names.push_back(n);
  }
  if (names.empty()) throw ParseError(path.string() + ": empty label set");
  return LabelSet(std::move(names));
}

LabelSequence parse_labels(const std::string& text, LabelSet& labels, const std::string& source, bool grow) {
  std::istringstream in(text);
  std::string line;
  LabelSequence seq;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string n = trim(line);
    if (n.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ParseError(source + ": line " + std::to_string(lineno) + ": empty label");
    }
    int id = labels.find(n);
    if (id < 0) {
      if (!grow) throw ParseError(source + ": line " + std::to_string(lineno) + ": unknown class '" + n + "'");
      id = labels.add(n);
    }
    seq.push_back(id);
  }
  if (seq.empty()) throw ParseError(source + ": no labels");
  return seq;
}

LabelSequence load_labels(const std::filesystem::path& path, LabelSet& labels, bool grow) {
  if (!std::filesystem::exists(path)) throw IoError("label file not found: " + path.string());
  return parse_labels(read_text_file(path), labels, path.string(), grow);
}

std::string format_labels(const LabelSequence& seq, const LabelSet& labels) {
  std::string out;
  for (int l : seq) out += labels.name(l) + "\n";
  return out;
}

MetricsReport evaluate_files(const std::filesystem::path& pred, const std::filesystem::path& gt, LabelSet& labels,
                             const std::vector<double>& ks, bool strict) {
  const bool grow = labels.size() == 0;
  const LabelSequence g = load_labels(gt, labels, grow);
  const LabelSequence p = load_labels(pred, labels, grow);
  return evaluate(p, g, ks, strict);
}

static std::string k_name(double k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", k);
  return buf;
}

std::string format_report_table(const MetricsReport& r) {
  std::string out;
  char buf[96];
  std::snprintf(buf, sizeof buf, "%-10s %8s\n", "metric", "value(%)");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %8.2f\n", "accuracy", r.accuracy);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %8.2f\n", "edit", r.edit);
  out += buf;
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-10s %8.2f\n", ("F1@" + k_name(r.ks[i])).c_str(), r.f1[i]);
    out += buf;
  }
  return out;
}

std::string format_report_csv(const MetricsReport& r) {
  std::string head = "accuracy,edit", row;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f,%.6f", r.accuracy, r.edit);
  row = buf;
  for (std::size_t i = 0; i < r.ks.size(); ++i) {
    head += ",f1@" + k_name(r.ks[i]);
    std::snprintf(buf, sizeof buf, ",%.6f", r.f1[i]);
    row += buf;
  }
  return head + "\n" + row + "\n";
}

}  // namespace rthare
