#include "rthare/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "rthare/errors.hpp"
#include "rthare/tensor_io.hpp"

namespace rthare {

ProbSeries::ProbSeries(std::size_t frames, std::size_t classes, std::vector<double> values)
    : frames_(frames), classes_(classes), values_(std::move(values)) {
  if (frames == 0 || classes == 0) throw DimensionError("probability series needs at least one frame and class");
  if (values_.size() != frames * classes) {
    throw DimensionError("probability series holds " + std::to_string(values_.size()) + " values, expected " +
                         std::to_string(frames) + "x" + std::to_string(classes));
  }
  for (std::size_t t = 0; t < frames; ++t) {
    double s = 0;
    for (double v : row(t)) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("frame " + std::to_string(t) + ": probability outside [0,1]");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-5) throw ConfigError("frame " + std::to_string(t) + ": probabilities sum to " + std::to_string(s));
  }
}

std::vector<double> ProbSeries::frame_confidence() const {
  std::vector<double> out(frames_);
  for (std::size_t t = 0; t < frames_; ++t) {
    auto r = row(t);
    out[t] = *std::max_element(r.begin(), r.end());
  }
  return out;
}

LabelSequence ProbSeries::argmax() const {
  LabelSequence out(frames_);
  for (std::size_t t = 0; t < frames_; ++t) {
    auto r = row(t);
    out[t] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

ProbSeries parse_prob_csv(const std::string& text, const LabelSet& labels, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source + ": empty probability file");
  std::vector<int> column_class;
  {
    std::istringstream hs(line);
    std::string name;
    while (std::getline(hs, name, ',')) {
      while (!name.empty() && (name.back() == '\r' || name.back() == ' ')) name.pop_back();
      const int id = labels.find(name);
      if (id < 0) throw ParseError(source + ": line 1: unknown class '" + name + "'");
      column_class.push_back(id);
    }
  }
  const std::size_t C = labels.size();
  std::vector<double> values;
  std::size_t frames = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row(C, 0.0);
    std::istringstream rs(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(rs, cell, ',')) {
      if (col >= column_class.size()) throw ParseError(source + ": line " + std::to_string(lineno) + ": too many columns");
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) throw ParseError(source + ": line " + std::to_string(lineno) + ": not a number");
      row[column_class[col++]] = v;
    }
    if (col != column_class.size()) throw ParseError(source + ": line " + std::to_string(lineno) + ": too few columns");
    values.insert(values.end(), row.begin(), row.end());
    ++frames;
  }
  if (frames == 0) throw ParseError(source + ": no probability rows");
  try {
    return ProbSeries(frames, C, std::move(values));
  } catch (const ConfigError& e) {
    throw ParseError(source + ": " + e.what());
  }
}

ProbSeries load_prob_csv(const std::filesystem::path& path, const LabelSet& labels) {
  if (!std::filesystem::exists(path)) throw IoError("probability file not found: " + path.string());
  return parse_prob_csv(read_text_file(path), labels, path.string());
}

std::string format_prob_csv(const ProbSeries& probs, const LabelSet& labels) {
  std::string out;
  for (std::size_t c = 0; c < probs.classes(); ++c) out += (c ? "," : "") + labels.name(static_cast<int>(c));
  out += "\n";
  char buf[32];
  for (std::size_t t = 0; t < probs.frames(); ++t) {
    for (std::size_t c = 0; c < probs.classes(); ++c) {
      std::snprintf(buf, sizeof buf, c ? ",%.6f" : "%.6f", probs.at(t, c));
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::vector<std::size_t> detect_boundaries(const ProbSeries& probs, std::size_t window, double thresh,
                                           std::size_t min_gap) {
  if (window == 0) throw ConfigError("boundary window must be >= 1");
  if (!(thresh > 0 && thresh < 1)) throw ConfigError("boundary threshold must lie in (0, 1)");
  const std::size_t T = probs.frames(), C = probs.classes();
  if (T < 2 * window) return {};

  // score[t]: distance between the mean of [t-w, t) and of [t, t+w)
  std::vector<double> score(T + 1, 0.0);
  std::vector<double> before(C), after(C);
  for (std::size_t t = window; t + window <= T; ++t) {
    std::fill(before.begin(), before.end(), 0.0);
    std::fill(after.begin(), after.end(), 0.0);
    for (std::size_t i = 0; i < window; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        before[c] += probs.at(t - window + i, c);
        after[c] += probs.at(t + i, c);
      }
    }
    double d = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double diff = (before[c] - after[c]) / static_cast<double>(window);
      d += diff * diff;
    }
    score[t] = std::sqrt(d);
  }

  std::vector<std::size_t> candidates;
  for (std::size_t t = window; t + window <= T; ++t) {
    const double left = t > window ? score[t - 1] : -1.0;
    const double right = t + window < T ? score[t + 1] : -1.0;
    if (score[t] > thresh && score[t] > left && score[t] >= right) candidates.push_back(t);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t c : candidates) {
    bool ok = true;
    for (std::size_t k : kept) {
      if ((c > k ? c - k : k - c) < min_gap) ok = false;
    }
    if (ok) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

LabelSequence boundary_regress(const LabelSequence& labels, const std::vector<std::size_t>& boundaries,
                               const ProbSeries* probs) {
  const std::size_t T = labels.size();
  if (probs && probs->frames() != T) throw DimensionError("boundary_regress: probability/label length mismatch");
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (boundaries[i] >= T || (i && boundaries[i] <= boundaries[i - 1])) {
      throw ConfigError("boundary_regress: boundaries must be strictly increasing within [0, T)");
    }
  }
  LabelSequence out(labels);
  std::vector<std::size_t> cuts{0};
  cuts.insert(cuts.end(), boundaries.begin(), boundaries.end());
  cuts.push_back(T);
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const std::size_t a = cuts[s], b = cuts[s + 1];
    if (a >= b) continue;
    std::map<int, std::size_t> counts;
    for (std::size_t t = a; t < b; ++t) ++counts[labels[t]];
    int best = counts.begin()->first;
    auto mean_prob = [&](int label) {
      if (!probs || label < 0 || static_cast<std::size_t>(label) >= probs->classes()) return 0.0;
      double m = 0;
      for (std::size_t t = a; t < b; ++t) m += probs->at(t, static_cast<std::size_t>(label));
      return m / static_cast<double>(b - a);
    };
    for (const auto& [label, n] : counts) {
      if (label == best) continue;
      const std::size_t bn = counts[best];
      if (n > bn || (n == bn && mean_prob(label) > mean_prob(best))) best = label;
    }
    std::fill(out.begin() + static_cast<long>(a), out.begin() + static_cast<long>(b), best);
  }
  return out;
}

namespace {

double span_mean(std::span<const double> v, std::size_t a, std::size_t b) {
  double s = 0;
  for (std::size_t t = a; t < b; ++t) s += v[t];
  return s / static_cast<double>(b - a);
}

// merges `into` with its right neighbour (index into + 1)
void join(SegmentList& segs, std::size_t left, int label, std::span<const double> frame_conf) {
  Segment& l = segs[left];
  const Segment& r = segs[left + 1];
  const double conf = frame_conf.empty()
                          ? (l.confidence * static_cast<double>(l.length()) + r.confidence * static_cast<double>(r.length())) /
                                static_cast<double>(l.length() + r.length())
                          : span_mean(frame_conf, l.start, r.end);
  l.end = r.end;
  l.label = label;
  l.confidence = conf;
  segs.erase(segs.begin() + static_cast<long>(left) + 1);
}

}  // namespace

SegmentList threshold_filter(SegmentList segs, std::size_t min_dur, double min_conf, std::span<const double> frame_conf) {
  check_segment_list(segs);
  if (!frame_conf.empty() && frame_conf.size() != segs.back().end) {
    throw DimensionError("threshold_filter: frame confidence length does not match the segment cover");
  }
  auto bad = [&](const Segment& s) { return s.length() < min_dur || s.confidence < min_conf; };
  while (segs.size() > 1) {
    std::size_t victim = segs.size();
    for (std::size_t i = 0; i < segs.size(); ++i) {
      if (!bad(segs[i])) continue;
      if (victim == segs.size()) {
        victim = i;
        continue;
      }
      const Segment& v = segs[victim];
      const Segment& s = segs[i];
      // shortest first, then least confident, then the later one
      if (s.length() < v.length() || (s.length() == v.length() && s.confidence <= v.confidence)) victim = i;
    }
    if (victim == segs.size()) break;

    std::size_t target;
    if (victim == 0) {
      target = 1;
    } else if (victim + 1 == segs.size()) {
      target = victim - 1;
    } else {
      target = segs[victim + 1].length() > segs[victim - 1].length() ? victim + 1 : victim - 1;
    }
    const int label = segs[target].label;
    join(segs, std::min(victim, target), label, frame_conf);
    // neighbours that now carry the same label collapse into one segment
    for (std::size_t i = 0; i + 1 < segs.size();) {
      if (segs[i].label == segs[i + 1].label) {
        join(segs, i, segs[i].label, frame_conf);
      } else {
        ++i;
      }
    }
  }
  return segs;
}

PostprocConfig PostprocConfig::for_fps(double fps) {
  if (!(fps > 0)) throw ConfigError("fps must be positive");
  PostprocConfig c;
  c.window = static_cast<std::size_t>(std::max(2.0, std::round(8.0 * fps / 30.0)));
  c.min_gap = c.window;
  c.min_dur = c.window;
  return c;
}

void PostprocConfig::validate() const {
  if (window == 0) throw ConfigError("postproc window must be >= 1");
  if (!(thresh > 0 && thresh < 1)) throw ConfigError("postproc threshold must lie in (0, 1)");
  if (!(min_conf >= 0 && min_conf <= 1)) throw ConfigError("postproc min_conf must lie in [0, 1]");
}

SegmentList scored_segments(const LabelSequence& labels, std::span<const double> frame_conf) {
  SegmentList segs = merge_segments(labels);
  if (frame_conf.size() != labels.size()) throw DimensionError("scored_segments: confidence length mismatch");
  for (auto& s : segs) s.confidence = span_mean(frame_conf, s.start, s.end);
  return segs;
}

LabelSequence refine(const LabelSequence& labels, const ProbSeries& probs, const PostprocConfig& cfg) {
  cfg.validate();
  if (labels.size() != probs.frames()) {
    throw DimensionError("refine: " + std::to_string(labels.size()) + " labels vs " + std::to_string(probs.frames()) +
                         " probability rows");
  }
  const auto boundaries = detect_boundaries(probs, cfg.window, cfg.thresh, cfg.min_gap);
  const LabelSequence regressed = boundary_regress(labels, boundaries, &probs);
  const std::vector<double> conf = probs.frame_confidence();
  const SegmentList filtered = threshold_filter(scored_segments(regressed, conf), cfg.min_dur, cfg.min_conf, conf);
  return expand_segments(filtered);
}

}  // namespace rthare
