#include "rthare/errors.hpp"
#include "rthare/postproc.hpp"
#include "rthare/tensor_io.hpp"
#include "test_util.hpp"

using namespace rthare;

namespace {

LabelSequence runs(std::initializer_list<std::pair<int, std::size_t>> rs) {
  LabelSequence out;
  for (auto [l, n] : rs) out.insert(out.end(), n, l);
  return out;
}

// probability `p` on the frame's label, the rest spread evenly
ProbSeries soft_onehot(const LabelSequence& labels, std::size_t C, double p = 0.8) {
  std::vector<double> v(labels.size() * C, (1.0 - p) / static_cast<double>(C - 1));
  for (std::size_t t = 0; t < labels.size(); ++t) v[t * C + static_cast<std::size_t>(labels[t])] = p;
  return ProbSeries(labels.size(), C, std::move(v));
}

LabelSequence salt_and_pepper(const LabelSequence& gt, double rate, int C, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  LabelSequence out = gt;
  for (auto& l : out) {
    if (u(rng) < rate) l = (l + 1 + static_cast<int>(rng() % static_cast<unsigned>(C - 1))) % C;
  }
  return out;
}

std::size_t shortest_segment(const LabelSequence& s) {
  std::size_t m = s.size();
  for (const auto& seg : merge_segments(s)) m = std::min(m, seg.length());
  return m;
}

}  // namespace

TEST_CASE("probability series validation and csv") {
  CHECK_THROWS_AS(ProbSeries(2, 2, {0.5, 0.5, 0.5}), DimensionError);
  CHECK_THROWS_AS(ProbSeries(1, 2, {0.7, 0.7}), ConfigError);
  CHECK_THROWS_AS(ProbSeries(1, 2, {1.5, -0.5}), ConfigError);
  const ProbSeries p(2, 3, {0.2, 0.5, 0.3, 0.6, 0.1, 0.3});
  CHECK(p.argmax() == LabelSequence{1, 0});
  CHECK(p.frame_confidence() == std::vector<double>{0.5, 0.6});

  LabelSet labels({"a", "b", "c"});
  const std::string csv = format_prob_csv(p, labels);
  CHECK(csv == "a,b,c\n0.200000,0.500000,0.300000\n0.600000,0.100000,0.300000\n");
  CHECK(format_prob_csv(parse_prob_csv(csv, labels, "x"), labels) == csv);
  // columns are reordered to the label set
  const ProbSeries r = parse_prob_csv("c,a,b\n0.3,0.2,0.5\n", labels, "x");
  CHECK(r.at(0, 0) == 0.2);
  CHECK(r.at(0, 2) == 0.3);
  CHECK_THROWS_AS(parse_prob_csv("a,z\n0.5,0.5\n", labels, "x"), ParseError);
  CHECK_THROWS_AS(parse_prob_csv("a,b,c\n0.5,0.5\n", labels, "x"), ParseError);
  CHECK_THROWS_AS(parse_prob_csv("a,b,c\n0.5,q,0\n", labels, "x"), ParseError);
  CHECK_THROWS_AS(parse_prob_csv("a,b,c\n0.9,0.9,0\n", labels, "x"), ParseError);
  CHECK_THROWS_AS(parse_prob_csv("a,b,c\n", labels, "x"), ParseError);
  CHECK_THROWS_AS(load_prob_csv("/no/such.csv", labels), IoError);
}

TEST_CASE("boundary detection") {
  SUBCASE("constant probabilities have no boundary") {
    CHECK(detect_boundaries(soft_onehot(runs({{0, 100}}), 3), 4, 0.35, 4).empty());
  }
  SUBCASE("hard switch is found exactly") {
    const ProbSeries p = soft_onehot(runs({{0, 50}, {1, 50}}), 2, 1.0);
    CHECK(detect_boundaries(p, 4, 0.5, 4) == std::vector<std::size_t>{50});
  }
  SUBCASE("boundaries closer than min_gap merge") {
    const ProbSeries p = soft_onehot(runs({{0, 40}, {1, 2}, {2, 40}}), 3, 1.0);
    const auto b = detect_boundaries(p, 4, 0.35, 5);
    CHECK(b.size() == 1);
    CHECK(detect_boundaries(p, 4, 0.35, 1).size() == 2);
  }
  SUBCASE("short series") {
    CHECK(detect_boundaries(soft_onehot(runs({{0, 3}, {1, 4}}), 2), 4, 0.35, 4).empty());
  }
  CHECK_THROWS_AS(detect_boundaries(soft_onehot({0, 1}, 2), 0, 0.3, 1), ConfigError);
  CHECK_THROWS_AS(detect_boundaries(soft_onehot({0, 1}, 2), 1, 1.0, 1), ConfigError);
}

TEST_CASE("boundary regression unifies spans") {
  CHECK(boundary_regress({0, 0, 1, 0}, {}) == LabelSequence{0, 0, 0, 0});
  CHECK(boundary_regress({0, 1, 0, 1, 0}, {}) == LabelSequence(5, 0));
  CHECK(boundary_regress({0, 1, 0, 2, 2, 1}, {3}) == LabelSequence{0, 0, 0, 2, 2, 2});
  // tie: lower id without probabilities, higher mean probability with them
  CHECK(boundary_regress({1, 0}, {}) == LabelSequence{0, 0});
  const ProbSeries p(2, 2, {0.4, 0.6, 0.45, 0.55});
  CHECK(boundary_regress({1, 0}, {}, &p) == LabelSequence{1, 1});
  CHECK_THROWS_AS(boundary_regress({0, 1}, {2}), ConfigError);
  CHECK_THROWS_AS(boundary_regress({0, 1, 1}, {1, 1}), ConfigError);
}

TEST_CASE("threshold filter absorbs short or weak segments") {
  CHECK(threshold_filter({{0, 0, 100}, {1, 100, 102}, {0, 102, 200}}, 5, 0) == SegmentList{{0, 0, 200}});
  const SegmentList clean{{0, 0, 50, 0.9}, {1, 50, 100, 0.8}};
  CHECK(threshold_filter(clean, 5, 0.4) == clean);
  const auto tie = threshold_filter({{0, 0, 3}, {1, 3, 6}}, 5, 0);
  REQUIRE(tie.size() == 1);
  CHECK(tie[0].label == 0);
  CHECK(tie[0].length() == 6);
  // low confidence goes to the longer neighbour
  const auto weak = threshold_filter({{0, 0, 20, 0.9}, {1, 20, 40, 0.1}, {2, 40, 70, 0.9}}, 5, 0.4);
  CHECK(weak == SegmentList{{0, 0, 20, 0.9}, {2, 20, 70, (0.9 * 30 + 0.1 * 20) / 50}});
  CHECK_THROWS_AS(threshold_filter({{0, 0, 2}, {1, 3, 5}}, 1, 0), ContractError);
}

TEST_CASE("config for frame rate") {
  CHECK(PostprocConfig::for_fps(30).window == 8);
  CHECK(PostprocConfig::for_fps(15).window == 4);
  CHECK(PostprocConfig::for_fps(6).window == 2);
  CHECK(PostprocConfig::for_fps(3).window == 2);
  CHECK(PostprocConfig::for_fps(60).min_dur == 16);
  CHECK_THROWS_AS(PostprocConfig::for_fps(0), ConfigError);
  PostprocConfig c;
  c.thresh = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("refine examples") {
  const PostprocConfig cfg;
  const LabelSequence clean = runs({{0, 60}, {1, 60}});
  CHECK(refine(clean, soft_onehot(clean, 3), cfg) == clean);
  CHECK(refine({2}, soft_onehot({2}, 3), cfg) == LabelSequence{2});
  CHECK_THROWS_AS(refine({0, 1}, soft_onehot({0, 1, 1}, 2), cfg), DimensionError);
}

TEST_CASE("refine on salt-and-pepper noise: edit never drops, short segments vanish, idempotent") {
  const PostprocConfig cfg;
  for (int C : {2, 4}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      CAPTURE(seed);
      const LabelSequence gt = runs({{0, 150}, {1, 150}});
      const LabelSequence noisy = salt_and_pepper(gt, 0.05, C, seed);
      const ProbSeries probs = soft_onehot(noisy, static_cast<std::size_t>(C));
      const LabelSequence out = refine(noisy, probs, cfg);
      CHECK(out.size() == gt.size());
      CHECK(edit_score(out, gt) >= edit_score(noisy, gt));
      if (merge_segments(out).size() > 1) CHECK(shortest_segment(out) >= cfg.min_dur);
      CHECK(refine(out, probs, cfg) == out);
    }
  }
}

TEST_CASE("refine covering and duration properties on random inputs") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 40; ++i) {
    const std::size_t T = 1 + rng() % 400, C = 2 + rng() % 4;
    std::vector<double> v(T * C);
    LabelSequence labels(T);
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0;
      for (std::size_t c = 0; c < C; ++c) s += v[t * C + c] = 0.01 + static_cast<double>(rng() % 1000);
      for (std::size_t c = 0; c < C; ++c) v[t * C + c] /= s;
      labels[t] = static_cast<int>(rng() % C);
    }
    const ProbSeries probs(T, C, v);
    PostprocConfig cfg;
    cfg.min_conf = 0;
    const LabelSequence out = refine(labels, probs, cfg);
    CHECK(out.size() == T);
    if (merge_segments(out).size() > 1) CHECK(shortest_segment(out) >= cfg.min_dur);
    CHECK(refine(out, probs, cfg) == out);
  }
}
