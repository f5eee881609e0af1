#include <json.hpp>

#include "oracles/metrics_oracle.hpp"
#include "rthare/errors.hpp"
#include "rthare/metrics.hpp"
#include "rthare/tensor_io.hpp"
#include "test_util.hpp"

using namespace rthare;

namespace {

LabelSequence runs(std::initializer_list<std::pair<int, std::size_t>> rs) {
  LabelSequence out;
  for (auto [l, n] : rs) out.insert(out.end(), n, l);
  return out;
}

LabelSequence random_segmented(std::mt19937_64& rng, std::size_t T, int C) {
  LabelSequence s;
  while (s.size() < T) {
    const int l = static_cast<int>(rng() % C);
    const std::size_t len = 1 + rng() % 30;
    s.insert(s.end(), len, l);
  }
  s.resize(T);
  return s;
}

LabelSequence upsample(const LabelSequence& s, std::size_t n) {
  LabelSequence out;
  for (int l : s) out.insert(out.end(), n, l);
  return out;
}

}  // namespace

TEST_CASE("segments merge and expand") {
  CHECK(merge_segments({0, 0, 1}) == SegmentList{{0, 0, 2, 1.0}, {1, 2, 3, 1.0}});
  CHECK(merge_segments({4}) == SegmentList{{4, 0, 1, 1.0}});
  CHECK_THROWS_AS(merge_segments({}), ContractError);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto s = random_segmented(rng, 1 + rng() % 300, 4);
    const auto segs = merge_segments(s);
    CHECK(expand_segments(segs) == s);
    CHECK_NOTHROW(check_segment_list(segs));
    for (std::size_t j = 1; j < segs.size(); ++j) CHECK(segs[j].label != segs[j - 1].label);
  }
  CHECK_THROWS_AS(check_segment_list({{0, 1, 3}}), ContractError);
  CHECK_THROWS_AS(check_segment_list({{0, 0, 2}, {1, 3, 4}}), ContractError);
  CHECK_THROWS_AS(check_segment_list({}), ContractError);
}

TEST_CASE("frame accuracy") {
  const LabelSequence g{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  CHECK(frame_accuracy(g, g) == 100.0);
  LabelSequence p = g;
  p[0] = p[3] = p[9] = 42;
  CHECK(frame_accuracy(p, g) == doctest::Approx(70.0));
  CHECK_THROWS_AS(frame_accuracy({0, 1}, {0}), DimensionError);
}

TEST_CASE("edit score examples") {
  const LabelSequence abc = runs({{0, 5}, {1, 5}, {2, 5}});
  const LabelSequence ac = runs({{0, 7}, {2, 8}});
  CHECK(edit_score(abc, abc) == 100.0);
  CHECK(edit_score(abc, ac) == doctest::Approx(66.6667).epsilon(1e-5));
  CHECK(edit_score(runs({{0, 2}, {1, 2}, {0, 2}}), runs({{3, 2}, {4, 2}, {3, 2}})) == 0.0);
  // durations are ignored
  CHECK(edit_score(runs({{0, 1}, {1, 99}}), runs({{0, 99}, {1, 1}})) == 100.0);
}

TEST_CASE("F1@k examples") {
  const LabelSequence g = runs({{0, 50}, {1, 50}});
  CHECK(f1_at_k(g, g, 50) == 100.0);
  CHECK(f1_at_k(runs({{1, 100}}), runs({{0, 100}}), 10) == 0.0);
  const LabelSequence p = runs({{0, 30}, {1, 70}});
  CHECK(f1_at_k(p, g, 10) == 100.0);
  CHECK(f1_at_k(p, g, 50) == 100.0);
  // IoU 0.6 fails k = 61: one TP of two
  CHECK(f1_at_k(p, g, 61) == doctest::Approx(50.0));
  // exactly at the threshold: inclusive counts it, strict does not
  const LabelSequence half = runs({{0, 25}, {1, 75}});
  CHECK(f1_at_k(half, g, 50) == 100.0);
  CHECK(f1_at_k(half, g, 50, true) == doctest::Approx(50.0));
  // each ground-truth segment is matched once
  const LabelSequence split = runs({{0, 25}, {2, 1}, {0, 24}, {1, 50}});
  const double prec = 2.0 / 4.0, rec = 2.0 / 2.0;
  CHECK(f1_at_k(split, g, 10) == doctest::Approx(100 * 2 * prec * rec / (prec + rec)));
  CHECK_THROWS_AS(f1_at_k(g, g, 0), ConfigError);
  CHECK_THROWS_AS(f1_at_k(g, g, 100), ConfigError);
}

TEST_CASE("metrics agree with the brute-force oracle on random pairs") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 100; ++i) {
    const std::size_t T = 1 + rng() % 200;
    const int C = 1 + static_cast<int>(rng() % 10);
    const auto g = random_segmented(rng, T, C);
    const auto p = random_segmented(rng, T, C);
    CHECK(frame_accuracy(p, g) == doctest::Approx(oracle::accuracy(p, g)).epsilon(1e-12));
    CHECK(edit_score(p, g) == doctest::Approx(oracle::edit(p, g)).epsilon(1e-12));
    for (double k : {10.0, 25.0, 50.0}) {
      CHECK(f1_at_k(p, g, k) == doctest::Approx(oracle::f1(p, g, k)).epsilon(1e-12));
      CHECK(f1_at_k(p, g, k, true) == doctest::Approx(oracle::f1(p, g, k, true)).epsilon(1e-12));
    }
  }
}

TEST_CASE("metric properties") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 60; ++i) {
    const std::size_t T = 1 + rng() % 150;
    const auto g = random_segmented(rng, T, 5);
    const auto p = random_segmented(rng, T, 5);
    const auto r = evaluate(p, g, {10, 25, 50, 75});
    CHECK(r.accuracy >= 0);
    CHECK(r.accuracy <= 100);
    CHECK(r.edit >= 0);
    CHECK(r.edit <= 100);
    for (std::size_t j = 0; j < r.f1.size(); ++j) {
      CHECK(r.f1[j] >= 0);
      CHECK(r.f1[j] <= 100);
      if (j) CHECK(r.f1[j] <= r.f1[j - 1]);
    }
    CHECK(edit_score(p, g) == edit_score(g, p));

    const std::size_t n = 2 + rng() % 3;
    const auto u = evaluate(upsample(p, n), upsample(g, n), {10, 25, 50, 75});
    CHECK(u.accuracy == doctest::Approx(r.accuracy));
    CHECK(u.edit == doctest::Approx(r.edit));
    for (std::size_t j = 0; j < r.f1.size(); ++j) CHECK(u.f1[j] == doctest::Approx(r.f1[j]));
  }
}

TEST_CASE("fixture pair matches the committed oracle output") {
  const auto dir = std::filesystem::path(RTHARE_TEST_DATA) / "metrics";
  const auto expected = nlohmann::json::parse(read_text_file(dir / "expected.json"));
  LabelSet labels;
  const auto r = evaluate_files(dir / "pred.txt", dir / "gt.txt", labels);
  CHECK(labels.size() == 5);
  CHECK(r.accuracy == doctest::Approx(expected["accuracy"].get<double>()).epsilon(1e-12));
  CHECK(r.edit == doctest::Approx(expected["edit"].get<double>()).epsilon(1e-12));
  CHECK(r.f1[0] == doctest::Approx(expected["f1"]["10"].get<double>()).epsilon(1e-12));
  CHECK(r.f1[1] == doctest::Approx(expected["f1"]["25"].get<double>()).epsilon(1e-12));
  CHECK(r.f1[2] == doctest::Approx(expected["f1"]["50"].get<double>()).epsilon(1e-12));

  LabelSet again;
  const auto self = evaluate_files(dir / "gt.txt", dir / "gt.txt", again);
  CHECK(self.accuracy == 100.0);
  CHECK(self.edit == 100.0);
  CHECK(self.f1[0] == 100.0);
}

TEST_CASE("label files") {
  LabelSet labels({"cut", "mix"});
  CHECK(labels.find("mix") == 1);
  CHECK(labels.find("x") == -1);
  CHECK_THROWS_AS(LabelSet({"a", "a"}), ConfigError);
  CHECK(parse_labels("cut\nmix\r\n mix \n", labels, "s") == LabelSequence{0, 1, 1});
  try {
    parse_labels("cut\npeel\n", labels, "f.txt");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("f.txt: line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_labels("", labels, "s"), ParseError);
  CHECK_THROWS_AS(parse_labels("cut\n\nmix\n", labels, "s"), ParseError);
  CHECK(parse_labels("peel\ncut\n", labels, "s", true) == LabelSequence{2, 0});
  CHECK(format_labels({0, 2}, labels) == "cut\npeel\n");

  const auto dir = rthare::test::temp_dir("labels");
  write_text_atomic(dir / "empty.txt", "");
  LabelSet any;
  CHECK_THROWS_AS(evaluate_files(dir / "empty.txt", dir / "empty.txt", any), ParseError);
  CHECK_THROWS_AS(load_labels(dir / "none.txt", any), IoError);
  write_text_atomic(dir / "a.txt", "x\nx\n");
  write_text_atomic(dir / "b.txt", "x\n");
  CHECK_THROWS_AS(evaluate_files(dir / "a.txt", dir / "b.txt", any), DimensionError);
}

TEST_CASE("report formats") {
  MetricsReport r{97.5, 80, {10, 25}, {90, 85.126}};
  CHECK(format_report_table(r) ==
        "metric     value(%)\naccuracy      97.50\nedit          80.00\nF1@10         90.00\nF1@25         85.13\n");
  CHECK(format_report_csv(r) == "accuracy,edit,f1@10,f1@25\n97.500000,80.000000,90.000000,85.126000\n");
}
