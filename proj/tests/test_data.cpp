#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "rfspmd/data.hpp"
#include "rfspmd/error.hpp"

using namespace rfspmd;

namespace {

std::string row(char label, int value, int fields = 16) {
  std::string s(1, label);
  for (int i = 0; i < fields; ++i) s += "," + std::to_string(value);
  return s + "\n";
}

std::string error_of(const std::string& text) {
  try {
    parse_dataset(text, {}, "fixture.csv");
  } catch (const InvalidArgument& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("three-row letter fixture") {
  const Dataset ds = parse_dataset(row('A', 1) + row('B', 2) + row('A', 3));
  CHECK(ds.n_rows() == 3);
  CHECK(ds.n_features() == 16);
  CHECK(ds.n_classes() == 26);
  CHECK(ds.labels() == std::vector<ClassId>{0, 1, 0});
  CHECK(ds.at(1, 15) == 2.0);
  CHECK(ds.at(2, 0) == 3.0);
}

TEST_CASE("CRLF line endings and trailing newline are accepted") {
  const Dataset ds = parse_dataset("Z,1,2\r\nY,3,4\r\n", {2, 26});
  CHECK(ds.labels() == std::vector<ClassId>{25, 24});
  CHECK(ds.at(1, 1) == 4.0);
}

TEST_CASE("malformed rows name the line and field") {
  const std::string short_row = error_of(row('A', 1) + row('B', 2, 15));
  CHECK(short_row.find("fixture.csv:2") != std::string::npos);
  CHECK(short_row.find("found 16") != std::string::npos);

  const std::string bad_label = error_of(row('A', 1) + row('a', 1));
  CHECK(bad_label.find(":2 field 1") != std::string::npos);

  std::string bad_int = row('A', 1);
  bad_int += "B,1,2,3,4,x,6,7,8,9,10,11,12,13,14,15,16\n";
  const std::string not_int = error_of(bad_int);
  CHECK(not_int.find(":2 field 6") != std::string::npos);

  CHECK(error_of("AB" + row('A', 1).substr(1)).find("field 1") != std::string::npos);
  CHECK(error_of(row('A', 1) + "A,1.5,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16\n").find("field 2") !=
        std::string::npos);
  CHECK_THROWS_AS(parse_dataset(""), InvalidArgument);
}

TEST_CASE("missing file") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/letter-recognition.data"), InvalidArgument);
}

TEST_CASE("labels outside the configured class count are rejected") {
  CHECK_THROWS_AS(parse_dataset("A,1\nE,2\n", {1, 4}), InvalidArgument);
  CHECK_NOTHROW(parse_dataset("A,1\nD,2\n", {1, 4}));
}

TEST_CASE("dataset invariants") {
  CHECK_THROWS_AS(Dataset(2, 1, {1.0, 2.0}, {0}, 2), InvalidArgument);
  CHECK_THROWS_AS(Dataset(1, 1, {1.0}, {2}, 2), InvalidArgument);
  CHECK_THROWS_AS(Dataset(1, 1, {std::nan("")}, {0}, 2), InvalidArgument);
  CHECK_THROWS_AS(Dataset(0, 1, {}, {}, 2), InvalidArgument);
}

TEST_CASE("train_test_split examples") {
  auto stream = make_stream(1, {StreamPurpose::kSplit, 0});
  auto big = train_test_split(20000, 0.2, stream);
  CHECK(big.test_indices.size() == 4000);
  CHECK(big.train_indices.size() == 16000);

  auto small = train_test_split(10, 0.2, stream);
  CHECK(small.test_indices.size() == 2);
  CHECK(small.train_indices.size() == 8);

  auto none = train_test_split(10, 0.0, stream);
  CHECK(none.test_indices.empty());
  CHECK(none.train_indices.size() == 10);

  CHECK_THROWS_AS(train_test_split(10, 1.5, stream), InvalidArgument);
  CHECK_THROWS_AS(train_test_split(10, -0.1, stream), InvalidArgument);
}

TEST_CASE("split partition property over fuzzed sizes") {
  auto fuzz = make_stream(5, {StreamPurpose::kFuzz, 100});
  int differing = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + fuzz.rand_below(500);
    const double frac = fuzz.uniform();
    const auto s = train_test_split(n, frac, make_stream(trial, {StreamPurpose::kSplit, 0}));
    REQUIRE(s.test_indices.size() == static_cast<std::size_t>(std::llround(n * frac)));
    REQUIRE(std::is_sorted(s.test_indices.begin(), s.test_indices.end()));
    REQUIRE(std::is_sorted(s.train_indices.begin(), s.train_indices.end()));
    std::vector<std::size_t> all = s.train_indices;
    all.insert(all.end(), s.test_indices.begin(), s.test_indices.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < n; ++i) REQUIRE(all[i] == i);
    REQUIRE(all.size() == n);

    // Same stream key, same split.
    const auto again = train_test_split(n, frac, make_stream(trial, {StreamPurpose::kSplit, 0}));
    REQUIRE(again.test_indices == s.test_indices);
    if (trial < 100) {
      const auto other = train_test_split(100, 0.2, make_stream(1000 + trial, {StreamPurpose::kSplit, 0}));
      const auto base = train_test_split(100, 0.2, make_stream(2000 + trial, {StreamPurpose::kSplit, 0}));
      differing += other.test_indices != base.test_indices;
    }
  }
  CHECK(differing >= 1);
}

TEST_CASE("synth_dataset") {
  auto a = synth_dataset(100, 4, 3, make_stream(7, {StreamPurpose::kSynth, 0}));
  auto b = synth_dataset(100, 4, 3, make_stream(7, {StreamPurpose::kSynth, 0}));
  CHECK(a == b);
  auto c = synth_dataset(100, 4, 3, make_stream(8, {StreamPurpose::kSynth, 0}));
  CHECK_FALSE(a == c);

  auto tiny = synth_dataset(3, 1, 3, make_stream(1, {StreamPurpose::kSynth, 0}));
  std::set<ClassId> labels(tiny.labels().begin(), tiny.labels().end());
  CHECK(labels == std::set<ClassId>{0, 1, 2});

  // Every class present for larger n too.
  auto wide = synth_dataset(26, 2, 26, make_stream(2, {StreamPurpose::kSynth, 0}));
  CHECK(std::set<ClassId>(wide.labels().begin(), wide.labels().end()).size() == 26);

  CHECK_THROWS_AS(synth_dataset(2, 1, 3, make_stream(1, {StreamPurpose::kSynth, 0})), InvalidArgument);
  CHECK_THROWS_AS(synth_dataset(5, 0, 3, make_stream(1, {StreamPurpose::kSynth, 0})), InvalidArgument);
  CHECK_THROWS_AS(synth_dataset(5, 1, 1, make_stream(1, {StreamPurpose::kSynth, 0})), InvalidArgument);
}

TEST_CASE("CSV round trip over fuzzed synthetic datasets") {
  const auto dir = std::filesystem::temp_directory_path();
  auto fuzz = make_stream(3, {StreamPurpose::kFuzz, 200});
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 2 + fuzz.rand_below(25);
    const std::size_t n = c + fuzz.rand_below(200);
    const std::size_t p = 1 + fuzz.rand_below(20);
    const Dataset ds = synth_dataset(n, p, c, make_stream(trial, {StreamPurpose::kSynth, 0}));
    const auto path = dir / ("rfspmd-roundtrip-" + std::to_string(trial) + ".csv");
    write_dataset(ds, path);
    const Dataset back = load_dataset(path, {p, c});
    std::filesystem::remove(path);
    REQUIRE(back == ds);
  }
}

TEST_CASE("inferred feature count") {
  const Dataset ds = parse_dataset("A,1,2,3\nB,4,5,6\n", {std::nullopt, 26});
  CHECK(ds.n_features() == 3);
  CHECK_THROWS_AS(parse_dataset("A,1,2,3\nB,4,5\n", {std::nullopt, 26}), InvalidArgument);
}
