#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "transkim/errors.hpp"
#include "transkim/tasks.hpp"

using namespace transkim;

namespace {

bool is_signal(int id) { return id >= kSignalBegin && id < kSignalEnd; }

// Label from the tokens alone: majority parity of the signal ids.
int needle_label(const Example& e) {
  int odd = 0, total = 0;
  for (const int id : e.token_ids) {
    if (is_signal(id)) {
      ++total;
      odd += id % 2;
    }
  }
  return 2 * odd > total ? 1 : 0;
}

// Tags from the tokens alone: the run of signal ids right after the trigger.
std::vector<int> span_tags(const Example& e) {
  std::vector<int> tags(e.token_ids.size(), 0);
  std::size_t t = 0;
  while (e.token_ids[t] != kTriggerId) ++t;
  for (std::size_t i = t + 1; i < tags.size() && is_signal(e.token_ids[i]); ++i) tags[i] = 1;
  return tags;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("needle labels match an independent scorer") {
  const auto data = gen_needle(10000, 16, 48, 3, 1024, 42);
  int mismatches = 0;
  for (const auto& e : data) {
    mismatches += needle_label(e) != e.label;
    CHECK(e.token_ids[0] == kClsId);
    CHECK(e.true_len == static_cast<int>(e.token_ids.size()));
    CHECK(e.relevant.size() == e.token_ids.size());
    std::size_t relevant = 0;
    for (std::size_t i = 0; i < e.token_ids.size(); ++i) {
      const bool want = i == 0 || is_signal(e.token_ids[i]);
      relevant += e.relevant[i];
      if (e.relevant[i] != want) ++mismatches;
    }
    CHECK(relevant == 4);
  }
  CHECK(mismatches == 0);
}

TEST_CASE("needle generator boundaries and determinism") {
  const auto all = gen_needle(20, 5, 5, 5, 64, 1);
  for (const auto& e : all) {
    for (const bool r : e.relevant) CHECK(r);
  }
  const auto a = gen_needle(50, 4, 9, 2, 64, 7);
  const auto b = gen_needle(50, 4, 9, 2, 64, 7);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].token_ids == b[i].token_ids);

  CHECK_THROWS_AS(gen_needle(1, 4, 9, 2, 20, 7), ConfigError);
  CHECK_THROWS_AS(gen_needle(1, 4, 9, 5, 64, 7), ConfigError);
}

TEST_CASE("span tags match an independent scorer") {
  const auto data = gen_span(10000, 8, 32, 1, 4, 1024, 42);
  int mismatches = 0;
  for (const auto& e : data) {
    mismatches += span_tags(e) != e.token_labels;
    for (std::size_t i = 0; i < e.token_ids.size(); ++i) {
      const bool want = e.token_ids[i] == kTriggerId || e.token_labels[i] == 1;
      if (e.relevant[i] != want) ++mismatches;
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("span boundaries") {
  // Body of 5: trigger first, the span fills the remaining 4 positions.
  for (const auto& e : gen_span(10, 5, 5, 4, 4, 64, 3)) {
    CHECK(e.token_labels == std::vector<int>{0, 0, 1, 1, 1, 1});
  }
  for (const auto& e : gen_span(50, 6, 12, 1, 1, 64, 4)) {
    int inside = 0;
    for (const int t : e.token_labels) inside += t;
    CHECK(inside == 1);
  }
  CHECK_THROWS_AS(gen_span(1, 4, 4, 4, 4, 64, 1), ConfigError);
}

TEST_CASE("padding policies") {
  std::vector<Example> ex(2);
  ex[0].token_ids = {1, 30, 31};
  ex[0].true_len = 3;
  ex[1].token_ids = {1, 30, 31, 32, 33};
  ex[1].true_len = 5;
  for (auto& e : ex) {
    e.relevant.assign(e.token_ids.size(), false);
  }
  const auto b = pad_batch(ex, PaddingPolicy::kBatch, 8);
  CHECK(b.seq == 5);
  CHECK(b.pad_mask == std::vector<std::uint8_t>{1, 1, 1, 0, 0, 1, 1, 1, 1, 1});
  CHECK(b.token_ids[3] == kPadId);
  CHECK(b.true_lens == std::vector<std::size_t>{3, 5});

  CHECK(pad_batch(ex, PaddingPolicy::kSequence, 8).seq == 8);
  CHECK_THROWS_AS(pad_batch(ex, PaddingPolicy::kNone, 8), ContractError);
  CHECK_THROWS_AS(pad_batch(ex, PaddingPolicy::kSequence, 4), LengthError);
  CHECK_THROWS_AS(pad_batch(std::span<const Example>{}, PaddingPolicy::kBatch, 8), ContractError);

  const auto one = pad_batch(std::span<const Example>(ex.data(), 1), PaddingPolicy::kNone, 8);
  CHECK(one.seq == 3);

  CHECK(parse_policy("none") == PaddingPolicy::kNone);
  CHECK_THROWS_AS(parse_policy("ragged"), ConfigError);
}

TEST_CASE("token strings") {
  CHECK(token_string(kPadId) == "[PAD]");
  CHECK(token_string(kClsId) == "[CLS]");
  CHECK(token_string(kTriggerId) == "[TRG]");
  CHECK(token_string(5) == "s05");
  CHECK(token_string(123) == "w123");
}

TEST_CASE("dataset files round trip and report the bad line") {
  const auto needle = gen_needle(5, 4, 9, 2, 64, 11);
  const auto span = gen_span(5, 6, 12, 1, 3, 64, 12);
  const auto p1 = temp_path("transkim_needle.jsonl");
  const auto p2 = temp_path("transkim_span.jsonl");
  write_dataset(p1, needle);
  write_dataset(p2, span);
  const auto n2 = read_dataset(p1);
  const auto s2 = read_dataset(p2);
  REQUIRE(n2.size() == needle.size());
  for (std::size_t i = 0; i < needle.size(); ++i) {
    CHECK(n2[i].token_ids == needle[i].token_ids);
    CHECK(n2[i].label == needle[i].label);
    CHECK(n2[i].relevant == needle[i].relevant);
    CHECK(s2[i].token_labels == span[i].token_labels);
  }

  const auto bad = temp_path("transkim_bad.jsonl");
  {
    std::ofstream os(bad);
    os << R"({"tokens":[1,30],"label":0,"relevant":[true,false]})" << '\n'
       << R"({"tokens":[1,30],"label":"x"})" << '\n';
  }
  try {
    read_dataset(bad);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find(bad + ":2") != std::string::npos);
  }
  std::remove(p1.c_str());
  std::remove(p2.c_str());
  std::remove(bad.c_str());
}
