#include "transkim/tasks.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "transkim/errors.hpp"
#include "transkim/rng.hpp"

namespace transkim {

std::string to_string(PaddingPolicy p) {
  switch (p) {
    case PaddingPolicy::kSequence: return "sequence";
    case PaddingPolicy::kBatch: return "batch";
    case PaddingPolicy::kNone: return "none";
  }
  return "?";
}

PaddingPolicy parse_policy(const std::string& s) {
  if (s == "sequence") return PaddingPolicy::kSequence;
  if (s == "batch") return PaddingPolicy::kBatch;
  if (s == "none") return PaddingPolicy::kNone;
  throw ConfigError("unknown padding policy '" + s + "' (expected sequence|batch|none)");
}

std::string token_string(int id) {
  switch (id) {
    case kPadId: return "[PAD]";
    case kClsId: return "[CLS]";
    case kSepId: return "[SEP]";
    case kTriggerId: return "[TRG]";
    default: break;
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, id < kSignalEnd ? "s%02d" : "w%d", id);
  return buf;
}

namespace {

void check_vocab(int vocab_size) {
  if (vocab_size <= kSignalEnd) {
    throw ConfigError("vocab_size " + std::to_string(vocab_size) +
                      " leaves no filler ids (must exceed " + std::to_string(kSignalEnd) + ")");
  }
}

void check_range(int lo, int hi, const char* what) {
  if (lo < 1 || hi < lo) {
    throw ConfigError(std::string(what) + " range [" + std::to_string(lo) + "," +
                      std::to_string(hi) + "] is empty or non-positive");
  }
}

}  // namespace

std::vector<Example> gen_needle(int n_examples, int seq_len_min, int seq_len_max,
                                int n_signal, int vocab_size, std::uint64_t seed) {
  check_vocab(vocab_size);
  check_range(seq_len_min, seq_len_max, "seq_len");
  if (n_signal < 1 || n_signal > seq_len_min) {
    throw ConfigError("n_signal " + std::to_string(n_signal) + " must lie in [1, seq_len_min]");
  }
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(n_examples));
  for (int e = 0; e < n_examples; ++e) {
    const int body = rng.uniform_int(seq_len_min, seq_len_max);
    Example ex;
    ex.true_len = body + 1;
    ex.token_ids.assign(static_cast<std::size_t>(ex.true_len), 0);
    ex.relevant.assign(static_cast<std::size_t>(ex.true_len), false);
    ex.token_ids[0] = kClsId;
    ex.relevant[0] = true;
    for (int i = 1; i <= body; ++i) ex.token_ids[i] = rng.uniform_int(kSignalEnd, vocab_size - 1);
    std::vector<int> slots(static_cast<std::size_t>(body));
    std::iota(slots.begin(), slots.end(), 1);
    std::shuffle(slots.begin(), slots.end(), rng.engine());
    int odd = 0;
    for (int s = 0; s < n_signal; ++s) {
      const int id = rng.uniform_int(kSignalBegin, kSignalEnd - 1);
      ex.token_ids[slots[s]] = id;
      ex.relevant[slots[s]] = true;
      odd += id % 2;
    }
    ex.label = 2 * odd > n_signal ? 1 : 0;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> gen_span(int n_examples, int seq_len_min, int seq_len_max,
                              int span_len_min, int span_len_max, int vocab_size,
                              std::uint64_t seed) {
  check_vocab(vocab_size);
  check_range(seq_len_min, seq_len_max, "seq_len");
  check_range(span_len_min, span_len_max, "span_len");
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(n_examples));
  for (int e = 0; e < n_examples; ++e) {
    int body = 0;
    int span = 0;
    int tries = 0;
    for (;; ++tries) {
      if (tries == 100) {
        throw ConfigError("gen_span: span of length in [" + std::to_string(span_len_min) +
                          "," + std::to_string(span_len_max) +
                          "] plus trigger does not fit a body of length in [" +
                          std::to_string(seq_len_min) + "," + std::to_string(seq_len_max) +
                          "] after 100 retries");
      }
      body = rng.uniform_int(seq_len_min, seq_len_max);
      span = rng.uniform_int(span_len_min, span_len_max);
      if (span + 1 <= body) break;
    }
    Example ex;
    ex.true_len = body + 1;
    const auto n = static_cast<std::size_t>(ex.true_len);
    ex.token_ids.assign(n, 0);
    ex.token_labels.assign(n, 0);
    ex.relevant.assign(n, false);
    ex.token_ids[0] = kClsId;
    for (std::size_t i = 1; i < n; ++i) ex.token_ids[i] = rng.uniform_int(kSignalEnd, vocab_size - 1);
    // trigger at body position p (sequence index p + 1), span right after it
    const int p = rng.uniform_int(0, body - 1 - span);
    const auto trig = static_cast<std::size_t>(p + 1);
    ex.token_ids[trig] = kTriggerId;
    ex.relevant[trig] = true;
    for (int s = 1; s <= span; ++s) {
      const auto i = trig + static_cast<std::size_t>(s);
      ex.token_ids[i] = rng.uniform_int(kSignalBegin, kSignalEnd - 1);
      ex.token_labels[i] = 1;
      ex.relevant[i] = true;
    }
    // distractor signal ids strictly before the trigger
    const int distractors = std::min(p, rng.uniform_int(0, 2));
    for (int k = 0; k < distractors; ++k) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(1, p));
      ex.token_ids[i] = rng.uniform_int(kSignalBegin, kSignalEnd - 1);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

Batch pad_batch(std::span<const Example> examples, PaddingPolicy policy, int max_len) {
  if (examples.empty()) throw ContractError("pad_batch: empty example list");
  if (policy == PaddingPolicy::kNone && examples.size() != 1) {
    throw ContractError("pad_batch: policy none requires batch size 1, got " +
                        std::to_string(examples.size()));
  }
  std::size_t longest = 0;
  for (const auto& ex : examples) longest = std::max(longest, static_cast<std::size_t>(ex.true_len));
  std::size_t seq = longest;
  if (policy == PaddingPolicy::kSequence) {
    if (longest > static_cast<std::size_t>(max_len)) {
      throw LengthError("pad_batch: example of length " + std::to_string(longest) +
                        " exceeds max_len " + std::to_string(max_len));
    }
    seq = static_cast<std::size_t>(max_len);
  }
  Batch b;
  b.batch = examples.size();
  b.seq = seq;
  b.policy = policy;
  b.token_ids.assign(b.batch * seq, kPadId);
  b.pad_mask.assign(b.batch * seq, 0);
  const bool token_task = examples[0].is_token_task();
  if (token_task) b.token_labels.assign(b.batch * seq, -1);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& ex = examples[i];
    const auto len = static_cast<std::size_t>(ex.true_len);
    if (ex.token_ids.size() != len) {
      throw ContractError("pad_batch: example " + std::to_string(i) +
                          " true_len disagrees with its token count");
    }
    std::copy(ex.token_ids.begin(), ex.token_ids.end(), b.token_ids.begin() + i * seq);
    std::fill_n(b.pad_mask.begin() + static_cast<std::ptrdiff_t>(i * seq), len, 1);
    if (token_task) {
      std::copy(ex.token_labels.begin(), ex.token_labels.end(), b.token_labels.begin() + i * seq);
    }
    b.labels.push_back(ex.label);
    b.true_lens.push_back(len);
  }
  return b;
}

void write_dataset(const std::string& path, std::span<const Example> examples) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write dataset " + path);
  for (const auto& ex : examples) {
    nlohmann::json j;
    j["tokens"] = ex.token_ids;
    if (ex.is_token_task()) {
      j["label"] = ex.token_labels;
    } else {
      j["label"] = ex.label;
    }
    j["relevant"] = ex.relevant;
    os << j.dump() << '\n';
  }
}

std::vector<Example> read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw SchemaError("cannot read dataset " + path);
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError(where + ": " + e.what());
    }
    Example ex;
    try {
      ex.token_ids = j.at("tokens").get<std::vector<int>>();
      const auto& label = j.at("label");
      if (label.is_array()) {
        ex.token_labels = label.get<std::vector<int>>();
      } else {
        ex.label = label.get<int>();
      }
      ex.relevant = j.at("relevant").get<std::vector<bool>>();
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(where + ": " + e.what());
    }
    ex.true_len = static_cast<int>(ex.token_ids.size());
    if (ex.relevant.size() != ex.token_ids.size() ||
        (ex.is_token_task() && ex.token_labels.size() != ex.token_ids.size())) {
      throw SchemaError(where + ": tokens, label and relevant lengths differ");
    }
    if (ex.token_ids.empty()) throw SchemaError(where + ": empty token list");
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace transkim
