#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace transkim {

// Reserved ids. Ids in [kSignalBegin, kSignalEnd) form the signal
// sub-vocabulary; everything from kSignalEnd up is filler.
inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kSepId = 2;
inline constexpr int kTriggerId = 3;
inline constexpr int kSignalBegin = 4;
inline constexpr int kSignalEnd = 20;

enum class TaskKind { kNeedle, kSpan };
enum class PaddingPolicy { kSequence, kBatch, kNone };

std::string to_string(PaddingPolicy p);
// Throws ConfigError on an unknown name.
PaddingPolicy parse_policy(const std::string& s);

// Human-readable token: [PAD] [CLS] [SEP] [TRG], s04..s19, w20...
std::string token_string(int id);

// A sequence example starts with [CLS]. For the needle task `label` is the
// class; for the span task `token_labels` holds per-position tags (1 inside
// the span, 0 elsewhere) and `label` is unused.
struct Example {
  std::vector<int> token_ids;
  int label = 0;
  std::vector<int> token_labels;
  std::vector<bool> relevant;
  int true_len = 0;

  bool is_token_task() const { return !token_labels.empty(); }
};

struct Batch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  PaddingPolicy policy = PaddingPolicy::kBatch;
  std::vector<int> token_ids;           // [B*N]
  std::vector<int> labels;              // [B]
  std::vector<int> token_labels;        // [B*N], -1 at padding (token task only)
  std::vector<std::uint8_t> pad_mask;   // [B*N], 1 for real tokens
  std::vector<std::size_t> true_lens;   // [B]

  bool is_token_task() const { return !token_labels.empty(); }
};

// Needle-in-filler sequence classification. Body length is drawn from
// [seq_len_min, seq_len_max] (the [CLS] token is extra); n_signal positions
// carry signal ids and the label is 1 iff most signal ids are odd.
std::vector<Example> gen_needle(int n_examples, int seq_len_min, int seq_len_max,
                                int n_signal, int vocab_size, std::uint64_t seed);

// Span tagging. A trigger token is followed by a run of signal ids (the span);
// signal-id distractors may appear before the trigger. Tags mark the span.
std::vector<Example> gen_span(int n_examples, int seq_len_min, int seq_len_max,
                              int span_len_min, int span_len_max, int vocab_size,
                              std::uint64_t seed);

// sequence: pad to max_len; batch: pad to the longest example; none: exactly
// one example, no padding.
Batch pad_batch(std::span<const Example> examples, PaddingPolicy policy, int max_len);

// Newline-delimited JSON, one {"tokens":[...],"label":...,"relevant":[...]}
// per line. label is an int (needle) or an int array (span).
void write_dataset(const std::string& path, std::span<const Example> examples);
std::vector<Example> read_dataset(const std::string& path);

}  // namespace transkim
