#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "transkim/skim.hpp"
#include "transkim/tasks.hpp"

namespace transkim {

// Per-example skim record. Only real tokens are listed (padding is dropped);
// prune_layer[i] in [1, L+1] and kept_per_layer[l-1] counts the tokens
// entering layer l. batch_len is the padded length of the batch the example
// was evaluated in.
struct TraceExample {
  std::size_t id = 0;
  std::vector<std::string> tokens;
  std::size_t true_len = 0;
  std::size_t batch_len = 0;
  std::vector<int> prune_layer;
  std::vector<std::size_t> kept_per_layer;
};

struct SkimTrace {
  std::string config_digest;
  std::vector<TraceExample> examples;
};

// Appends the examples of one evaluated batch. first_id numbers them.
void append_to_trace(SkimTrace& trace, const SkimState& state, const Batch& batch,
                     std::size_t first_id);

std::string trace_to_json(const SkimTrace& trace);
// Throws SchemaError whose message starts with the JSON path of the fault,
// e.g. "$.examples[3].prune_layer[7]: ...". n_layers > 0 enables the layer
// count and prune-layer range checks.
SkimTrace trace_from_json(const std::string& text, std::size_t n_layers = 0);
void write_trace(const std::string& path, const SkimTrace& trace);
SkimTrace read_trace(const std::string& path, std::size_t n_layers = 0);

// skim_recall: share of non-relevant tokens skimmed before the last layer
// finished (prune_layer <= L). keep_precision: share of relevant tokens that
// were never skimmed.
struct SkimQuality {
  double skim_recall = 0.0;
  double keep_precision = 0.0;
  std::size_t filler_tokens = 0;
  std::size_t relevant_tokens = 0;
};

// examples[i] must be the example behind trace.examples[i].
SkimQuality skim_quality(const SkimTrace& trace, std::span<const Example> examples,
                         std::size_t n_layers);

}  // namespace transkim
