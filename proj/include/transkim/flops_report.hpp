#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "transkim/config.hpp"
#include "transkim/tasks.hpp"
#include "transkim/trace.hpp"

namespace transkim {

// Closed-form costs (multiply-add = 2) of one encoder layer or one skim
// predictor applied to n tokens. The terms mirror the instrumented substrate
// one for one; see the itemized breakdowns below.
struct LayerFlops {
  std::int64_t qkv = 0;        // 3 (2 n d^2 + n d)
  std::int64_t scores = 0;     // 2 n^2 d + H n^2 (scale)
  std::int64_t softmax = 0;    // 5 H n^2
  std::int64_t context = 0;    // 2 n^2 d
  std::int64_t out_proj = 0;   // 2 n d^2 + n d
  std::int64_t residual = 0;   // 2 n d
  std::int64_t layer_norm = 0; // 2 * 7 n d
  std::int64_t ffn = 0;        // 4 n d d_ffn + n d_ffn + n d
  std::int64_t gelu = 0;       // 8 n d_ffn

  std::int64_t total() const {
    return qkv + scores + softmax + context + out_proj + residual + layer_norm + ffn + gelu;
  }
};

struct PredictorFlops {
  std::int64_t fc1 = 0;         // 2 n d^2 + n d
  std::int64_t layer_norm = 0;  // 7 n d
  std::int64_t gelu = 0;        // 8 n d
  std::int64_t fc2 = 0;         // 4 n d + 2 n

  std::int64_t total() const { return fc1 + layer_norm + gelu + fc2; }
};

LayerFlops layer_flops(const ModelConfig& cfg, std::int64_t n);
PredictorFlops predictor_flops(const ModelConfig& cfg, std::int64_t n);

// Aggregate over every example of a trace. The baseline runs a skim-free
// encoder on the padded length the policy implies (sequence: max_len,
// batch: batch_len, none: true_len) at every layer. The skimmed model drops
// padding for free, runs predictor l on the tokens entering layer l - 1
// (true_len for l = 1) and layer l on kept_per_layer[l-1] tokens.
struct FlopsReport {
  PaddingPolicy policy = PaddingPolicy::kNone;
  std::int64_t baseline_flops = 0;
  std::int64_t skimmed_flops = 0;  // includes predictor_overhead_flops
  std::int64_t predictor_overhead_flops = 0;
  double speedup = 0.0;
  std::vector<std::int64_t> per_layer_kept;  // summed over examples
};

// Throws SchemaError when a record's layer count differs from the config.
FlopsReport count_flops(const ModelConfig& cfg, const SkimTrace& trace, PaddingPolicy policy);

// Mean fraction of real tokens alive entering each layer; entry 0 is the
// embedding output (always 1). L + 1 entries.
std::vector<double> layerwise_curve(std::span<const SkimTrace> traces);
// Mean of the curve entries.
double curve_area(std::span<const double> curve);

}  // namespace transkim
