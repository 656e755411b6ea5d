#pragma once

// Instrumented FLOP totals for a set of examples, to hold against the
// closed-form counter in count_flops.

#include <cstdint>
#include <span>
#include <vector>

#include "transkim/flops.hpp"
#include "transkim/flops_report.hpp"
#include "transkim/runtime.hpp"
#include "transkim/trace.hpp"

namespace transkim::testing {

struct FlopsComparison {
  FlopsReport analytic;
  std::int64_t measured_baseline = 0;
  std::int64_t measured_skimmed = 0;
  std::int64_t measured_predictor = 0;
};

// Runs a skim-free encoder stack at length n and reports what the substrate
// counted.
template <typename T>
std::int64_t measure_plain_stack(const Model<T>& model, std::size_t n) {
  const ModelConfig& cfg = model.config();
  auto h = Tensor<T>::zeros({1, n, static_cast<std::size_t>(cfg.d_model)});
  for (std::size_t i = 0; i < h.numel(); ++i) h[i] = static_cast<T>((i % 7) * 0.1);
  Graph<T> g(false);
  flops::FlopScope scope;
  for (int l = 0; l < cfg.n_layers; ++l) {
    h = encoder_layer_forward(g, h, AttentionMask<T>::none(), model.layers[l], cfg, l + 1);
  }
  return scope.total();
}

template <typename T>
FlopsComparison compare_flops(const Model<T>& model, std::span<const Example> examples,
                              PaddingPolicy policy, std::size_t batch_size) {
  const ModelConfig& cfg = model.config();
  if (policy == PaddingPolicy::kNone) batch_size = 1;
  FlopsComparison out;
  SkimTrace trace;
  trace.config_digest = cfg.digest();
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const auto chunk = examples.subspan(start, std::min(batch_size, examples.size() - start));
    const Batch batch = pad_batch(chunk, policy, cfg.max_len);
    const auto r = forward_infer(model, batch);
    for (std::size_t b = 0; b < batch.batch; ++b) {
      out.measured_skimmed += r.example_flops[b];
      out.measured_predictor += r.example_predictor_flops[b];
      const std::size_t n = policy == PaddingPolicy::kNone ? batch.true_lens[b] : batch.seq;
      out.measured_baseline += measure_plain_stack(model, n);
    }
    append_to_trace(trace, r.skim_state, batch, start);
  }
  out.analytic = count_flops(cfg, trace, policy);
  return out;
}

}  // namespace transkim::testing
