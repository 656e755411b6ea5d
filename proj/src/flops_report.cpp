#include "transkim/flops_report.hpp"

#include <numeric>

#include "transkim/errors.hpp"
#include "transkim/flops.hpp"

namespace transkim {

LayerFlops layer_flops(const ModelConfig& cfg, std::int64_t n) {
  const std::int64_t d = cfg.d_model;
  const std::int64_t f = cfg.d_ffn;
  const std::int64_t h = cfg.n_heads;
  LayerFlops c;
  c.qkv = 3 * (2 * n * d * d + n * d);
  c.scores = 2 * n * n * d + h * n * n;
  c.softmax = flops::kSoftmaxPerElement * h * n * n;
  c.context = 2 * n * n * d;
  c.out_proj = 2 * n * d * d + n * d;
  c.residual = 2 * n * d;
  c.layer_norm = 2 * flops::kLayerNormPerElement * n * d;
  c.ffn = (2 * n * d * f + n * f) + (2 * n * f * d + n * d);
  c.gelu = flops::kGeluPerElement * n * f;
  return c;
}

PredictorFlops predictor_flops(const ModelConfig& cfg, std::int64_t n) {
  const std::int64_t d = cfg.d_model;
  PredictorFlops c;
  c.fc1 = 2 * n * d * d + n * d;
  c.layer_norm = flops::kLayerNormPerElement * n * d;
  c.gelu = flops::kGeluPerElement * n * d;
  c.fc2 = 2 * n * d * 2 + 2 * n;
  return c;
}

FlopsReport count_flops(const ModelConfig& cfg, const SkimTrace& trace, PaddingPolicy policy) {
  const auto L = static_cast<std::size_t>(cfg.n_layers);
  FlopsReport r;
  r.policy = policy;
  r.per_layer_kept.assign(L, 0);
  for (std::size_t i = 0; i < trace.examples.size(); ++i) {
    const auto& ex = trace.examples[i];
    if (ex.kept_per_layer.size() != L) {
      throw SchemaError("$.examples[" + std::to_string(i) + "].kept_per_layer: " +
                        std::to_string(ex.kept_per_layer.size()) + " layers, config has " +
                        std::to_string(L));
    }
    std::int64_t padded = 0;
    switch (policy) {
      case PaddingPolicy::kSequence: padded = cfg.max_len; break;
      case PaddingPolicy::kBatch: padded = static_cast<std::int64_t>(ex.batch_len); break;
      case PaddingPolicy::kNone: padded = static_cast<std::int64_t>(ex.true_len); break;
    }
    r.baseline_flops += static_cast<std::int64_t>(L) * layer_flops(cfg, padded).total();
    auto incoming = static_cast<std::int64_t>(ex.true_len);
    for (std::size_t l = 0; l < L; ++l) {
      const auto kept = static_cast<std::int64_t>(ex.kept_per_layer[l]);
      const std::int64_t pred = predictor_flops(cfg, incoming).total();
      r.predictor_overhead_flops += pred;
      r.skimmed_flops += pred + layer_flops(cfg, kept).total();
      r.per_layer_kept[l] += kept;
      incoming = kept;
    }
  }
  r.speedup = r.skimmed_flops > 0
                  ? static_cast<double>(r.baseline_flops) / static_cast<double>(r.skimmed_flops)
                  : 0.0;
  return r;
}

std::vector<double> layerwise_curve(std::span<const SkimTrace> traces) {
  if (traces.empty()) throw EmptyInputError("layerwise_curve: no traces");
  std::size_t L = 0;
  bool have_layers = false;
  std::vector<double> sum;
  std::size_t count = 0;
  for (const auto& trace : traces) {
    for (const auto& ex : trace.examples) {
      if (!have_layers) {
        L = ex.kept_per_layer.size();
        sum.assign(L + 1, 0.0);
        have_layers = true;
      } else if (ex.kept_per_layer.size() != L) {
        throw SchemaError("layerwise_curve: traces disagree on the layer count");
      }
      if (ex.true_len == 0) throw EmptyInputError("layerwise_curve: example with no tokens");
      sum[0] += 1.0;
      for (std::size_t l = 0; l < L; ++l) {
        sum[l + 1] += static_cast<double>(ex.kept_per_layer[l]) / static_cast<double>(ex.true_len);
      }
      ++count;
    }
  }
  if (count == 0) throw EmptyInputError("layerwise_curve: traces hold no examples");
  for (auto& v : sum) v /= static_cast<double>(count);
  return sum;
}

double curve_area(std::span<const double> curve) {
  if (curve.empty()) return 0.0;
  return std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(curve.size());
}

}  // namespace transkim
