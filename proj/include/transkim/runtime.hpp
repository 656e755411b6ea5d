#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "transkim/model.hpp"
#include "transkim/tasks.hpp"

namespace transkim {

// Where skim decisions come from.
//   kGumbel  straight-through Gumbel-softmax sample (training)
//   kArgmax  noiseless argmax of the predictor logits, ties keep
//   kSoft    relaxed: the noiseless soft keep probability is used as the mask
//            value itself (smooth surrogate for gradient checks)
//   kForced  supplied prune schedule, predictors bypassed
enum class DecisionSource { kGumbel, kArgmax, kSoft, kForced };

struct ForwardOptions {
  DecisionSource decisions = DecisionSource::kGumbel;
  // false gives the skim-free encoder: no predictors, only padding is masked.
  bool skim_enabled = true;
  // kForced only: prune layer per [B*N] position, values in [1, L+1].
  std::vector<int> forced_prune_layer;
  // Gumbel noise per layer ([B,N,2] each) instead of rng draws.
  std::vector<Tensor<double>> noise;

  static ForwardOptions with(DecisionSource d) {
    ForwardOptions o;
    o.decisions = d;
    return o;
  }
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;     // [B,C] or [B,N,C]
  Tensor<T> assembled;  // [B,N,d]
  SkimState skim_state;
  Tensor<T> loss_downstream;
  Tensor<T> loss_skim;
  Tensor<T> loss_total;
  // Hidden state entering each layer, index L is the final output.
  std::vector<Tensor<T>> layer_inputs;
  // Soft keep probability per layer ([B,N]), as seen by the decision.
  std::vector<Tensor<T>> soft_keep;
};

// Full-length masked pass. Every position goes through every layer; skimmed
// keys are hidden from attention through the running cumulative mask, padding
// is skimmed before the first predictor decides. Losses are built on `g`.
template <typename T>
ForwardResult<T> forward_train(Graph<T>& g, const Model<T>& model, const Batch& batch,
                               Rng* rng, const ForwardOptions& opts = {});

template <typename T>
struct InferResult {
  Tensor<T> logits;
  Tensor<T> assembled;  // [B,N,d], padding rows zero
  SkimState skim_state;
  // kept[b][l-1] = tokens entering layer l of example b.
  std::vector<std::vector<std::size_t>> kept;
  // Encoder-stack FLOPs per example (predictors included, embedding and head
  // excluded), as measured by the instrumented substrate.
  std::vector<std::int64_t> example_flops;
  std::vector<std::int64_t> example_predictor_flops;
};

// Gathered pass. Each example is processed alone with padding removed; at
// every layer the skimmed rows are parked and only survivors are computed.
// opts.decisions must be kArgmax or kForced.
template <typename T>
InferResult<T> forward_infer(const Model<T>& model, const Batch& batch,
                             const ForwardOptions& opts = ForwardOptions::with(DecisionSource::kArgmax));

struct EquivalenceResult {
  double max_abs_diff = 0.0;         // assembled outputs over valid positions
  double max_abs_logit_diff = 0.0;
  std::size_t tokens_compared = 0;
};

// Runs the gathered pass (argmax or forced decisions) and then the masked pass
// under the same prune schedule, and compares them.
template <typename T>
EquivalenceResult check_train_infer_equivalence(
    const Model<T>& model, const Batch& batch,
    const ForwardOptions& opts = ForwardOptions::with(DecisionSource::kArgmax));

// Fraction of correct predictions: per example for the sequence head, per
// valid labelled token for the token head.
template <typename T>
double accuracy(const Tensor<T>& logits, const Batch& batch);

}  // namespace transkim
