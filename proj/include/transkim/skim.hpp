#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "transkim/encoder.hpp"

namespace transkim {

// Per-layer skim predictor: Linear(d->d) -> LayerNorm -> GeLU -> Linear(d->2).
// Output channel 1 is "keep", channel 0 is "skim".
template <typename T>
struct SkimPredictorParams {
  Linear<T> fc1;
  LayerNormParams<T> ln;
  Linear<T> fc2;
};

inline constexpr std::size_t kSkimChannel = 0;
inline constexpr std::size_t kKeepChannel = 1;

// Skim decisions of one batch. Layers are 1-based in the public vocabulary:
// entry `l - 1` of a per-layer array refers to encoder layer l.
//
//   raw_decisions[l-1][b][n]    predictor output of layer l (1 keep, 0 skim)
//   cumulative_mask[l-1][b][n]  1 iff the token is processed by layer l
//   prune_layer[b][n]           first layer the token does not enter;
//                               n_layers + 1 when it is never skimmed
//   soft_probs[l-1][b][n]       keep probability behind the decision
struct SkimState {
  std::size_t n_layers = 0;
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::uint8_t> raw_decisions;
  std::vector<std::uint8_t> cumulative_mask;
  std::vector<int> prune_layer;
  std::vector<double> soft_probs;

  std::size_t index(std::size_t layer0, std::size_t b, std::size_t n) const {
    return (layer0 * batch + b) * seq + n;
  }
  bool alive(std::size_t layer, std::size_t b, std::size_t n) const {
    return cumulative_mask[index(layer - 1, b, n)] != 0;
  }

  // Fills prune_layer from cumulative_mask.
  void derive_prune_layers();
  // Throws InvariantError on a non-monotone mask, a prune_layer that
  // disagrees with the mask, or a dropped forced position.
  void check(std::span<const std::size_t> forced = {},
             std::span<const std::size_t> valid_lens = {}) const;

  // Builds a consistent state from prune layers alone ([B*N], values in
  // [1, L+1]); raw decisions are the per-layer transitions.
  static SkimState from_prune_layers(std::size_t n_layers, std::size_t batch,
                                     std::size_t seq, std::vector<int> prune_layer);
};

template <typename T>
SkimPredictorParams<T> make_skim_predictor(const ModelConfig& cfg, Rng& rng);

// Unbalanced initialization: every weight ~ N(0, sigma), last-layer bias
// keep ~ N(+mu0, sigma), skim ~ N(-mu0, sigma).
template <typename T>
void init_unbalanced(SkimPredictorParams<T>& p, double mu0, double sigma, Rng& rng);

// Per-position MLP over [B,N,d]; returns [B,N,2] logits.
template <typename T>
Tensor<T> skim_predict(Graph<T>& g, const Tensor<T>& h, const SkimPredictorParams<T>& p,
                       T ln_eps);

enum class DecisionMode { kTrain, kInfer };

template <typename T>
struct Decision {
  // Binary keep decision [B,N]. In train mode its gradient flows to soft_keep
  // (straight-through); in infer mode it is a constant.
  Tensor<T> hard;
  // softmax((log_softmax(pi) + g) / tau)[keep], g = 0 in infer mode.
  Tensor<T> soft_keep;
};

// Train mode draws g ~ Gumbel(0,1) per logit from rng unless `noise` ([B,N,2])
// is given. Infer mode uses no noise and argmax(pi). Ties break toward keep.
template <typename T>
Decision<T> gumbel_softmax_decision(Graph<T>& g, const Tensor<T>& logits, T tau,
                                    Rng* rng, DecisionMode mode,
                                    const Tensor<T>* noise = nullptr);

// out = prev * decision, then forced positions set to 1. Positions at or past
// valid_lens[b] are never forced (empty valid_lens means all valid).
// Differentiable in prev and decision.
template <typename T>
Tensor<T> accumulate_mask(Graph<T>& g, const Tensor<T>& prev, const Tensor<T>& decision,
                          std::span<const std::size_t> forced,
                          std::span<const std::size_t> valid_lens = {});

// [B,N] keep mask -> [B,N,N]. Additive: 0 for kept key columns, -inf for
// skimmed ones. Multiplicative: the column mask itself, applied after softmax.
template <typename T>
Tensor<T> build_skim_attention_bias(const Tensor<T>& mask, MaskMode mode);

template <typename T>
AttentionMask<T> attention_mask_from_bias(const Tensor<T>& bias, MaskMode mode);

// layer_inputs[i] ([B,N,d]) is the state entering layer i+1; layer_inputs[L]
// is the final output. Position (b,n) takes layer_inputs[prune_layer - 1].
template <typename T>
Tensor<T> assemble_forwarded_output(std::span<const Tensor<T>> layer_inputs,
                                    const SkimState& state);

// Differentiable counterpart used by the full-length pass. cumulative[l-1] is
// the [B,N] mask entering layer l; the weight of layer_inputs[i] is
// cum[i] - cum[i+1] with cum[0] = 1, and the final output takes cum[L].
template <typename T>
Tensor<T> assemble_forwarded_output(Graph<T>& g, std::span<const Tensor<T>> layer_inputs,
                                    std::span<const Tensor<T>> cumulative);

// Mean over layers of the per-example kept ratio among valid positions,
// averaged over the batch. cumulative holds one [B,N] tensor per layer.
template <typename T>
Tensor<T> skim_loss(Graph<T>& g, std::span<const Tensor<T>> cumulative,
                    std::span<const std::size_t> valid_lens);

// Hard-mask form over a finished SkimState.
double skim_loss(const SkimState& state, std::span<const std::size_t> valid_lens);

template <typename T>
Tensor<T> total_loss(Graph<T>& g, const Tensor<T>& downstream, const Tensor<T>& skim,
                     double lambda);

}  // namespace transkim
