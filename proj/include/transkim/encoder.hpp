#pragma once

#include <span>

#include "transkim/config.hpp"
#include "transkim/graph.hpp"
#include "transkim/rng.hpp"

namespace transkim {

// weight is [in, out]; y = x W + b.
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <typename T>
struct EncoderLayerParams {
  Linear<T> q, k, v, o;
  Linear<T> ffn_in, ffn_out;
  LayerNormParams<T> ln_attn, ln_ffn;
};

template <typename T>
struct EmbeddingParams {
  Tensor<T> token;     // [vocab, d]
  Tensor<T> position;  // [max_len, d]
  LayerNormParams<T> ln;
};

template <typename T>
struct TaskHead {
  HeadKind kind = HeadKind::kSequence;
  Linear<T> proj;  // [d, n_classes]
};

// How an encoder layer hides keys from attention.
template <typename T>
struct AttentionMask {
  enum class Kind {
    kNone,
    kAdditiveBias,       // values [B,N,N] added to scores before softmax
    kPostSoftmaxScale,   // values [B,N,N] multiplied into probabilities
    kKeyAdditive,        // values [B,N] key weights, renormalized softmax
    kKeyMultiplicative,  // values [B,N] key weights, scaled after softmax
  };
  Kind kind = Kind::kNone;
  Tensor<T> values;

  static AttentionMask none() { return {}; }
};

template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, double sigma, Rng& rng);
template <typename T>
LayerNormParams<T> make_layer_norm(std::size_t d);
template <typename T>
EncoderLayerParams<T> make_encoder_layer(const ModelConfig& cfg, Rng& rng);

template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Linear<T>& p);

// token_ids is row-major [batch, seq]. Token embedding plus learned position
// embedding, then layer norm. Returns [batch, seq, d].
template <typename T>
Tensor<T> embed(Graph<T>& g, std::span<const int> token_ids, std::size_t batch,
                std::size_t seq, const EmbeddingParams<T>& p, const ModelConfig& cfg);

// Post-LN encoder layer: h' = LN(h + MHA(h)), out = LN(h' + FFN(h')).
// layer is the 1-based index reported in a NumericFault.
template <typename T>
Tensor<T> encoder_layer_forward(Graph<T>& g, const Tensor<T>& h,
                                const AttentionMask<T>& mask,
                                const EncoderLayerParams<T>& p,
                                const ModelConfig& cfg, int layer);

// Sequence head: logits [B, C] from position 0. Token head: [B, N, C].
template <typename T>
Tensor<T> head_forward(Graph<T>& g, const Tensor<T>& assembled, const TaskHead<T>& head);

// Throws NumericFault when any entry is NaN.
template <typename T>
void check_finite(const Tensor<T>& t, const char* what, int layer);

}  // namespace transkim
