#include "transkim/encoder.hpp"

#include <cmath>
#include <string>

#include "transkim/errors.hpp"
#include "transkim/flops.hpp"

namespace transkim {

template <typename T>
Linear<T> make_linear(std::size_t in, std::size_t out, double sigma, Rng& rng) {
  Linear<T> l;
  std::vector<T> w(in * out);
  for (auto& v : w) v = static_cast<T>(rng.normal(0.0, sigma));
  l.weight = Tensor<T>::from({in, out}, std::move(w), true);
  l.bias = Tensor<T>::zeros({out}, true);
  return l;
}

template <typename T>
LayerNormParams<T> make_layer_norm(std::size_t d) {
  return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)};
}

template <typename T>
EncoderLayerParams<T> make_encoder_layer(const ModelConfig& cfg, Rng& rng) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto f = static_cast<std::size_t>(cfg.d_ffn);
  EncoderLayerParams<T> p;
  p.q = make_linear<T>(d, d, cfg.sigma, rng);
  p.k = make_linear<T>(d, d, cfg.sigma, rng);
  p.v = make_linear<T>(d, d, cfg.sigma, rng);
  p.o = make_linear<T>(d, d, cfg.sigma, rng);
  p.ffn_in = make_linear<T>(d, f, cfg.sigma, rng);
  p.ffn_out = make_linear<T>(f, d, cfg.sigma, rng);
  p.ln_attn = make_layer_norm<T>(d);
  p.ln_ffn = make_layer_norm<T>(d);
  return p;
}

template <typename T>
Tensor<T> linear(Graph<T>& g, const Tensor<T>& x, const Linear<T>& p) {
  return g.add(g.matmul(x, p.weight), p.bias);
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what, int layer) {
  for (const T v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericFault(std::string(what) + ": non-finite value in layer " +
                             std::to_string(layer) + " output",
                         layer);
    }
  }
}

template <typename T>
Tensor<T> embed(Graph<T>& g, std::span<const int> token_ids, std::size_t batch,
                std::size_t seq, const EmbeddingParams<T>& p, const ModelConfig& cfg) {
  if (token_ids.size() != batch * seq) {
    throw DimensionError("embed: " + std::to_string(token_ids.size()) +
                         " ids for a [" + std::to_string(batch) + "," +
                         std::to_string(seq) + "] batch");
  }
  if (seq > static_cast<std::size_t>(cfg.max_len)) {
    throw LengthError("embed: sequence length " + std::to_string(seq) +
                      " exceeds max_len " + std::to_string(cfg.max_len));
  }
  const auto d = static_cast<std::size_t>(cfg.d_model);
  Tensor<T> tok = g.embedding(p.token, token_ids);  // [B*N, d]
  std::vector<int> positions(seq);
  for (std::size_t i = 0; i < seq; ++i) positions[i] = static_cast<int>(i);
  Tensor<T> pos = g.embedding(p.position, positions);  // [N, d]
  Tensor<T> x = g.add(g.reshape(tok, {batch, seq, d}), pos);
  Tensor<T> out = g.layer_norm(x, p.ln.gain, p.ln.bias, static_cast<T>(cfg.ln_eps));
  check_finite(out, "embed", 0);
  return out;
}

template <typename T>
Tensor<T> encoder_layer_forward(Graph<T>& g, const Tensor<T>& h,
                                const AttentionMask<T>& mask,
                                const EncoderLayerParams<T>& p,
                                const ModelConfig& cfg, int layer) {
  if (h.rank() != 3 || h.dim(2) != static_cast<std::size_t>(cfg.d_model)) {
    throw DimensionError("encoder_layer_forward: expected [B,N," +
                         std::to_string(cfg.d_model) + "], got " + shape_str(h.shape()));
  }
  const std::size_t b = h.dim(0);
  const std::size_t n = h.dim(1);
  const std::size_t d = h.dim(2);
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t dh = d / heads;
  const T eps = static_cast<T>(cfg.ln_eps);

  auto split_heads = [&](const Tensor<T>& x) {
    return g.transpose(g.reshape(x, {b, n, heads, dh}), 1, 2);  // [B,H,N,dh]
  };
  Tensor<T> q = split_heads(linear(g, h, p.q));
  Tensor<T> k = split_heads(linear(g, h, p.k));
  Tensor<T> v = split_heads(linear(g, h, p.v));

  Tensor<T> scores = g.scale(g.matmul(q, k, /*trans_b=*/true),
                             T(1) / std::sqrt(static_cast<T>(dh)));  // [B,H,N,N]
  Tensor<T> attn;
  using Kind = typename AttentionMask<T>::Kind;
  switch (mask.kind) {
    case Kind::kNone:
      attn = g.softmax_lastdim(scores);
      break;
    case Kind::kAdditiveBias:
      attn = g.softmax_lastdim(g.add(scores, g.reshape(mask.values, {b, 1, n, n})));
      break;
    case Kind::kPostSoftmaxScale:
      attn = g.mul(g.softmax_lastdim(scores), g.reshape(mask.values, {b, 1, n, n}));
      break;
    case Kind::kKeyAdditive:
      attn = g.masked_softmax(scores, mask.values);
      break;
    case Kind::kKeyMultiplicative:
      attn = g.mul(g.softmax_lastdim(scores), g.reshape(mask.values, {b, 1, 1, n}));
      break;
  }

  Tensor<T> ctx = g.reshape(g.transpose(g.matmul(attn, v), 1, 2), {b, n, d});
  Tensor<T> h1 = g.layer_norm(g.add(h, linear(g, ctx, p.o)), p.ln_attn.gain,
                              p.ln_attn.bias, eps);
  Tensor<T> f = linear(g, g.gelu(linear(g, h1, p.ffn_in)), p.ffn_out);
  Tensor<T> out = g.layer_norm(g.add(h1, f), p.ln_ffn.gain, p.ln_ffn.bias, eps);
  check_finite(out, "encoder_layer_forward", layer);
  return out;
}

template <typename T>
Tensor<T> head_forward(Graph<T>& g, const Tensor<T>& assembled, const TaskHead<T>& head) {
  if (assembled.rank() != 3) {
    throw DimensionError("head_forward: expected [B,N,d], got " +
                         shape_str(assembled.shape()));
  }
  if (head.kind == HeadKind::kToken) return linear(g, assembled, head.proj);
  const std::size_t b = assembled.dim(0);
  const std::size_t n = assembled.dim(1);
  const std::size_t d = assembled.dim(2);
  std::vector<std::size_t> cls(b);
  for (std::size_t i = 0; i < b; ++i) cls[i] = i * n;
  Tensor<T> first = g.gather_rows(g.reshape(assembled, {b * n, d}), cls);  // [B,d]
  return linear(g, first, head.proj);
}

#define TRANSKIM_INSTANTIATE_ENCODER(T)                                               \
  template Linear<T> make_linear<T>(std::size_t, std::size_t, double, Rng&);          \
  template LayerNormParams<T> make_layer_norm<T>(std::size_t);                        \
  template EncoderLayerParams<T> make_encoder_layer<T>(const ModelConfig&, Rng&);     \
  template Tensor<T> linear<T>(Graph<T>&, const Tensor<T>&, const Linear<T>&);        \
  template void check_finite<T>(const Tensor<T>&, const char*, int);                 \
  template Tensor<T> embed<T>(Graph<T>&, std::span<const int>, std::size_t,           \
                              std::size_t, const EmbeddingParams<T>&,                 \
                              const ModelConfig&);                                    \
  template Tensor<T> encoder_layer_forward<T>(Graph<T>&, const Tensor<T>&,            \
                                              const AttentionMask<T>&,                \
                                              const EncoderLayerParams<T>&,           \
                                              const ModelConfig&, int);               \
  template Tensor<T> head_forward<T>(Graph<T>&, const Tensor<T>&, const TaskHead<T>&);

TRANSKIM_INSTANTIATE_ENCODER(float)
TRANSKIM_INSTANTIATE_ENCODER(double)

#undef TRANSKIM_INSTANTIATE_ENCODER

}  // namespace transkim
