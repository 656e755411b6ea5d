#include "transkim/skim.hpp"

#include <limits>
#include <string>

#include "transkim/errors.hpp"

namespace transkim {

void SkimState::derive_prune_layers() {
  prune_layer.assign(batch * seq, static_cast<int>(n_layers) + 1);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t n = 0; n < seq; ++n) {
      for (std::size_t l = 1; l <= n_layers; ++l) {
        if (!alive(l, b, n)) {
          prune_layer[b * seq + n] = static_cast<int>(l);
          break;
        }
      }
    }
  }
}

void SkimState::check(std::span<const std::size_t> forced,
                      std::span<const std::size_t> valid_lens) const {
  const std::size_t cells = n_layers * batch * seq;
  if (cumulative_mask.size() != cells || prune_layer.size() != batch * seq) {
    throw InvariantError("SkimState: array sizes do not match [L,B,N] = [" +
                         std::to_string(n_layers) + "," + std::to_string(batch) + "," +
                         std::to_string(seq) + "]");
  }
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t n = 0; n < seq; ++n) {
      const int pl = prune_layer[b * seq + n];
      if (pl < 1 || pl > static_cast<int>(n_layers) + 1) {
        throw InvariantError("SkimState: prune_layer " + std::to_string(pl) +
                             " outside [1, L+1] at (" + std::to_string(b) + "," +
                             std::to_string(n) + ")");
      }
      for (std::size_t l = 1; l <= n_layers; ++l) {
        const bool on = alive(l, b, n);
        if (l > 1 && on && !alive(l - 1, b, n)) {
          throw InvariantError("SkimState: token (" + std::to_string(b) + "," +
                               std::to_string(n) + ") returns at layer " +
                               std::to_string(l));
        }
        if (on != (pl > static_cast<int>(l))) {
          throw InvariantError("SkimState: prune_layer disagrees with mask at (" +
                               std::to_string(b) + "," + std::to_string(n) +
                               ") layer " + std::to_string(l));
        }
      }
    }
    const std::size_t valid = valid_lens.empty() ? seq : valid_lens[b];
    for (const std::size_t f : forced) {
      if (f < valid && prune_layer[b * seq + f] != static_cast<int>(n_layers) + 1) {
        throw InvariantError("SkimState: forced position " + std::to_string(f) +
                             " was skimmed in example " + std::to_string(b));
      }
    }
  }
}

SkimState SkimState::from_prune_layers(std::size_t n_layers, std::size_t batch,
                                       std::size_t seq, std::vector<int> prune_layer) {
  if (prune_layer.size() != batch * seq) {
    throw DimensionError("SkimState::from_prune_layers: expected " +
                         std::to_string(batch * seq) + " entries");
  }
  SkimState s;
  s.n_layers = n_layers;
  s.batch = batch;
  s.seq = seq;
  s.prune_layer = std::move(prune_layer);
  s.cumulative_mask.assign(n_layers * batch * seq, 0);
  for (std::size_t l = 1; l <= n_layers; ++l) {
    for (std::size_t i = 0; i < batch * seq; ++i) {
      s.cumulative_mask[(l - 1) * batch * seq + i] =
          s.prune_layer[i] > static_cast<int>(l) ? 1 : 0;
    }
  }
  s.raw_decisions = s.cumulative_mask;
  s.soft_probs.assign(s.raw_decisions.begin(), s.raw_decisions.end());
  s.check();
  return s;
}

template <typename T>
SkimPredictorParams<T> make_skim_predictor(const ModelConfig& cfg, Rng& rng) {
  const auto d = static_cast<std::size_t>(cfg.d_model);
  SkimPredictorParams<T> p;
  p.fc1 = make_linear<T>(d, d, cfg.sigma, rng);
  p.ln = make_layer_norm<T>(d);
  p.fc2 = make_linear<T>(d, 2, cfg.sigma, rng);
  init_unbalanced(p, cfg.mu0, cfg.sigma, rng);
  return p;
}

template <typename T>
void init_unbalanced(SkimPredictorParams<T>& p, double mu0, double sigma, Rng& rng) {
  for (auto& w : p.fc1.weight.data()) w = static_cast<T>(rng.normal(0.0, sigma));
  for (auto& w : p.fc2.weight.data()) w = static_cast<T>(rng.normal(0.0, sigma));
  for (auto& w : p.fc1.bias.data()) w = T(0);
  p.fc2.bias[kSkimChannel] = static_cast<T>(rng.normal(-mu0, sigma));
  p.fc2.bias[kKeepChannel] = static_cast<T>(rng.normal(mu0, sigma));
}

template <typename T>
Tensor<T> skim_predict(Graph<T>& g, const Tensor<T>& h, const SkimPredictorParams<T>& p,
                       T ln_eps) {
  Tensor<T> x = g.gelu(g.layer_norm(linear(g, h, p.fc1), p.ln.gain, p.ln.bias, ln_eps));
  return linear(g, x, p.fc2);
}

template <typename T>
Decision<T> gumbel_softmax_decision(Graph<T>& g, const Tensor<T>& logits, T tau,
                                    Rng* rng, DecisionMode mode, const Tensor<T>* noise) {
  if (!(tau > T(0))) throw ContractError("gumbel_softmax_decision: tau must be > 0");
  if (logits.rank() < 1 || logits.dim(-1) != 2) {
    throw DimensionError("gumbel_softmax_decision: expected [...,2] logits, got " +
                         shape_str(logits.shape()));
  }
  Tensor<T> z = g.log_softmax_lastdim(logits);
  if (mode == DecisionMode::kTrain) {
    Tensor<T> gn;
    if (noise) {
      if (noise->shape() != logits.shape()) {
        throw DimensionError("gumbel_softmax_decision: noise shape " +
                             shape_str(noise->shape()) + " vs logits " +
                             shape_str(logits.shape()));
      }
      gn = *noise;
    } else {
      if (!rng) throw ContractError("gumbel_softmax_decision: train mode needs an rng");
      std::vector<T> draws(logits.numel());
      for (auto& v : draws) v = static_cast<T>(rng->gumbel());
      gn = Tensor<T>::from(logits.shape(), std::move(draws));
    }
    z = g.add(z, gn);
  }
  Tensor<T> soft = g.softmax_lastdim(g.scale(z, T(1) / tau));
  Tensor<T> soft_keep = g.select_lastdim(soft, kKeepChannel);

  Shape out_shape(logits.shape().begin(), logits.shape().end() - 1);
  std::vector<T> hard(soft_keep.numel());
  for (std::size_t i = 0; i < hard.size(); ++i) {
    hard[i] = z[2 * i + kKeepChannel] >= z[2 * i + kSkimChannel] ? T(1) : T(0);
  }
  Tensor<T> hard_t = Tensor<T>::from(out_shape, std::move(hard));
  if (mode == DecisionMode::kTrain) hard_t = g.straight_through(hard_t, soft_keep);
  return {hard_t, soft_keep};
}

template <typename T>
Tensor<T> accumulate_mask(Graph<T>& g, const Tensor<T>& prev, const Tensor<T>& decision,
                          std::span<const std::size_t> forced,
                          std::span<const std::size_t> valid_lens) {
  if (prev.shape() != decision.shape() || prev.rank() != 2) {
    throw DimensionError("accumulate_mask: " + shape_str(prev.shape()) + " vs " +
                         shape_str(decision.shape()));
  }
  Tensor<T> out = g.mul(prev, decision);
  if (forced.empty()) return out;
  const std::size_t batch = prev.dim(0);
  const std::size_t seq = prev.dim(1);
  auto force = Tensor<T>::zeros({batch, seq});
  auto keep_rest = Tensor<T>::full({batch, seq}, T(1));
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t valid = valid_lens.empty() ? seq : valid_lens[b];
    for (const std::size_t f : forced) {
      if (f < valid && f < seq) {
        force[b * seq + f] = T(1);
        keep_rest[b * seq + f] = T(0);
      }
    }
  }
  return g.add(g.mul(out, keep_rest), force);
}

template <typename T>
Tensor<T> build_skim_attention_bias(const Tensor<T>& mask, MaskMode mode) {
  if (mask.rank() != 2) {
    throw DimensionError("build_skim_attention_bias: expected [B,N], got " +
                         shape_str(mask.shape()));
  }
  const std::size_t batch = mask.dim(0);
  const std::size_t seq = mask.dim(1);
  auto out = Tensor<T>::zeros({batch, seq, seq});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t q = 0; q < seq; ++q) {
      for (std::size_t j = 0; j < seq; ++j) {
        const bool kept = mask[b * seq + j] != T(0);
        T& v = out[(b * seq + q) * seq + j];
        if (mode == MaskMode::kAdditive) {
          v = kept ? T(0) : -std::numeric_limits<T>::infinity();
        } else {
          v = kept ? T(1) : T(0);
        }
      }
    }
  }
  return out;
}

template <typename T>
AttentionMask<T> attention_mask_from_bias(const Tensor<T>& bias, MaskMode mode) {
  using Kind = typename AttentionMask<T>::Kind;
  return {mode == MaskMode::kAdditive ? Kind::kAdditiveBias : Kind::kPostSoftmaxScale, bias};
}

template <typename T>
Tensor<T> assemble_forwarded_output(std::span<const Tensor<T>> layer_inputs,
                                    const SkimState& state) {
  state.check();
  if (layer_inputs.size() != state.n_layers + 1) {
    throw InvariantError("assemble_forwarded_output: " + std::to_string(layer_inputs.size()) +
                         " snapshots for " + std::to_string(state.n_layers) + " layers");
  }
  const Shape& shape = layer_inputs[0].shape();
  if (shape.size() != 3 || shape[0] != state.batch || shape[1] != state.seq) {
    throw InvariantError("assemble_forwarded_output: snapshot shape " + shape_str(shape) +
                         " does not match the skim state");
  }
  const std::size_t d = shape[2];
  auto out = Tensor<T>::zeros(shape);
  for (std::size_t i = 0; i < state.batch * state.seq; ++i) {
    const auto& src = layer_inputs[static_cast<std::size_t>(state.prune_layer[i] - 1)];
    std::copy_n(src.data().data() + i * d, d, out.data().data() + i * d);
  }
  return out;
}

template <typename T>
Tensor<T> assemble_forwarded_output(Graph<T>& g, std::span<const Tensor<T>> layer_inputs,
                                    std::span<const Tensor<T>> cumulative) {
  const std::size_t layers = cumulative.size();
  if (layer_inputs.size() != layers + 1) {
    throw InvariantError("assemble_forwarded_output: " + std::to_string(layer_inputs.size()) +
                         " snapshots for " + std::to_string(layers) + " layers");
  }
  const std::size_t batch = layer_inputs[0].dim(0);
  const std::size_t seq = layer_inputs[0].dim(1);
  auto weighted = [&](const Tensor<T>& h, const Tensor<T>& w) {
    return g.mul(h, g.reshape(w, {batch, seq, 1}));
  };
  // weight of snapshot 0 is 1 - cum[1]
  Tensor<T> out = weighted(layer_inputs[0], g.add_scalar(g.scale(cumulative[0], T(-1)), T(1)));
  for (std::size_t i = 1; i < layers; ++i) {
    out = g.add(out, weighted(layer_inputs[i], g.sub(cumulative[i - 1], cumulative[i])));
  }
  return g.add(out, weighted(layer_inputs[layers], cumulative[layers - 1]));
}

template <typename T>
Tensor<T> skim_loss(Graph<T>& g, std::span<const Tensor<T>> cumulative,
                    std::span<const std::size_t> valid_lens) {
  if (cumulative.empty()) throw EmptyInputError("skim_loss: no layers");
  const std::size_t batch = valid_lens.size();
  const std::size_t seq = cumulative[0].dim(1);
  if (batch == 0 || cumulative[0].dim(0) != batch) {
    throw DimensionError("skim_loss: valid_lens does not match the batch");
  }
  auto weights = Tensor<T>::zeros({batch, seq});
  for (std::size_t b = 0; b < batch; ++b) {
    if (valid_lens[b] == 0) {
      throw EmptyInputError("skim_loss: example " + std::to_string(b) + " has no valid tokens");
    }
    const T w = T(1) / (static_cast<T>(valid_lens[b]) * static_cast<T>(batch));
    for (std::size_t n = 0; n < std::min(valid_lens[b], seq); ++n) weights[b * seq + n] = w;
  }
  Tensor<T> acc = g.sum(g.mul(cumulative[0], weights));
  for (std::size_t l = 1; l < cumulative.size(); ++l) {
    acc = g.add(acc, g.sum(g.mul(cumulative[l], weights)));
  }
  return g.scale(acc, T(1) / static_cast<T>(cumulative.size()));
}

double skim_loss(const SkimState& state, std::span<const std::size_t> valid_lens) {
  if (valid_lens.size() != state.batch) {
    throw DimensionError("skim_loss: valid_lens does not match the batch");
  }
  if (state.n_layers == 0 || state.batch == 0) throw EmptyInputError("skim_loss: empty state");
  double total = 0.0;
  for (std::size_t l = 1; l <= state.n_layers; ++l) {
    double layer = 0.0;
    for (std::size_t b = 0; b < state.batch; ++b) {
      if (valid_lens[b] == 0) {
        throw EmptyInputError("skim_loss: example " + std::to_string(b) +
                              " has no valid tokens");
      }
      std::size_t kept = 0;
      for (std::size_t n = 0; n < std::min(valid_lens[b], state.seq); ++n) {
        kept += state.alive(l, b, n) ? 1 : 0;
      }
      layer += static_cast<double>(kept) / static_cast<double>(valid_lens[b]);
    }
    total += layer / static_cast<double>(state.batch);
  }
  return total / static_cast<double>(state.n_layers);
}

template <typename T>
Tensor<T> total_loss(Graph<T>& g, const Tensor<T>& downstream, const Tensor<T>& skim,
                     double lambda) {
  if (lambda < 0) throw ContractError("total_loss: lambda must be >= 0");
  return g.add(downstream, g.scale(skim, static_cast<T>(lambda)));
}

#define TRANSKIM_INSTANTIATE_SKIM(T)                                                   \
  template SkimPredictorParams<T> make_skim_predictor<T>(const ModelConfig&, Rng&);    \
  template void init_unbalanced<T>(SkimPredictorParams<T>&, double, double, Rng&);     \
  template Tensor<T> skim_predict<T>(Graph<T>&, const Tensor<T>&,                      \
                                     const SkimPredictorParams<T>&, T);                \
  template Decision<T> gumbel_softmax_decision<T>(Graph<T>&, const Tensor<T>&, T,      \
                                                  Rng*, DecisionMode,                  \
                                                  const Tensor<T>*);                   \
  template Tensor<T> accumulate_mask<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, \
                                        std::span<const std::size_t>,                  \
                                        std::span<const std::size_t>);                 \
  template Tensor<T> build_skim_attention_bias<T>(const Tensor<T>&, MaskMode);         \
  template AttentionMask<T> attention_mask_from_bias<T>(const Tensor<T>&, MaskMode);   \
  template Tensor<T> assemble_forwarded_output<T>(std::span<const Tensor<T>>,          \
                                                  const SkimState&);                   \
  template Tensor<T> assemble_forwarded_output<T>(Graph<T>&, std::span<const Tensor<T>>, \
                                                  std::span<const Tensor<T>>);         \
  template Tensor<T> skim_loss<T>(Graph<T>&, std::span<const Tensor<T>>,               \
                                  std::span<const std::size_t>);                       \
  template Tensor<T> total_loss<T>(Graph<T>&, const Tensor<T>&, const Tensor<T>&, double);

TRANSKIM_INSTANTIATE_SKIM(float)
TRANSKIM_INSTANTIATE_SKIM(double)

#undef TRANSKIM_INSTANTIATE_SKIM

}  // namespace transkim
