#include "transkim/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "transkim/errors.hpp"
#include "transkim/flops.hpp"

namespace transkim {

namespace {

void check_batch(const Batch& batch, const ModelConfig& cfg) {
  const std::size_t cells = batch.batch * batch.seq;
  if (batch.batch == 0 || batch.seq == 0) throw EmptyInputError("empty batch");
  if (batch.token_ids.size() != cells || batch.pad_mask.size() != cells ||
      batch.true_lens.size() != batch.batch) {
    throw DimensionError("batch arrays do not match [" + std::to_string(batch.batch) + "," +
                         std::to_string(batch.seq) + "]");
  }
  if (cfg.head == HeadKind::kToken && batch.token_labels.size() != cells) {
    throw ContractError("token head needs per-token labels in the batch");
  }
  if (cfg.head == HeadKind::kSequence && batch.labels.size() != batch.batch) {
    throw ContractError("sequence head needs one label per example");
  }
  for (const std::size_t len : batch.true_lens) {
    if (len == 0) throw EmptyInputError("batch contains an empty example");
  }
}

template <typename T>
Tensor<T> downstream_loss(Graph<T>& g, const Tensor<T>& logits, const Batch& batch,
                          std::size_t n_classes) {
  if (logits.rank() == 2) {
    std::vector<T> w(batch.batch, T(1) / static_cast<T>(batch.batch));
    return g.cross_entropy(logits, batch.labels, w);
  }
  const std::size_t cells = batch.batch * batch.seq;
  std::vector<T> w(cells, T(0));
  std::size_t counted = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    if (batch.pad_mask[i] && batch.token_labels[i] >= 0) ++counted;
  }
  if (counted == 0) throw EmptyInputError("no labelled tokens in batch");
  for (std::size_t i = 0; i < cells; ++i) {
    if (batch.pad_mask[i] && batch.token_labels[i] >= 0) w[i] = T(1) / static_cast<T>(counted);
  }
  return g.cross_entropy(g.reshape(logits, {cells, n_classes}), batch.token_labels, w);
}

}  // namespace

template <typename T>
ForwardResult<T> forward_train(Graph<T>& g, const Model<T>& model, const Batch& batch,
                               Rng* rng, const ForwardOptions& opts) {
  const ModelConfig& cfg = model.config();
  check_batch(batch, cfg);
  const std::size_t B = batch.batch;
  const std::size_t N = batch.seq;
  const auto L = static_cast<std::size_t>(cfg.n_layers);
  const auto eps = static_cast<T>(cfg.ln_eps);
  const auto tau = static_cast<T>(cfg.tau);
  const std::vector<std::size_t> forced = cfg.forced_positions(N);
  const std::span<const std::size_t> lens(batch.true_lens);

  if (opts.decisions == DecisionSource::kForced && opts.forced_prune_layer.size() != B * N) {
    throw DimensionError("forward_train: forced schedule has " +
                         std::to_string(opts.forced_prune_layer.size()) + " entries for " +
                         std::to_string(B * N) + " positions");
  }
  if (!opts.noise.empty() && opts.noise.size() != L) {
    throw DimensionError("forward_train: noise for " + std::to_string(opts.noise.size()) +
                         " layers, model has " + std::to_string(L));
  }

  ForwardResult<T> r;
  Tensor<T> h = embed(g, batch.token_ids, B, N, model.embedding, cfg);
  r.layer_inputs.push_back(h);

  auto pad = Tensor<T>::zeros({B, N});
  for (std::size_t i = 0; i < B * N; ++i) pad[i] = batch.pad_mask[i] ? T(1) : T(0);

  SkimState& st = r.skim_state;
  st.n_layers = L;
  st.batch = B;
  st.seq = N;
  st.raw_decisions.assign(L * B * N, 0);
  st.cumulative_mask.assign(L * B * N, 0);
  st.soft_probs.assign(L * B * N, 0.0);

  Tensor<T> cum = pad;
  Tensor<T> soft_cum = pad;
  std::vector<Tensor<T>> cums;
  std::vector<Tensor<T>> soft_cums;
  for (std::size_t l = 1; l <= L; ++l) {
    Tensor<T> dec;
    Tensor<T> soft;
    if (opts.skim_enabled) {
      const auto& pred = model.predictors[l - 1];
      switch (opts.decisions) {
        case DecisionSource::kGumbel: {
          Tensor<T> noise;
          if (!opts.noise.empty()) noise = opts.noise[l - 1].template cast<T>();
          const Tensor<T> logits = skim_predict(g, h, pred, eps);
          auto d = gumbel_softmax_decision(g, logits, tau, rng, DecisionMode::kTrain,
                                           noise.defined() ? &noise : nullptr);
          dec = d.hard;
          soft = d.soft_keep;
          break;
        }
        case DecisionSource::kArgmax:
        case DecisionSource::kSoft: {
          const Tensor<T> logits = skim_predict(g, h, pred, eps);
          auto d = gumbel_softmax_decision(g, logits, tau, nullptr, DecisionMode::kInfer);
          dec = opts.decisions == DecisionSource::kSoft ? d.soft_keep : d.hard;
          soft = d.soft_keep;
          break;
        }
        case DecisionSource::kForced: {
          dec = Tensor<T>::zeros({B, N});
          for (std::size_t i = 0; i < B * N; ++i) {
            dec[i] = opts.forced_prune_layer[i] > static_cast<int>(l) ? T(1) : T(0);
          }
          soft = dec;
          break;
        }
      }
      cum = accumulate_mask(g, cum, dec, forced, lens);
      soft_cum = opts.decisions == DecisionSource::kGumbel
                     ? accumulate_mask(g, soft_cum, soft, forced, lens)
                     : cum;
      r.soft_keep.push_back(soft);
    }
    cums.push_back(cum);
    soft_cums.push_back(soft_cum);
    for (std::size_t i = 0; i < B * N; ++i) {
      const std::size_t at = (l - 1) * B * N + i;
      st.raw_decisions[at] = dec.defined() ? (dec[i] > T(0.5) ? 1 : 0) : 1;
      st.cumulative_mask[at] = cum[i] > T(0.5) ? 1 : 0;
      st.soft_probs[at] = soft.defined() ? static_cast<double>(soft[i]) : 1.0;
    }

    using Kind = typename AttentionMask<T>::Kind;
    const Kind kind = opts.skim_enabled && cfg.mask_mode == MaskMode::kMultiplicative
                          ? Kind::kKeyMultiplicative
                          : Kind::kKeyAdditive;
    h = encoder_layer_forward(g, h, AttentionMask<T>{kind, cum}, model.layers[l - 1], cfg,
                              static_cast<int>(l));
    r.layer_inputs.push_back(h);
  }
  st.derive_prune_layers();
  st.check(forced, lens);

  r.assembled = opts.skim_enabled
                    ? assemble_forwarded_output(g, std::span<const Tensor<T>>(r.layer_inputs),
                                                std::span<const Tensor<T>>(cums))
                    : h;
  r.logits = head_forward(g, r.assembled, model.head);
  r.loss_downstream =
      downstream_loss(g, r.logits, batch, static_cast<std::size_t>(cfg.n_classes));
  r.loss_skim = skim_loss(g, std::span<const Tensor<T>>(soft_cums), lens);
  r.loss_total = total_loss(g, r.loss_downstream, r.loss_skim, cfg.lambda);
  if (!std::isfinite(static_cast<double>(r.loss_total.item()))) {
    throw NumericFault("forward_train: non-finite loss (downstream " +
                           std::to_string(static_cast<double>(r.loss_downstream.item())) +
                           ", skim " + std::to_string(static_cast<double>(r.loss_skim.item())) +
                           ")",
                       -1);
  }
  return r;
}

template <typename T>
InferResult<T> forward_infer(const Model<T>& model, const Batch& batch,
                             const ForwardOptions& opts) {
  const ModelConfig& cfg = model.config();
  check_batch(batch, cfg);
  if (opts.decisions != DecisionSource::kArgmax && opts.decisions != DecisionSource::kForced) {
    throw ContractError("forward_infer: decisions must be argmax or forced");
  }
  const std::size_t B = batch.batch;
  const std::size_t N = batch.seq;
  const auto L = static_cast<std::size_t>(cfg.n_layers);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto eps = static_cast<T>(cfg.ln_eps);
  const auto tau = static_cast<T>(cfg.tau);
  if (opts.decisions == DecisionSource::kForced && opts.forced_prune_layer.size() != B * N) {
    throw DimensionError("forward_infer: forced schedule has " +
                         std::to_string(opts.forced_prune_layer.size()) + " entries for " +
                         std::to_string(B * N) + " positions");
  }

  InferResult<T> r;
  r.assembled = Tensor<T>::zeros({B, N, d});
  SkimState& st = r.skim_state;
  st.n_layers = L;
  st.batch = B;
  st.seq = N;
  st.raw_decisions.assign(L * B * N, 0);
  st.cumulative_mask.assign(L * B * N, 0);
  st.soft_probs.assign(L * B * N, 0.0);
  st.prune_layer.assign(B * N, 1);  // padding never enters layer 1
  r.kept.assign(B, std::vector<std::size_t>(L, 0));
  r.example_flops.assign(B, 0);
  r.example_predictor_flops.assign(B, 0);

  Graph<T> g(false);
  auto park = [&](const Tensor<T>& h, std::size_t row, std::size_t b, std::size_t pos) {
    std::copy_n(h.data().data() + row * d, d, r.assembled.data().data() + (b * N + pos) * d);
  };

  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t n0 = batch.true_lens[b];
    if (n0 > N) throw LengthError("forward_infer: true length exceeds the padded length");
    const std::span<const int> ids(batch.token_ids.data() + b * N, n0);
    Tensor<T> h;
    {
      flops::PauseScope pause;
      h = embed(g, ids, 1, n0, model.embedding, cfg);
    }
    const std::vector<std::size_t> forced = cfg.forced_positions(n0);
    std::vector<std::size_t> alive(n0);
    std::iota(alive.begin(), alive.end(), std::size_t{0});

    flops::FlopScope total;
    for (std::size_t l = 1; l <= L; ++l) {
      if (opts.skim_enabled) {
        std::vector<std::uint8_t> keep(alive.size(), 0);
        if (opts.decisions == DecisionSource::kArgmax) {
          Tensor<T> logits;
          {
            flops::FlopScope pred;
            logits = skim_predict(g, h, model.predictors[l - 1], eps);
            r.example_predictor_flops[b] += pred.total();
          }
          flops::PauseScope pause;
          auto dec = gumbel_softmax_decision(g, logits, tau, nullptr, DecisionMode::kInfer);
          for (std::size_t i = 0; i < alive.size(); ++i) {
            keep[i] = dec.hard[i] > T(0.5) ? 1 : 0;
            st.soft_probs[st.index(l - 1, b, alive[i])] = static_cast<double>(dec.soft_keep[i]);
          }
        } else {
          for (std::size_t i = 0; i < alive.size(); ++i) {
            keep[i] = opts.forced_prune_layer[b * N + alive[i]] > static_cast<int>(l) ? 1 : 0;
            st.soft_probs[st.index(l - 1, b, alive[i])] = keep[i];
          }
        }
        std::vector<std::size_t> rows;
        std::vector<std::size_t> next;
        for (std::size_t i = 0; i < alive.size(); ++i) {
          st.raw_decisions[st.index(l - 1, b, alive[i])] = keep[i];
          if (std::binary_search(forced.begin(), forced.end(), alive[i])) keep[i] = 1;
          if (keep[i]) {
            rows.push_back(i);
            next.push_back(alive[i]);
          } else {
            park(h, i, b, alive[i]);
            st.prune_layer[b * N + alive[i]] = static_cast<int>(l);
          }
        }
        if (rows.empty()) {
          throw EmptyInputError("forward_infer: every token of example " + std::to_string(b) +
                                " was skimmed entering layer " + std::to_string(l));
        }
        if (rows.size() < alive.size()) {
          h = g.reshape(g.gather_rows(g.reshape(h, {alive.size(), d}), rows),
                        {1, rows.size(), d});
          alive = std::move(next);
        }
      } else {
        for (const std::size_t p : alive) st.raw_decisions[st.index(l - 1, b, p)] = 1;
      }
      for (const std::size_t p : alive) st.cumulative_mask[st.index(l - 1, b, p)] = 1;
      r.kept[b][l - 1] = alive.size();
      h = encoder_layer_forward(g, h, AttentionMask<T>::none(), model.layers[l - 1], cfg,
                                static_cast<int>(l));
    }
    for (std::size_t i = 0; i < alive.size(); ++i) {
      park(h, i, b, alive[i]);
      st.prune_layer[b * N + alive[i]] = static_cast<int>(L) + 1;
    }
    r.example_flops[b] = total.total();
  }
  st.check();
  {
    flops::PauseScope pause;
    r.logits = head_forward(g, r.assembled, model.head);
  }
  return r;
}

template <typename T>
EquivalenceResult check_train_infer_equivalence(const Model<T>& model, const Batch& batch,
                                                const ForwardOptions& opts) {
  const InferResult<T> inf = forward_infer(model, batch, opts);
  ForwardOptions forced;
  forced.decisions = DecisionSource::kForced;
  forced.skim_enabled = opts.skim_enabled;
  forced.forced_prune_layer = inf.skim_state.prune_layer;
  Graph<T> g(false);
  const ForwardResult<T> tr = forward_train(g, model, batch, nullptr, forced);

  EquivalenceResult out;
  const std::size_t N = batch.seq;
  const std::size_t d = static_cast<std::size_t>(model.config().d_model);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t n = 0; n < batch.true_lens[b]; ++n) {
      const std::size_t base = (b * N + n) * d;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = std::abs(static_cast<double>(tr.assembled[base + k]) -
                                     static_cast<double>(inf.assembled[base + k]));
        out.max_abs_diff = std::max(out.max_abs_diff, diff);
      }
      ++out.tokens_compared;
    }
  }
  const std::size_t classes = static_cast<std::size_t>(model.config().n_classes);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const std::size_t rows = inf.logits.rank() == 2 ? 1 : batch.true_lens[b];
    for (std::size_t n = 0; n < rows; ++n) {
      const std::size_t base = inf.logits.rank() == 2 ? b * classes : (b * N + n) * classes;
      for (std::size_t c = 0; c < classes; ++c) {
        const double diff = std::abs(static_cast<double>(tr.logits[base + c]) -
                                     static_cast<double>(inf.logits[base + c]));
        out.max_abs_logit_diff = std::max(out.max_abs_logit_diff, diff);
      }
    }
  }
  return out;
}

template <typename T>
double accuracy(const Tensor<T>& logits, const Batch& batch) {
  const std::size_t classes = logits.dim(-1);
  auto argmax = [&](std::size_t row) {
    const T* p = logits.data().data() + row * classes;
    return static_cast<int>(std::max_element(p, p + classes) - p);
  };
  std::size_t correct = 0;
  std::size_t total = 0;
  if (logits.rank() == 2) {
    for (std::size_t b = 0; b < batch.batch; ++b) {
      correct += argmax(b) == batch.labels[b] ? 1 : 0;
      ++total;
    }
  } else {
    for (std::size_t i = 0; i < batch.batch * batch.seq; ++i) {
      if (!batch.pad_mask[i] || batch.token_labels[i] < 0) continue;
      correct += argmax(i) == batch.token_labels[i] ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

#define TRANSKIM_INSTANTIATE_RUNTIME(T)                                                      \
  template ForwardResult<T> forward_train<T>(Graph<T>&, const Model<T>&, const Batch&, Rng*, \
                                             const ForwardOptions&);                         \
  template InferResult<T> forward_infer<T>(const Model<T>&, const Batch&,                    \
                                           const ForwardOptions&);                           \
  template EquivalenceResult check_train_infer_equivalence<T>(const Model<T>&, const Batch&, \
                                                              const ForwardOptions&);        \
  template double accuracy<T>(const Tensor<T>&, const Batch&);

TRANSKIM_INSTANTIATE_RUNTIME(float)
TRANSKIM_INSTANTIATE_RUNTIME(double)

#undef TRANSKIM_INSTANTIATE_RUNTIME

}  // namespace transkim
