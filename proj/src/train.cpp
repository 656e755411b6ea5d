#include "transkim/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "transkim/errors.hpp"

namespace transkim {

Adam::Adam(std::vector<Tensor<float>> params, const OptimizerConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void Adam::step(double lr) {
  ++t_;
  double scale = 1.0;
  if (cfg_.clip_norm > 0) {
    double sq = 0.0;
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      for (const float g : p.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(cfg_.beta1);
  const auto b2 = static_cast<float>(cfg_.beta2);
  const auto step = static_cast<float>(lr / c1);
  const auto rc2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(cfg_.eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const float gk = static_cast<float>(g[k] * scale);
      m[k] = b1 * m[k] + (1.0f - b1) * gk;
      v[k] = b2 * v[k] + (1.0f - b2) * gk * gk;
      w[k] -= step * m[k] / (std::sqrt(v[k] * rc2) + eps);
    }
  }
}

double scheduled_lr(const OptimizerConfig& cfg, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return cfg.lr;
  const auto warm = static_cast<std::int64_t>(std::ceil(cfg.warmup_frac * total_steps));
  if (step < warm) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const double rest = static_cast<double>(total_steps - warm);
  if (rest <= 0) return cfg.lr;
  return cfg.lr * std::max(0.0, static_cast<double>(total_steps - step) / rest);
}

std::string metrics_json(const EpochMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["loss_total"] = m.loss_total;
  j["loss_downstream"] = m.loss_downstream;
  j["loss_skim"] = m.loss_skim;
  j["acc"] = m.acc;
  j["kept_frac"] = m.kept_frac;
  return j.dump();
}

namespace {

std::vector<std::vector<Example>> make_batches(std::span<const Example> data,
                                               std::span<const std::size_t> order,
                                               std::size_t batch_size) {
  std::vector<std::vector<Example>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<Example> chunk;
    for (std::size_t k = i; k < std::min(order.size(), i + batch_size); ++k) {
      chunk.push_back(data[order[k]]);
    }
    out.push_back(std::move(chunk));
  }
  return out;
}

}  // namespace

std::vector<EpochMetrics> train_loop(Model<float>& model, std::span<const Example> data,
                                     const OptimizerConfig& cfg, std::ostream* metrics_log,
                                     const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (data.empty()) throw EmptyInputError("train_loop: empty dataset");
  if (cfg.batch_size < 1 || cfg.epochs < 1) {
    throw ConfigError("train_loop: batch_size and epochs must be >= 1");
  }
  if (cfg.policy == PaddingPolicy::kNone && cfg.batch_size != 1) {
    throw ConfigError("train_loop: padding policy none needs batch_size 1");
  }
  const ModelConfig& mc = model.config();
  const auto L = static_cast<std::size_t>(mc.n_layers);
  std::vector<Tensor<float>> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  Adam adam(params, cfg);

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto per_epoch = static_cast<std::int64_t>((data.size() + bs - 1) / bs);
  const std::int64_t total_steps = per_epoch * cfg.epochs;
  Rng noise_rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 1);
  std::vector<std::size_t> order(data.size());

  std::vector<EpochMetrics> log;
  double initial_loss = -1.0;
  int bad_epochs = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(cfg.seed + static_cast<std::uint64_t>(epoch) * 1000003ULL);
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    EpochMetrics m;
    m.epoch = epoch;
    m.kept_frac.assign(L, 0.0);
    double correct = 0.0;
    double seen = 0.0;
    double valid_tokens = 0.0;
    for (const auto& chunk : make_batches(data, order, bs)) {
      const Batch batch = pad_batch(chunk, cfg.policy, mc.max_len);
      model.zero_grad();
      Graph<float> g;
      const auto r = forward_train(g, model, batch, &noise_rng);
      g.backward(r.loss_total);
      adam.step(scheduled_lr(cfg, adam.steps(), total_steps));

      const double w = static_cast<double>(batch.batch);
      if (initial_loss < 0) initial_loss = r.loss_total.item();
      m.loss_total += r.loss_total.item() * w;
      m.loss_downstream += r.loss_downstream.item() * w;
      m.loss_skim += r.loss_skim.item() * w;
      correct += accuracy(r.logits, batch) * w;
      seen += w;
      const auto& st = r.skim_state;
      for (std::size_t b = 0; b < batch.batch; ++b) {
        valid_tokens += static_cast<double>(batch.true_lens[b]);
        for (std::size_t l = 1; l <= L; ++l) {
          for (std::size_t n = 0; n < batch.true_lens[b]; ++n) {
            m.kept_frac[l - 1] += st.alive(l, b, n) ? 1.0 : 0.0;
          }
        }
      }
    }
    m.step = adam.steps();
    m.loss_total /= seen;
    m.loss_downstream /= seen;
    m.loss_skim /= seen;
    m.acc = correct / seen;
    for (auto& k : m.kept_frac) k /= valid_tokens;
    log.push_back(m);
    if (metrics_log) *metrics_log << metrics_json(m) << '\n' << std::flush;
    if (on_epoch) on_epoch(m);

    bad_epochs = m.loss_total > 10.0 * initial_loss ? bad_epochs + 1 : 0;
    if (bad_epochs >= 3) {
      throw DivergenceError("training diverged: epoch-mean loss " + std::to_string(m.loss_total) +
                            " above 10x the initial " + std::to_string(initial_loss) +
                            " for 3 consecutive epochs (last epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(m.step) + ")");
    }
  }
  return log;
}

EvalResult evaluate(const Model<float>& model, std::span<const Example> data,
                    PaddingPolicy policy, int batch_size) {
  if (data.empty()) throw EmptyInputError("evaluate: empty dataset");
  const auto bs = policy == PaddingPolicy::kNone ? std::size_t{1}
                                                 : static_cast<std::size_t>(std::max(1, batch_size));
  const ModelConfig& mc = model.config();
  EvalResult r;
  r.trace.config_digest = mc.digest();
  double correct = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); i += bs) {
    const auto chunk = data.subspan(i, std::min(bs, data.size() - i));
    const Batch batch = pad_batch(chunk, policy, mc.max_len);
    const auto inf = forward_infer(model, batch);
    double units = 0.0;
    if (batch.is_token_task()) {
      for (std::size_t k = 0; k < batch.batch * batch.seq; ++k) {
        units += batch.pad_mask[k] && batch.token_labels[k] >= 0 ? 1.0 : 0.0;
      }
    } else {
      units = static_cast<double>(batch.batch);
    }
    correct += accuracy(inf.logits, batch) * units;
    total += units;
    append_to_trace(r.trace, inf.skim_state, batch, i);
  }
  r.accuracy = total > 0 ? correct / total : 0.0;
  r.flops = count_flops(mc, r.trace, policy);
  r.quality = skim_quality(r.trace, data, static_cast<std::size_t>(mc.n_layers));
  r.retention = layerwise_curve(std::span<const SkimTrace>(&r.trace, 1));
  return r;
}

}  // namespace transkim
