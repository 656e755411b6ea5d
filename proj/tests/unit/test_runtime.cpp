#include <doctest.h>

#include <vector>

#include "transkim/errors.hpp"
#include "transkim/flops_report.hpp"
#include "transkim/runtime.hpp"

using namespace transkim;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ffn = 16;
  c.vocab_size = 32;
  c.max_len = 12;
  return c;
}

Batch make_batch(const std::vector<std::vector<int>>& seqs, PaddingPolicy policy, int max_len,
                 bool token_task = false) {
  std::vector<Example> ex;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    Example e;
    e.token_ids = seqs[i];
    e.true_len = static_cast<int>(seqs[i].size());
    e.relevant.assign(seqs[i].size(), false);
    e.label = static_cast<int>(i % 2);
    if (token_task) e.token_labels.assign(seqs[i].size(), 1);
    ex.push_back(e);
  }
  return pad_batch(ex, policy, max_len);
}

std::vector<double> to_vec(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("keep-everything predictors reproduce the skim-free encoder") {
  const auto model = Model<float>::init(small_config(), 5);
  const auto batch = make_batch({{1, 22, 23, 24, 25}, {1, 30, 21}}, PaddingPolicy::kBatch, 12);
  Graph<float> g1(false), g2(false);
  ForwardOptions skim;
  skim.decisions = DecisionSource::kArgmax;
  ForwardOptions plain;
  plain.skim_enabled = false;
  const auto a = forward_train(g1, model, batch, nullptr, skim);
  const auto b = forward_train(g2, model, batch, nullptr, plain);
  CHECK(a.loss_total.item() == b.loss_total.item());
  CHECK(to_vec(a.logits) == to_vec(b.logits));
  CHECK(a.loss_skim.item() == doctest::Approx(1.0));
}

TEST_CASE("padding is skimmed before the first layer and CLS is always kept") {
  auto cfg = small_config();
  cfg.mu0 = -5.0;  // predictors want to skim everything
  const auto model = Model<float>::init(cfg, 6);
  const auto batch = make_batch({{1, 22, 23}, {1, 30, 21, 20, 27}}, PaddingPolicy::kBatch, 12);
  Graph<float> g(false);
  ForwardOptions opts;
  opts.decisions = DecisionSource::kArgmax;
  const auto r = forward_train(g, model, batch, nullptr, opts);
  const auto& st = r.skim_state;
  const int L = cfg.n_layers;
  CHECK(st.prune_layer[0] == L + 1);
  CHECK(st.prune_layer[5] == L + 1);
  for (std::size_t n = 3; n < 5; ++n) CHECK(st.prune_layer[n] == 1);  // padding of example 0
  for (std::size_t n = 1; n < 3; ++n) CHECK(st.prune_layer[n] == 1);
}

TEST_CASE("a fixed seed gives bit-identical training losses") {
  const auto model = Model<float>::init(small_config(), 7);
  const auto batch = make_batch({{1, 22, 23, 24}, {1, 30, 21}}, PaddingPolicy::kBatch, 12);
  auto run = [&] {
    Rng rng(99);
    Graph<float> g;
    return forward_train(g, model, batch, &rng).loss_total.item();
  };
  CHECK(run() == run());
}

TEST_CASE("gathered inference with keep-everything predictors equals the plain encoder") {
  const auto model = Model<float>::init(small_config(), 8);
  const auto batch = make_batch({{1, 22, 23, 24, 25, 26}}, PaddingPolicy::kNone, 12);
  const auto inf = forward_infer(model, batch);
  Graph<float> g(false);
  ForwardOptions plain;
  plain.skim_enabled = false;
  const auto full = forward_train(g, model, batch, nullptr, plain);
  CHECK(to_vec(inf.logits) == to_vec(full.logits));
  CHECK(inf.kept[0] == std::vector<std::size_t>{6, 6});
}

TEST_CASE("hand-forced schedule sets the gathered sizes per layer") {
  auto cfg = small_config();
  const auto model = Model<float>::init(cfg, 9);
  const auto batch = make_batch({{1, 22, 23, 24, 25}, {1, 30, 21}}, PaddingPolicy::kBatch, 12);
  ForwardOptions opts;
  opts.decisions = DecisionSource::kForced;
  // N = 5; example 1 has two padding slots whose entries are ignored.
  opts.forced_prune_layer = {3, 1, 2, 3, 2, 3, 2, 3, 1, 1};
  const auto r = forward_infer(model, batch, opts);
  CHECK(r.kept[0] == std::vector<std::size_t>{4, 2});
  CHECK(r.kept[1] == std::vector<std::size_t>{3, 2});
  CHECK(r.assembled.shape() == Shape{2, 5, 8});

  // Forced decisions skip the predictors, so only the layers are charged.
  std::int64_t want = 0;
  for (const std::size_t k : r.kept[0]) want += layer_flops(cfg, static_cast<std::int64_t>(k)).total();
  CHECK(r.example_flops[0] == want);
  CHECK(r.example_predictor_flops[0] == 0);

  CHECK_THROWS_AS(forward_infer(model, batch, ForwardOptions::with(DecisionSource::kGumbel)),
                  ContractError);
  opts.forced_prune_layer.pop_back();
  CHECK_THROWS_AS(forward_infer(model, batch, opts), DimensionError);
}

TEST_CASE("every token skimmed without forced positions is an empty-sequence error") {
  auto cfg = small_config();
  cfg.force_keep = ForceKeep::kNone;
  const auto model = Model<float>::init(cfg, 10);
  const auto batch = make_batch({{1, 22, 23}}, PaddingPolicy::kNone, 12);
  ForwardOptions opts;
  opts.decisions = DecisionSource::kForced;
  opts.forced_prune_layer = {1, 1, 1};
  CHECK_THROWS_AS(forward_infer(model, batch, opts), EmptyInputError);
}

TEST_CASE("train and infer paths agree in additive mode") {
  auto cfg = small_config();
  cfg.mu0 = 0.3;  // mixed decisions on a fresh model
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto model = Model<float>::init(cfg, seed);
    const auto batch =
        make_batch({{1, 22, 23, 24, 25, 26, 27}, {1, 30, 21, 20}}, PaddingPolicy::kBatch, 12);
    const auto eq = check_train_infer_equivalence(model, batch);
    CHECK(eq.max_abs_diff < 1e-5);
    CHECK(eq.max_abs_logit_diff < 1e-5);
    CHECK(eq.tokens_compared == 11);
  }
}

TEST_CASE("all-keep schedules agree exactly") {
  const auto model = Model<float>::init(small_config(), 12);
  const auto batch = make_batch({{1, 22, 23, 24, 25}}, PaddingPolicy::kNone, 12);
  ForwardOptions opts;
  opts.decisions = DecisionSource::kForced;
  opts.forced_prune_layer.assign(5, 3);
  const auto eq = check_train_infer_equivalence(model, batch, opts);
  CHECK(eq.max_abs_diff == 0.0);
}

TEST_CASE("multiplicative mode shows a train/infer gap that additive mode does not") {
  auto cfg = small_config();
  const auto batch = make_batch({{1, 22, 23, 24, 25, 26}}, PaddingPolicy::kNone, 12);
  ForwardOptions opts;
  opts.decisions = DecisionSource::kForced;
  opts.forced_prune_layer = {3, 1, 2, 3, 1, 2};
  const double additive =
      check_train_infer_equivalence(Model<float>::init(cfg, 13), batch, opts).max_abs_diff;
  cfg.mask_mode = MaskMode::kMultiplicative;
  const double multiplicative =
      check_train_infer_equivalence(Model<float>::init(cfg, 13), batch, opts).max_abs_diff;
  CHECK(additive < 1e-5);
  CHECK(multiplicative > 1e-3);
  CHECK(multiplicative > 100 * additive);
}

TEST_CASE("accuracy for both heads") {
  const auto batch = make_batch({{1, 22}, {1, 23}}, PaddingPolicy::kBatch, 12);
  // labels are 0, 1
  auto logits = Tensor<float>::from({2, 2}, {2, 1, 0, 3});
  CHECK(accuracy(logits, batch) == 1.0);
  logits = Tensor<float>::from({2, 2}, {2, 1, 3, 0});
  CHECK(accuracy(logits, batch) == 0.5);

  const auto tok = make_batch({{1, 22, 23}, {1, 24}}, PaddingPolicy::kBatch, 12, true);
  // all tags are 1; padding is ignored
  auto tl = Tensor<float>::from({2, 3, 2}, {0, 1, 0, 1, 1, 0, 0, 1, 1, 0, 9, 0});
  CHECK(accuracy(tl, tok) == doctest::Approx(3.0 / 5.0));
}
