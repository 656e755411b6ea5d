// Runs the nine acceptance criteria and prints one PASS/FAIL line for each.
//
//   acceptance [--only 1,4] [--expect-fail 6]
//
// Exit status is 0 when every criterion that was not listed in --expect-fail
// passed.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/flops_oracle.hpp"
#include "../support/gradcheck.hpp"
#include "../support/html_check.hpp"
#include "../support/op_suite.hpp"
#include "../support/stats.hpp"
#include "transkim/errors.hpp"
#include "transkim/flops_report.hpp"
#include "transkim/report.hpp"
#include "transkim/runtime.hpp"
#include "transkim/skim.hpp"
#include "transkim/train.hpp"

using namespace transkim;
namespace tt = transkim::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Predictor bias gap used for the desk-scale training runs. The fresh-model
// criterion keeps the default of 5.
constexpr double kDeskMu0 = 2.0;

ModelConfig desk_model(double lambda) {
  ModelConfig c;
  c.lambda = lambda;
  c.mu0 = kDeskMu0;
  return c;
}

// 1. Finite-difference gradients for every op and for composed models.
Outcome gradients() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& name : tt::op_names()) {
    for (int rep = 0; rep < 20; ++rep) {
      auto c = tt::make_op_case(name, rng);
      const double e = tt::grad_check(c.params, c.loss).max_rel_error;
      if (e > worst_op) {
        worst_op = e;
        worst_name = name;
      }
    }
  }
  double worst_model = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto mc = tt::make_model_case(seed);
    auto c = tt::make_model_op_case(mc);
    worst_model = std::max(worst_model, tt::grad_check(c.params, c.loss).max_rel_error);
  }
  const double secs = seconds_since(t0);
  return {worst_op < 1e-4 && worst_model < 1e-3 && secs < 60.0,
          fmt("%zu ops x 20 shapes worst %.2e (%s), 20 models worst %.2e, %.1fs",
              tt::op_names().size(), worst_op, worst_name.c_str(), worst_model, secs)};
}

struct Triple {
  Model<float> model;
  Batch batch;
  ForwardOptions opts;
};

// Random model, padded batch and decision source. Half the triples use a
// random forced schedule, the rest the model's own argmax decisions with a
// small bias gap so both outcomes occur.
Triple random_triple(std::uint64_t seed, MaskMode mode) {
  Rng rng(seed);
  ModelConfig cfg;
  cfg.n_layers = rng.uniform_int(1, 4);
  cfg.n_heads = rng.uniform_int(1, 4);
  cfg.d_model = 4 * cfg.n_heads * rng.uniform_int(1, 2);
  cfg.d_ffn = 2 * cfg.d_model;
  cfg.vocab_size = 40;
  cfg.max_len = 16;
  cfg.mu0 = 0.3;
  cfg.sigma = 0.3;
  cfg.mask_mode = mode;
  cfg.head = rng.uniform() < 0.5 ? HeadKind::kSequence : HeadKind::kToken;
  std::vector<Example> ex(static_cast<std::size_t>(rng.uniform_int(1, 4)));
  for (auto& e : ex) {
    e.true_len = rng.uniform_int(2, cfg.max_len);
    e.token_ids.push_back(kClsId);
    for (int i = 1; i < e.true_len; ++i) e.token_ids.push_back(rng.uniform_int(4, 39));
    e.relevant.assign(static_cast<std::size_t>(e.true_len), false);
    if (cfg.head == HeadKind::kToken) e.token_labels.assign(static_cast<std::size_t>(e.true_len), 0);
  }
  Batch batch = pad_batch(ex, PaddingPolicy::kBatch, cfg.max_len);
  auto opts = ForwardOptions::with(DecisionSource::kArgmax);
  if (rng.uniform() < 0.5) {
    opts.decisions = DecisionSource::kForced;
    for (std::size_t i = 0; i < batch.batch * batch.seq; ++i) {
      opts.forced_prune_layer.push_back(rng.uniform_int(1, cfg.n_layers + 1));
    }
  }
  return {Model<float>::init(cfg, seed + 1000), std::move(batch), std::move(opts)};
}

// 2. Masked full-length pass against the gathered pass.
Outcome equivalence() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t tokens = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto t = random_triple(s, MaskMode::kAdditive);
    const auto eq = check_train_infer_equivalence(t.model, t.batch, t.opts);
    worst = std::max({worst, eq.max_abs_diff, eq.max_abs_logit_diff});
    tokens += eq.tokens_compared;
  }
  double mult = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto t = random_triple(s, MaskMode::kMultiplicative);
    const auto eq = check_train_infer_equivalence(t.model, t.batch, t.opts);
    mult = std::max({mult, eq.max_abs_diff, eq.max_abs_logit_diff});
  }
  std::printf("  multiplicative mode: max train/infer discrepancy %.3e over the same 100 triples\n",
              mult);
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 60.0,
          fmt("additive worst %.2e over %zu tokens, multiplicative %.2e (logged), %.1fs", worst,
              tokens, mult, secs)};
}

// 3. Cumulative masks from random raw decisions.
Outcome mask_algebra() {
  Rng rng(77);
  Graph<double> g(false);
  std::size_t violations = 0;
  double worst_loss = 0.0;
  const std::vector<std::size_t> cls{0};
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t L = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const std::size_t B = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const std::size_t N = static_cast<std::size_t>(rng.uniform_int(2, 12));
    std::vector<std::size_t> lens(B);
    for (auto& n : lens) n = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(N)));
    const double p_keep = rng.uniform();

    auto prev = Tensor<double>::zeros({B, N});
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t n = 0; n < lens[b]; ++n) prev[b * N + n] = 1.0;
    }
    std::vector<Tensor<double>> cum;
    for (std::size_t l = 0; l < L; ++l) {
      auto dec = Tensor<double>::zeros({B, N});
      for (auto& v : dec.data()) v = rng.uniform() < p_keep ? 1.0 : 0.0;
      auto next = accumulate_mask(g, prev, dec, cls, lens);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t n = 0; n < N; ++n) {
          const double v = next[b * N + n];
          const bool valid = n < lens[b];
          violations += v > prev[b * N + n] && !(n == 0 && valid);  // monotone
          violations += v != prev[b * N + n] * dec[b * N + n] && !(n == 0 && valid);
          violations += n == 0 && valid && v != 1.0;                // forced keep
          violations += !valid && v != 0.0;                         // padding
        }
      }
      cum.push_back(next);
      prev = next;
    }

    // Loss against a count of layers entered per token.
    std::vector<int> prune(B * N, 1);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t n = 0; n < N; ++n) {
        int p = 1;
        while (p <= static_cast<int>(L) && cum[p - 1][b * N + n] != 0.0) ++p;
        prune[b * N + n] = p;
      }
    }
    double expect = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      double entered = 0.0;
      for (std::size_t n = 0; n < lens[b]; ++n) entered += prune[b * N + n] - 1;
      expect += entered / static_cast<double>(L * lens[b]);
    }
    expect /= static_cast<double>(B);
    const double on_tape = skim_loss<double>(g, cum, lens).item();
    const auto state = SkimState::from_prune_layers(L, B, N, prune);
    try {
      state.check(cls, lens);
    } catch (const InvariantError&) {
      ++violations;
    }
    worst_loss = std::max({worst_loss, std::abs(on_tape - expect),
                           std::abs(skim_loss(state, lens) - expect)});
  }
  return {violations == 0 && worst_loss <= 1e-7,
          fmt("10000 mask tensors, %zu violations, skim-loss identity worst %.2e", violations,
              worst_loss)};
}

// 4. Gumbel keep frequencies and the straight-through gradient.
Outcome gumbel() {
  Rng rng(4);
  const std::size_t n = 100000;
  double worst = 0.0;
  for (int pair = 0; pair < 10; ++pair) {
    const double keep = rng.normal(0, 1.5);
    const double skim = rng.normal(0, 1.5);
    auto pi = Tensor<double>::zeros({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      pi[2 * i + kSkimChannel] = skim;
      pi[2 * i + kKeepChannel] = keep;
    }
    Graph<double> g(false);
    const auto d = gumbel_softmax_decision(g, pi, 0.1, &rng, DecisionMode::kTrain);
    double kept = 0;
    for (const double v : d.hard.data()) kept += v;
    const double want = 1.0 / (1.0 + std::exp(skim - keep));
    worst = std::max(worst, std::abs(kept / static_cast<double>(n) - want));
  }

  bool identical = true;
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t B = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const std::size_t N = static_cast<std::size_t>(rng.uniform_int(1, 16));
    auto logits = tt::random_tensor({B, N, 2}, rng, 2.0, true);
    auto noise = Tensor<double>::zeros({B, N, 2});
    for (auto& v : noise.data()) v = rng.gumbel();
    const auto w = tt::random_tensor({B, N}, rng);
    std::vector<std::vector<double>> grads;
    for (const bool hard : {true, false}) {
      logits.drop_grad();
      Graph<double> g;
      const auto d = gumbel_softmax_decision(g, logits, 0.1, nullptr, DecisionMode::kTrain, &noise);
      g.backward(tt::weighted_sum(g, hard ? d.hard : d.soft_keep, w));
      grads.emplace_back(logits.grad().begin(), logits.grad().end());
    }
    identical = identical && grads[0] == grads[1];
  }
  return {worst <= 0.01 && identical,
          fmt("10 logit pairs x 1e5 samples worst |freq - sigmoid| %.4f, ST == soft backward: %s",
              worst, identical ? "yes" : "no")};
}

// 5. Fresh models with the default unbalanced initialization.
Outcome unbalanced_init() {
  ModelConfig cfg;
  cfg.mu0 = 5.0;
  cfg.sigma = 0.02;
  double worst = 1.0;
  std::size_t inputs = 0;
  for (std::uint64_t m = 0; m < 10; ++m) {
    const auto model = Model<float>::init(cfg, 500 + m);
    const auto data = gen_needle(100, 16, 48, 3, cfg.vocab_size, 900 + m);
    std::vector<double> kept(static_cast<std::size_t>(cfg.n_layers), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); i += 25) {
      const Batch batch =
          pad_batch(std::span(data).subspan(i, 25), PaddingPolicy::kBatch, cfg.max_len);
      const auto r = forward_infer(model, batch);
      for (std::size_t b = 0; b < batch.batch; ++b) {
        total += static_cast<double>(batch.true_lens[b]);
        for (std::size_t l = 0; l < kept.size(); ++l) kept[l] += r.kept[b][l];
      }
    }
    for (const double k : kept) worst = std::min(worst, k / total);
    inputs += data.size();
  }
  return {worst >= 0.99,
          fmt("%zu inputs over 10 models, lowest per-layer keep fraction %.4f", inputs, worst)};
}

// 6. Analytic FLOPs against the instrumented counter, then the predictor
// overhead at BERT-base size.
Outcome flop_counts() {
  Rng rng(6);
  std::size_t mismatches = 0;
  const PaddingPolicy policies[] = {PaddingPolicy::kSequence, PaddingPolicy::kBatch,
                                    PaddingPolicy::kNone};
  for (int c = 0; c < 20; ++c) {
    ModelConfig cfg;
    cfg.n_layers = rng.uniform_int(1, 4);
    cfg.n_heads = rng.uniform_int(1, 3);
    cfg.d_model = cfg.n_heads * rng.uniform_int(2, 6);
    cfg.d_ffn = rng.uniform_int(4, 40);
    cfg.vocab_size = 48;
    cfg.max_len = rng.uniform_int(8, 24);
    cfg.mu0 = rng.uniform() < 0.5 ? 0.2 : 5.0;
    cfg.sigma = 0.5;
    const auto model = Model<float>::init(cfg, 60 + c);
    const auto data = gen_needle(rng.uniform_int(3, 9), 4, cfg.max_len - 1, 2, cfg.vocab_size, 70 + c);
    for (const auto policy : policies) {
      const auto cmp = tt::compare_flops(model, std::span<const Example>(data), policy, 4);
      mismatches += cmp.analytic.baseline_flops != cmp.measured_baseline;
      mismatches += cmp.analytic.skimmed_flops != cmp.measured_skimmed;
      mismatches += cmp.analytic.predictor_overhead_flops != cmp.measured_predictor;
    }
  }

  // One layer and one predictor at BERT-base size, measured and closed form.
  ModelConfig bert;
  bert.n_layers = 1;
  bert.n_heads = 12;
  bert.d_model = 768;
  bert.d_ffn = 3072;
  bert.vocab_size = 32;
  bert.max_len = 128;
  const auto model = Model<float>::init(bert, 1);
  const std::int64_t layer = layer_flops(bert, 128).total();
  const std::int64_t pred = predictor_flops(bert, 128).total();
  std::int64_t measured_pred = 0;
  {
    Graph<float> g(false);
    const auto h = Tensor<float>::zeros({1, 128, 768});
    flops::FlopScope scope;
    skim_predict(g, h, model.predictors[0], 1e-5f);
    measured_pred = scope.total();
  }
  const std::int64_t measured_layer = tt::measure_plain_stack(model, 128);
  mismatches += layer != measured_layer;
  mismatches += pred != measured_pred;
  const double overhead = static_cast<double>(pred) / static_cast<double>(layer);
  const bool in_band = overhead >= 0.05 && overhead <= 0.08;
  return {mismatches == 0 && in_band,
          fmt("20 configs x 3 policies + BERT-base: %zu mismatches; BERT-base n=128 predictor "
              "overhead %.2f%% (band 5%%..8%%)",
              mismatches, 100.0 * overhead)};
}

struct DeskRun {
  double accuracy = 0.0;
  double speedup = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  double train_seconds = 0.0;
};

DeskRun desk_run(double lambda, int n_train, int n_test, int epochs, bool dev_split) {
  const ModelConfig cfg = desk_model(lambda);
  std::vector<Example> train, test;
  if (dev_split) {
    // Same split as the sweep command.
    auto all = gen_needle(n_train, 16, 48, 3, cfg.vocab_size, 42);
    Rng split(42 + 7);
    std::shuffle(all.begin(), all.end(), split.engine());
    const auto cut = all.begin() + static_cast<std::ptrdiff_t>(all.size() * 4 / 5);
    train.assign(all.begin(), cut);
    test.assign(cut, all.end());
  } else {
    train = gen_needle(n_train, 16, 48, 3, cfg.vocab_size, 42);
    test = gen_needle(n_test, 16, 48, 3, cfg.vocab_size, 43);
  }
  auto model = Model<float>::init(cfg, 42);
  OptimizerConfig oc;
  oc.epochs = epochs;
  const auto t0 = Clock::now();
  train_loop(model, train, oc);
  DeskRun r;
  r.train_seconds = seconds_since(t0);
  const auto ev = evaluate(model, test, PaddingPolicy::kNone);
  r.accuracy = ev.accuracy;
  r.speedup = ev.flops.speedup;
  r.recall = ev.quality.skim_recall;
  r.precision = ev.quality.keep_precision;
  return r;
}

// 7. Desk-scale end-to-end runs.
Outcome desk_scale() {
  const auto base = desk_run(0.0, 2000, 500, 10, false);
  std::printf("  lambda=0:   acc %.4f in %.0fs\n", base.accuracy, base.train_seconds);
  const auto skim = desk_run(0.3, 2000, 500, 10, false);
  std::printf("  lambda=0.3: acc %.4f speedup %.2fx recall %.3f precision %.3f in %.0fs\n",
              skim.accuracy, skim.speedup, skim.recall, skim.precision, skim.train_seconds);
  const bool base_ok = base.accuracy >= 0.95 && base.train_seconds <= 300.0;
  const bool skim_ok = skim.accuracy >= 0.90 && skim.speedup >= 1.5 && skim.recall >= 0.8 &&
                       skim.precision >= 0.9;
  return {base_ok && skim_ok,
          fmt("baseline acc %.3f (%.0fs); lambda=0.3 acc %.3f speedup %.2fx recall %.3f "
              "precision %.3f",
              base.accuracy, base.train_seconds, skim.accuracy, skim.speedup, skim.recall,
              skim.precision)};
}

// 8. Lambda sweep on a smaller needle set with an 80/20 dev split.
Outcome sweep() {
  std::vector<double> lambdas, speedups, accs;
  for (int i = 1; i <= 10; ++i) {
    const double lambda = 0.1 * i;
    const auto r = desk_run(lambda, 2000, 0, 10, true);
    std::printf("  lambda=%.1f acc %.4f speedup %.2fx\n", lambda, r.accuracy, r.speedup);
    std::fflush(stdout);
    lambdas.push_back(lambda);
    speedups.push_back(r.speedup);
    accs.push_back(r.accuracy);
  }
  const double rho_speed = tt::spearman(lambdas, speedups);
  const double rho_acc = tt::spearman(lambdas, accs);
  return {rho_speed > 0.5 && rho_acc < -0.5,
          fmt("spearman(lambda, speedup) %.3f, spearman(lambda, accuracy) %.3f", rho_speed,
              rho_acc)};
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

double worst_csv_gap(const SkimTrace& t) {
  const auto curve = layerwise_curve(std::span<const SkimTrace>(&t, 1));
  std::istringstream csv(render_csv(t));
  std::string line;
  std::getline(csv, line);
  double worst = line == "layer,retention" ? 0.0 : 1.0;
  for (const double want : curve) {
    if (!std::getline(csv, line)) return 1.0;
    worst = std::max(worst, std::abs(std::stod(line.substr(line.find(',') + 1)) - want));
  }
  return worst;
}

// 9. Report files: golden trace plus random traces.
Outcome report() {
  const std::string dir = TRANSKIM_GOLDEN_DIR;
  const SkimTrace golden = read_trace(dir + "/trace.json", 4);
  const std::string html = render_html(golden);
  bool ok = html == slurp(dir + "/heatmap.html") && render_csv(golden) == slurp(dir + "/retention.csv");
  ok = ok && html.find("data-prune=\"5\" style=\"background:#000000\"") != std::string::npos;
  double worst = worst_csv_gap(golden);
  std::string problem = tt::html_problem(html);

  // Never-pruned black must differ from every prune-layer colour.
  for (int L = 1; L <= 24; ++L) {
    for (int k = 1; k <= L; ++k) {
      const Rgb c = prune_color(k, L);
      ok = ok && !(c.r == 0 && c.g == 0 && c.b == 0);
    }
  }

  Rng rng(9);
  const char* words[] = {"w10", "s04", "a<b", "x&y", "\"q\"", "[CLS]"};
  for (int t = 0; t < 200 && problem.empty(); ++t) {
    SkimTrace tr;
    tr.config_digest = "rand";
    const int L = rng.uniform_int(1, 12);
    for (int e = 0, ne = rng.uniform_int(1, 5); e < ne; ++e) {
      TraceExample ex;
      ex.id = static_cast<std::size_t>(e);
      ex.true_len = static_cast<std::size_t>(rng.uniform_int(1, 20));
      ex.batch_len = ex.true_len + static_cast<std::size_t>(rng.uniform_int(0, 3));
      ex.kept_per_layer.assign(static_cast<std::size_t>(L), 0);
      for (std::size_t n = 0; n < ex.true_len; ++n) {
        const int p = n == 0 ? L + 1 : rng.uniform_int(1, L + 1);
        ex.prune_layer.push_back(p);
        ex.tokens.emplace_back(words[rng.uniform_int(0, 5)]);
        for (int l = 1; l < p; ++l) ++ex.kept_per_layer[static_cast<std::size_t>(l - 1)];
      }
      tr.examples.push_back(ex);
    }
    worst = std::max(worst, worst_csv_gap(tr));
    problem = tt::html_problem(render_html(tr));
  }
  ok = ok && worst <= 1e-9 && problem.empty();
  return {ok, fmt("golden html/csv %s, csv vs curve worst %.1e, html %s",
                  html == slurp(dir + "/heatmap.html") ? "match" : "differ", worst,
                  problem.empty() ? "well formed" : problem.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::vector<int> expect_fail;
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_option("--expect-fail", expect_fail, "criteria whose failure is known")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, gradients},       {2, equivalence}, {3, mask_algebra},
      {4, gumbel},          {5, unbalanced_init}, {6, flop_counts},
      {7, desk_scale},      {8, sweep},       {9, report},
  };
  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> known(expect_fail.begin(), expect_fail.end());
  int unexpected = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const bool tolerated = !o.pass && known.contains(id);
    unexpected += !o.pass && !tolerated;
    std::printf("criterion %d: %s  %s [%.1fs]%s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                seconds_since(t0), tolerated ? " (known failure)" : "");
    std::fflush(stdout);
  }
  return unexpected == 0 ? 0 : 1;
}
