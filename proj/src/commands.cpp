#include "transkim/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "transkim/errors.hpp"
#include "transkim/model.hpp"
#include "transkim/report.hpp"
#include "transkim/run_config.hpp"
#include "transkim/train.hpp"

namespace transkim {

namespace fs = std::filesystem;

namespace {

RunConfig load_config(const CommandOptions& opts) {
  if (opts.config_path.empty()) throw ConfigError("--config is required");
  std::vector<std::string> overrides = opts.overrides;
  if (opts.seed) overrides.push_back("seed=" + std::to_string(*opts.seed));
  if (opts.policy) overrides.push_back("eval.policy=" + *opts.policy);
  if (opts.out) overrides.push_back("out_dir=" + *opts.out);
  return RunConfig::load(opts.config_path, overrides);
}

std::vector<Example> generate(const RunConfig& c, int n, std::uint64_t seed) {
  const auto& t = c.task;
  if (t.kind == TaskKind::kNeedle) {
    return gen_needle(n, t.seq_len_min, t.seq_len_max, t.n_signal, c.model.vocab_size, seed);
  }
  return gen_span(n, t.seq_len_min, t.seq_len_max, t.span_len_min, t.span_len_max,
                  c.model.vocab_size, seed);
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("out_dir: cannot create '" + dir + "': " + ec.message());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void print_eval(std::ostream& out, const EvalResult& r) {
  out << "accuracy          " << fmt("%.4f", r.accuracy) << '\n'
      << "skim recall       " << fmt("%.4f", r.quality.skim_recall) << '\n'
      << "keep precision    " << fmt("%.4f", r.quality.keep_precision) << '\n'
      << "policy            " << to_string(r.flops.policy) << '\n'
      << "baseline FLOPs    " << r.flops.baseline_flops << '\n'
      << "skimmed FLOPs     " << r.flops.skimmed_flops << '\n'
      << "predictor FLOPs   " << r.flops.predictor_overhead_flops << '\n'
      << "speedup           " << fmt("%.3fx", r.flops.speedup) << '\n'
      << "retention        ";
  for (const double v : r.retention) out << ' ' << fmt("%.4f", v);
  out << '\n';
}

// Exit code 4 when the dataset cannot be fed to this model.
void check_compatible(const ModelConfig& cfg, const std::vector<Example>& data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    const std::string at = "example " + std::to_string(i) + ": ";
    if (ex.true_len > cfg.max_len) {
      throw CompatibilityError(at + "length " + std::to_string(ex.true_len) +
                               " exceeds the model's max_len " + std::to_string(cfg.max_len));
    }
    for (const int id : ex.token_ids) {
      if (id < 0 || id >= cfg.vocab_size) {
        throw CompatibilityError(at + "token id " + std::to_string(id) +
                                 " outside the model vocabulary of " +
                                 std::to_string(cfg.vocab_size) + " (config " + cfg.digest() + ")");
      }
    }
    if (ex.is_token_task() != (cfg.head == HeadKind::kToken)) {
      throw CompatibilityError(at + "label kind does not match the model's " +
                               to_string(cfg.head) + " head");
    }
  }
}

}  // namespace

int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = load_config(opts);
    make_dir(cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    const auto seed = cfg.optimizer.seed;
    const auto train = generate(cfg, cfg.task.n_train, seed);
    const auto held = generate(cfg, cfg.task.n_eval, seed + 1);
    write_dataset((dir / "train.jsonl").string(), train);
    write_dataset((dir / "eval.jsonl").string(), held);
    {
      std::ofstream os(dir / "config.resolved");
      os << cfg.resolved();
    }
    Model<float> model = Model<float>::init(cfg.model, seed);
    std::ofstream metrics(dir / "metrics.jsonl");
    const auto log = train_loop(model, train, cfg.optimizer, &metrics);
    save_checkpoint(model, (dir / "model.tskm").string());
    const auto last = log.back();
    out << "trained " << log.size() << " epochs, " << last.step << " steps; final loss "
        << fmt("%.4f", last.loss_total) << ", train acc " << fmt("%.4f", last.acc) << '\n';
    const EvalResult ev = evaluate(model, held, cfg.eval_policy);
    print_eval(out, ev);
    out << "wrote " << (dir / "model.tskm").string() << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const NumericFault& e) {
    err << "divergence: " << e.what() << " (layer " << e.layer() << ")\n";
    return kExitDivergence;
  }
}

int cmd_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  PaddingPolicy policy = PaddingPolicy::kNone;
  try {
    if (opts.policy) policy = parse_policy(*opts.policy);
    if (opts.checkpoint.empty() || opts.data.empty()) {
      throw ConfigError("eval needs --checkpoint and --data");
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    const Model<float> model = load_checkpoint(opts.checkpoint);
    const auto data = read_dataset(opts.data);
    if (data.empty()) throw SchemaError(opts.data + ": no examples");
    check_compatible(model.config(), data);
    const EvalResult ev = evaluate(model, data, policy);
    print_eval(out, ev);
    const std::string trace_path =
        !opts.trace.empty()
            ? opts.trace
            : (fs::path(opts.checkpoint).parent_path() / "trace.json").string();
    write_trace(trace_path, ev.trace);
    out << "wrote " << trace_path << '\n';
    return kExitOk;
  } catch (const CompatibilityError& e) {
    err << "incompatible input: " << e.what() << '\n';
    return kExitCompatibility;
  } catch (const SchemaError& e) {
    err << "malformed input: " << e.what() << '\n';
    return kExitMalformed;
  }
}

int cmd_report(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  if (opts.format != "html" && opts.format != "csv") {
    err << "config error: --format must be html or csv, got '" << opts.format << "'\n";
    return kExitConfig;
  }
  if (opts.trace.empty()) {
    err << "config error: report needs --trace\n";
    return kExitConfig;
  }
  try {
    SkimTrace trace = read_trace(opts.trace);
    if (const std::size_t L = trace_layers(trace); L > 0) trace = read_trace(opts.trace, L);
    const std::string text = opts.format == "html" ? render_html(trace) : render_csv(trace);
    if (opts.out) {
      std::ofstream os(*opts.out);
      if (!os) {
        err << "config error: cannot write " << *opts.out << '\n';
        return kExitConfig;
      }
      os << text;
    } else {
      out << text;
    }
    return kExitOk;
  } catch (const SchemaError& e) {
    err << "malformed trace: " << e.what() << '\n';
    return kExitMalformed;
  } catch (const EmptyInputError& e) {
    err << "malformed trace: " << e.what() << '\n';
    return kExitMalformed;
  }
}

int cmd_sweep(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  try {
    const RunConfig cfg = load_config(opts);
    if (cfg.lambda_grid.empty()) throw ConfigError("sweep.lambdas: empty lambda grid");
    make_dir(cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    const auto seed = cfg.optimizer.seed;
    auto data = generate(cfg, cfg.task.n_train, seed);
    Rng split_rng(seed + 7);
    std::shuffle(data.begin(), data.end(), split_rng.engine());
    const std::size_t n_train = data.size() * 4 / 5;
    if (n_train == 0 || n_train == data.size()) {
      throw ConfigError("task.n_train: too small for an 80/20 split");
    }
    const std::span<const Example> train(data.data(), n_train);
    const std::span<const Example> dev(data.data() + n_train, data.size() - n_train);

    std::ofstream csv(dir / "sweep.csv");
    csv << "lambda,dev_accuracy,speedup\n";
    out << "lambda  dev_acc  speedup\n";
    for (const double lambda : cfg.lambda_grid) {
      ModelConfig mc = cfg.model;
      mc.lambda = lambda;
      Model<float> model = Model<float>::init(mc, seed);
      const fs::path sub = dir / ("lambda_" + fmt("%.2f", lambda));
      make_dir(sub.string());
      std::ofstream metrics(sub / "metrics.jsonl");
      train_loop(model, train, cfg.optimizer, &metrics);
      const EvalResult ev = evaluate(model, dev, cfg.eval_policy);
      csv << fmt("%.6g", lambda) << ',' << fmt("%.6f", ev.accuracy) << ','
          << fmt("%.6f", ev.flops.speedup) << '\n';
      csv.flush();
      out << fmt("%-6.2f", lambda) << "  " << fmt("%.4f", ev.accuracy) << "   "
          << fmt("%.3f", ev.flops.speedup) << '\n';
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const NumericFault& e) {
    err << "divergence: " << e.what() << " (layer " << e.layer() << ")\n";
    return kExitDivergence;
  }
}

}  // namespace transkim
