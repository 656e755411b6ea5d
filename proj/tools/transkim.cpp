#include <iostream>

#include <CLI11.hpp>

#include "transkim/commands.hpp"

int main(int argc, char** argv) {
  using namespace transkim;
  CLI::App app{"Transformer encoder with learned token skimming"};
  app.require_subcommand(1);

  CommandOptions opts;
  std::uint64_t seed = 0;
  std::string policy;
  std::string out;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "run config (key = value lines)");
    sub->add_option("--set", opts.overrides, "override KEY=VALUE, repeatable");
    sub->add_option("--seed", seed, "random seed (overrides the config)");
    sub->add_option("--policy", policy, "padding policy: sequence|batch|none");
    sub->add_option("--out", out, "output directory or file");
  };

  auto* train = app.add_subcommand("train", "train a model on a generated task");
  common(train);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and write a skim trace");
  common(eval);
  eval->add_option("--checkpoint", opts.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", opts.data, "dataset (ND-JSON)")->required();
  eval->add_option("--trace", opts.trace, "trace output path");
  auto* report = app.add_subcommand("report", "render a skim trace");
  common(report);
  report->add_option("--trace", opts.trace, "trace JSON")->required();
  report->add_option("--format", opts.format, "html|csv");
  auto* sweep = app.add_subcommand("sweep", "train one model per lambda and tabulate");
  common(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  for (auto* sub : {train, eval, report, sweep}) {
    if (sub->count("--seed")) opts.seed = seed;
    if (sub->count("--policy")) opts.policy = policy;
    if (sub->count("--out")) opts.out = out;
  }

  if (*train) return cmd_train(opts, std::cout, std::cerr);
  if (*eval) return cmd_eval(opts, std::cout, std::cerr);
  if (*report) return cmd_report(opts, std::cout, std::cerr);
  return cmd_sweep(opts, std::cout, std::cerr);
}
