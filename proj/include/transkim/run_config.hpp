#pragma once

#include <span>
#include <string>
#include <vector>

#include "transkim/config.hpp"
#include "transkim/tasks.hpp"
#include "transkim/train.hpp"

namespace transkim {

struct TaskConfig {
  TaskKind kind = TaskKind::kNeedle;
  int n_train = 2000;
  int n_eval = 500;
  int seq_len_min = 16;
  int seq_len_max = 48;
  int n_signal = 3;
  int span_len_min = 1;
  int span_len_max = 4;
};

// Everything a command needs. Text form is UTF-8 `key = value` lines with
// dotted sections, `#` comments and blank lines, e.g.
//
//   model.d_model = 64
//   lambda = 0.3
//   sweep.lambdas = 0.1, 0.2, 0.3
struct RunConfig {
  ModelConfig model;
  TaskConfig task;
  OptimizerConfig optimizer;
  std::vector<double> lambda_grid;
  PaddingPolicy eval_policy = PaddingPolicy::kNone;
  std::string out_dir = "run";

  // Parses `text` (named `source` in messages), then applies overrides
  // ("key=value"), then validates. Every bad line, key or value is collected
  // and reported in one ConfigError, each as "<source>:<line>: <key>: ...".
  static RunConfig parse(const std::string& text, const std::string& source,
                         std::span<const std::string> overrides = {});
  static RunConfig load(const std::string& path, std::span<const std::string> overrides = {});

  // Every key in a fixed order; parse(resolved()) reproduces the config.
  std::string resolved() const;

  // Throws ConfigError listing every violated constraint.
  void validate() const;
};

// All recognised keys, in resolved() order.
std::vector<std::string> run_config_keys();

}  // namespace transkim
