#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace transkim {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitCompatibility = 4;
inline constexpr int kExitMalformed = 5;

struct CommandOptions {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  std::optional<std::string> policy;
  std::string format = "html";
  std::optional<std::string> out;
  std::string checkpoint;
  std::string data;
  std::string trace;
};

// train: generate the task data, train, and write into the output directory
//   model.tskm, metrics.jsonl, config.resolved, train.jsonl, eval.jsonl.
int cmd_train(const CommandOptions& opts, std::ostream& out, std::ostream& err);

// eval: load a checkpoint, run gathered inference over a dataset, print the
// metrics table and write the trace (opts.trace, default trace.json next to
// the checkpoint).
int cmd_eval(const CommandOptions& opts, std::ostream& out, std::ostream& err);

// report: render a trace as HTML or CSV to opts.out (stdout when unset).
int cmd_report(const CommandOptions& opts, std::ostream& out, std::ostream& err);

// sweep: one model per lambda of sweep.lambdas on an 80/20 split of the
// generated training data; writes sweep.csv (lambda,dev_accuracy,speedup).
int cmd_sweep(const CommandOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace transkim
