#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "transkim/flops_report.hpp"
#include "transkim/runtime.hpp"
#include "transkim/trace.hpp"

namespace transkim {

struct OptimizerConfig {
  double lr = 3e-4;
  double warmup_frac = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 42;
  PaddingPolicy policy = PaddingPolicy::kBatch;
};

// Adaptive-moment optimizer with bias correction.
class Adam {
 public:
  Adam(std::vector<Tensor<float>> params, const OptimizerConfig& cfg);
  // Applies one update at learning rate lr using the accumulated gradients.
  void step(double lr);
  std::int64_t steps() const { return t_; }

 private:
  std::vector<Tensor<float>> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  OptimizerConfig cfg_;
  std::int64_t t_ = 0;
};

// Linear warmup over warmup_frac of the steps, then linear decay to zero.
double scheduled_lr(const OptimizerConfig& cfg, std::int64_t step, std::int64_t total_steps);

struct EpochMetrics {
  int epoch = 0;
  std::int64_t step = 0;
  double loss_total = 0.0;
  double loss_downstream = 0.0;
  double loss_skim = 0.0;
  double acc = 0.0;
  std::vector<double> kept_frac;  // real tokens entering each layer / real tokens
};

// One line of the metrics log.
std::string metrics_json(const EpochMetrics& m);

// Trains in place. Each epoch reshuffles the data with a generator seeded
// from cfg.seed and the epoch index, so a run is a pure function of
// (model, data, cfg). Throws DivergenceError when the epoch-mean total loss
// exceeds 10x the first batch's loss for 3 consecutive epochs.
std::vector<EpochMetrics> train_loop(Model<float>& model, std::span<const Example> data,
                                     const OptimizerConfig& cfg,
                                     std::ostream* metrics_log = nullptr,
                                     const std::function<void(const EpochMetrics&)>& on_epoch = {});

struct EvalResult {
  double accuracy = 0.0;
  SkimTrace trace;
  FlopsReport flops;
  SkimQuality quality;
  std::vector<double> retention;
};

// Gathered inference over the examples in order, batch_size at a time.
EvalResult evaluate(const Model<float>& model, std::span<const Example> data,
                    PaddingPolicy policy, int batch_size = 32);

}  // namespace transkim
