#include <doctest.h>

#include <sstream>
#include <vector>

#include "../support/stats.hpp"
#include "transkim/errors.hpp"
#include "transkim/model.hpp"
#include "transkim/runtime.hpp"
#include "transkim/train.hpp"

using namespace transkim;

namespace {

ModelConfig toy() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ffn = 32;
  c.vocab_size = 64;
  c.max_len = 16;
  c.lambda = 0.2;
  return c;
}

}  // namespace

TEST_CASE("identical seeds give byte-identical checkpoints") {
  const auto data = gen_needle(96, 4, 12, 2, 64, 3);
  OptimizerConfig oc;
  oc.epochs = 2;
  oc.batch_size = 16;
  auto a = Model<float>::init(toy(), 5);
  auto b = Model<float>::init(toy(), 5);
  std::ostringstream la, lb;
  train_loop(a, data, oc, &la);
  train_loop(b, data, oc, &lb);
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  CHECK(la.str() == lb.str());
}

TEST_CASE("learning-rate schedule") {
  OptimizerConfig oc;
  oc.lr = 1.0;
  oc.warmup_frac = 0.1;
  CHECK(scheduled_lr(oc, 0, 100) == doctest::Approx(0.1));
  CHECK(scheduled_lr(oc, 9, 100) == doctest::Approx(1.0));
  CHECK(scheduled_lr(oc, 10, 100) == doctest::Approx(1.0));
  CHECK(scheduled_lr(oc, 55, 100) == doctest::Approx(0.5));
  CHECK(scheduled_lr(oc, 99, 100) == doctest::Approx(1.0 / 90));
}

TEST_CASE("runaway loss aborts training") {
  const auto data = gen_needle(64, 4, 12, 2, 64, 3);
  OptimizerConfig oc;
  oc.epochs = 4;
  oc.batch_size = 16;
  oc.lr = 1e6;
  oc.warmup_frac = 0;
  auto m = Model<float>::init(toy(), 5);
  bool aborted = false;
  try {
    train_loop(m, data, oc);
  } catch (const DivergenceError&) {
    aborted = true;
  } catch (const NumericFault&) {
    aborted = true;
  }
  CHECK(aborted);
}

TEST_CASE("skim loss falls over 200 training steps on the desk config") {
  ModelConfig cfg;
  cfg.lambda = 0.3;
  cfg.mu0 = 2.0;  // desk-scale bias gap; 5 barely moves in 200 steps
  auto model = Model<float>::init(cfg, 42);
  const auto data = gen_needle(6400, 16, 48, 3, cfg.vocab_size, 42);
  OptimizerConfig oc;
  std::vector<Tensor<float>> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  Adam adam(params, oc);
  Rng rng(1);
  std::vector<double> steps, skim;
  const int total = 200;
  for (int s = 0; s < total; ++s) {
    const std::span<const Example> chunk(data.data() + s * 32, 32);
    const Batch batch = pad_batch(chunk, PaddingPolicy::kBatch, cfg.max_len);
    model.zero_grad();
    Graph<float> g;
    const auto r = forward_train(g, model, batch, &rng);
    g.backward(r.loss_total);
    adam.step(scheduled_lr(oc, s, total));
    steps.push_back(s);
    skim.push_back(r.loss_skim.item());
  }
  const double rho = testing::spearman(steps, skim);
  MESSAGE("spearman(step, skim loss) = " << rho);
  CHECK(rho < -0.5);
}
