// Serial reference kernels vs the OpenMP variants on encoder-sized problems.
//
//   bench_kernels [repeats]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "transkim/kernels.hpp"
#include "transkim/rng.hpp"

namespace k = transkim::kernels;

namespace {

double time_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

std::vector<float> random_vec(std::size_t n, transkim::Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, 1.0));
  return v;
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

void row(const std::string& name, double ref, double par, double diff) {
  std::printf("%-28s %10.3f %10.3f %8.2fx %10.2e\n", name.c_str(), ref, par, ref / par, diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 20;
  transkim::Rng rng(1);
  std::printf("threads: %d, repeats: %d\n", k::max_threads(), repeats);
  std::printf("%-28s %10s %10s %9s %10s\n", "kernel", "ref ms", "omp ms", "speedup", "max|diff|");

  for (const auto& [m, n, kk] : {std::tuple{1536, 64, 64}, std::tuple{1536, 256, 64},
                                std::tuple{1536, 64, 256}, std::tuple{128, 768, 768}}) {
    const auto a = random_vec(std::size_t(m) * kk, rng);
    const auto b = random_vec(std::size_t(kk) * n, rng);
    std::vector<float> c_ref(std::size_t(m) * n), c_par(c_ref.size());
    for (const auto& [ta, tb] : {std::pair{false, false}, std::pair{false, true},
                                std::pair{true, false}}) {
      const double tr = time_ms([&] { k::gemm_reference(ta, tb, m, n, kk, a.data(), b.data(),
                                                        c_ref.data(), false); }, repeats);
      const double tp = time_ms([&] { k::gemm(ta, tb, m, n, kk, a.data(), b.data(),
                                              c_par.data(), false); }, repeats);
      const std::string name = std::string("gemm ") + (ta ? "T" : "N") + (tb ? "T" : "N") + " " +
                               std::to_string(m) + "x" + std::to_string(n) + "x" +
                               std::to_string(kk);
      row(name, tr, tp, max_diff(c_ref, c_par));
    }
  }

  {
    const std::size_t rows = 4 * 32 * 49;
    const std::size_t n = 49;
    const auto x = random_vec(rows * n, rng);
    std::vector<float> y_ref(x.size()), y_par(x.size());
    const double tr = time_ms([&] { k::softmax_rows_reference(x.data(), y_ref.data(), rows, n); }, repeats);
    const double tp = time_ms([&] { k::softmax_rows(x.data(), y_par.data(), rows, n); }, repeats);
    row("softmax 6272x49", tr, tp, max_diff(y_ref, y_par));
  }
  {
    const std::size_t rows = 32 * 49;
    const std::size_t d = 256;
    const auto x = random_vec(rows * d, rng);
    const auto gain = random_vec(d, rng);
    const auto bias = random_vec(d, rng);
    std::vector<float> y_ref(x.size()), y_par(x.size());
    const double tr = time_ms([&] { k::layer_norm_rows_reference<float>(x.data(), gain.data(), bias.data(),
                                                                 1e-5f, rows, d, y_ref.data(),
                                                                 nullptr, nullptr); }, repeats);
    const double tp = time_ms([&] { k::layer_norm_rows<float>(x.data(), gain.data(), bias.data(), 1e-5f,
                                                       rows, d, y_par.data(), nullptr,
                                                       nullptr); }, repeats);
    row("layer_norm 1568x256", tr, tp, max_diff(y_ref, y_par));
  }
  {
    const auto x = random_vec(32 * 49 * 256, rng);
    std::vector<float> y_ref(x.size()), y_par(x.size());
    const double tr = time_ms([&] { k::gelu_reference(x.data(), y_ref.data(), x.size()); }, repeats);
    const double tp = time_ms([&] { k::gelu(x.data(), y_par.data(), x.size()); }, repeats);
    row("gelu 401408", tr, tp, max_diff(y_ref, y_par));
  }
  return 0;
}
