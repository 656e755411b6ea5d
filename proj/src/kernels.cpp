#include "transkim/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#if defined(TRANSKIM_HAVE_OPENMP)
#include <omp.h>
#endif

namespace transkim::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelGemmWork = 1 << 15;

template <typename T>
T gelu_scalar(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

}  // namespace

int max_threads() {
#if defined(TRANSKIM_HAVE_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void gemm_reference(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                    std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * m + i] : a[i * k + p];
        const T bv = trans_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
  [[maybe_unused]] const bool par = m * n * k >= kParallelGemmWork;
  if (!trans_a && !trans_b) {
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      T* crow = c + i * n;
      if (!accumulate) std::fill(crow, crow + n, T(0));
      const T* arow = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = arow[p];
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // Transpose B once so the inner loop runs over contiguous memory; each
    // output still accumulates its products in p order.
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    gemm(false, false, m, n, k, a, bt.data(), c, accumulate);
  } else if (trans_a && !trans_b) {
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      T* crow = c + i * n;
      if (!accumulate) std::fill(crow, crow + n, T(0));
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[p * m + i];
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        crow[j] = accumulate ? crow[j] + acc : acc;
      }
    }
  }
}

template <typename T>
std::size_t softmax_rows_reference(const T* x, T* y, std::size_t rows,
                                   std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * n;
    T* yr = y + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xr[j]);
    if (mx == -std::numeric_limits<T>::infinity()) return r;
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
  }
  return rows;
}

template <typename T>
std::size_t softmax_rows(const T* x, T* y, std::size_t rows, std::size_t n) {
  std::size_t bad = rows;
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) reduction(min : bad) if (rows * n >= 4096)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    const T* xr = x + r * n;
    T* yr = y + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = xr[j] > mx ? xr[j] : mx;
    if (mx == -std::numeric_limits<T>::infinity()) {
      bad = std::min(bad, static_cast<std::size_t>(r));
      continue;
    }
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
  }
  return bad;
}

template <typename T>
std::size_t masked_softmax_rows(const T* x, const T* mask, T* y,
                                std::size_t rows, std::size_t n,
                                std::size_t rows_per_mask) {
  std::size_t bad = rows;
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) reduction(min : bad) if (rows * n >= 4096)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    const T* xr = x + r * n;
    const T* mr = mask + (static_cast<std::size_t>(r) / rows_per_mask) * n;
    T* yr = y + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mr[j] != T(0) && xr[j] > mx) mx = xr[j];
    }
    if (mx == -std::numeric_limits<T>::infinity()) {
      bad = std::min(bad, static_cast<std::size_t>(r));
      continue;
    }
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = mr[j] != T(0) ? mr[j] * std::exp(xr[j] - mx) : T(0);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
  }
  return bad;
}

template <typename T>
void layer_norm_rows_reference(const T* x, const T* gain, const T* bias, T eps,
                               std::size_t rows, std::size_t d, T* y, T* mean,
                               T* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      y[r * d + j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    }
    if (mean) mean[r] = mu;
    if (rstd) rstd[r] = rs;
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T eps,
                     std::size_t rows, std::size_t d, T* y, T* mean, T* rstd) {
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * d >= 4096)
  for (std::ptrdiff_t r = 0; r < nrows; ++r) {
    const T* xr = x + r * d;
    T* yr = y + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = xr[j] - mu;
      var += c * c;
    }
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    if (mean) mean[r] = mu;
    if (rstd) rstd[r] = rs;
  }
}

template <typename T>
void gelu_reference(const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

template <typename T>
void gelu(const T* x, T* y, std::size_t n) {
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n >= 16384)
  for (std::ptrdiff_t i = 0; i < count; ++i) y[i] = gelu_scalar(x[i]);
}

#define TRANSKIM_INSTANTIATE_KERNELS(T)                                        \
  template void gemm_reference<T>(bool, bool, std::size_t, std::size_t,        \
                                  std::size_t, const T*, const T*, T*, bool);  \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t,     \
                        const T*, const T*, T*, bool);                         \
  template std::size_t softmax_rows_reference<T>(const T*, T*, std::size_t,    \
                                                 std::size_t);                 \
  template std::size_t softmax_rows<T>(const T*, T*, std::size_t,              \
                                       std::size_t);                           \
  template std::size_t masked_softmax_rows<T>(                                 \
      const T*, const T*, T*, std::size_t, std::size_t, std::size_t);          \
  template void layer_norm_rows_reference<T>(const T*, const T*, const T*, T,  \
                                             std::size_t, std::size_t, T*, T*, \
                                             T*);                              \
  template void layer_norm_rows<T>(const T*, const T*, const T*, T,            \
                                   std::size_t, std::size_t, T*, T*, T*);      \
  template void gelu_reference<T>(const T*, T*, std::size_t);                  \
  template void gelu<T>(const T*, T*, std::size_t);

TRANSKIM_INSTANTIATE_KERNELS(float)
TRANSKIM_INSTANTIATE_KERNELS(double)

#undef TRANSKIM_INSTANTIATE_KERNELS

}  // namespace transkim::kernels
