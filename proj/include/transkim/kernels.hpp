#pragma once

// Dense compute kernels. Each kernel has a straightforward serial reference
// (kept for tests and the benchmark) and the production variant, which
// parallelizes over output rows with OpenMP. The production variants never
// split a reduction across threads, so results do not depend on the thread
// count.

#include <cstddef>

namespace transkim::kernels {

// C[m,n] = op(A)[m,k] * op(B)[k,n], or C += ... when accumulate is set.
// A is stored [m,k] (or [k,m] when trans_a), B is stored [k,n] (or [n,k]).
template <typename T>
void gemm_reference(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                    std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate);
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate);

// Row softmax over contiguous rows of length n. Entries equal to -inf map to
// exactly 0. Returns the index of the first fully masked row, or rows when
// every row had at least one finite entry.
template <typename T>
std::size_t softmax_rows_reference(const T* x, T* y, std::size_t rows,
                                   std::size_t n);
template <typename T>
std::size_t softmax_rows(const T* x, T* y, std::size_t rows, std::size_t n);

// Softmax restricted to keys with nonzero weight: y_j = m_j e_j / sum_k m_k e_k
// with e_j = exp(x_j - max over {k : m_k != 0} x_k). Row r uses mask row
// r / rows_per_mask. For a 0/1 mask the result is bit-identical to
// softmax_rows on x with -inf at the masked entries.
template <typename T>
std::size_t masked_softmax_rows(const T* x, const T* mask, T* y,
                                std::size_t rows, std::size_t n,
                                std::size_t rows_per_mask);

// y = (x - mean) * rstd * gain + bias per row of length d, population
// variance. mean/rstd receive one value per row when non-null.
template <typename T>
void layer_norm_rows_reference(const T* x, const T* gain, const T* bias, T eps,
                               std::size_t rows, std::size_t d, T* y, T* mean,
                               T* rstd);
template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T eps,
                     std::size_t rows, std::size_t d, T* y, T* mean, T* rstd);

// Exact GeLU, x * Phi(x).
template <typename T>
void gelu_reference(const T* x, T* y, std::size_t n);
template <typename T>
void gelu(const T* x, T* y, std::size_t n);

int max_threads();

}  // namespace transkim::kernels
