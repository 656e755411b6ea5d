#include "transkim/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "transkim/errors.hpp"
#include "transkim/flops.hpp"
#include "transkim/kernels.hpp"

namespace transkim {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

enum BinaryKind { kAdd = 0, kSub = 1, kMul = 2 };

// Strides of `shape` left-padded to `rank`, with 0 along broadcast dims.
std::vector<std::size_t> broadcast_strides(const Shape& shape,
                                           const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const std::size_t src = shape.size() - 1 - i;
    const std::size_t dst = rank - 1 - i;
    strides[dst] = shape[src] == 1 ? 0 : stride;
    stride *= shape[src];
  }
  return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " +
                           shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
    if (da == 0 || db == 0) out[i] = 0;
  }
  return out;
}

// Calls f(out_index, a_index, b_index) for every element of `out`.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t total = numel_of(out);
  if (total == 0) return;
  if (out.empty()) {
    f(0, 0, 0);
    return;
  }
  const std::size_t rank = out.size();
  const std::size_t inner = out[rank - 1];
  const std::size_t ia_step = sa[rank - 1];
  const std::size_t ib_step = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, ia + j * ia_step, ib + j * ib_step);
    // odometer over the outer dims
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * idx[d];
      ib -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

void require_rank(const char* op, std::size_t rank, std::size_t min_rank,
                  const Shape& shape) {
  if (rank < min_rank) {
    throw DimensionError(std::string(op) + ": expected rank >= " +
                         std::to_string(min_rank) + ", got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
bool Graph<T>::wants_grad(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!recording_) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
Tensor<T> Graph<T>::make_output(Shape shape, bool grad) {
  return Tensor<T>::zeros(std::move(shape), grad);
}

template <typename T>
void Graph<T>::record(std::string_view op, std::vector<Tensor<T>> inputs,
                      Tensor<T> output, std::function<void()> backward) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void Graph<T>::backward(Tensor<T> root) {
  if (root.numel() != 1) {
    throw ContractError("backward: root must be a scalar, got shape " +
                        shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;
  for (auto& node : nodes_) node.output.zero_grad();
  root.ensure_grad()[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

template <typename T>
Tensor<T> Graph<T>::matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b) {
  require_rank("matmul", a.rank(), 2, a.shape());
  require_rank("matmul", b.rank(), 2, b.shape());
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t kb = trans_b ? b.dim(-1) : b.dim(-2);
  const std::size_t n = trans_b ? b.dim(-2) : b.dim(-1);
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ for " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                         (trans_b ? "^T" : ""));
  }
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shape(a_batch, b_batch, "matmul");
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  const bool grad = wants_grad({&a, &b});
  Tensor<T> out = make_output(out_shape, grad);

  // Offsets of each output batch into a and b.
  std::vector<std::size_t> a_off;
  std::vector<std::size_t> b_off;
  const std::size_t nbatch = numel_of(batch);
  const bool folded = b_batch.empty() && !trans_b;
  if (!folded) {
    a_off.resize(nbatch);
    b_off.resize(nbatch);
    const auto sa = broadcast_strides(a_batch, batch);
    const auto sb = broadcast_strides(b_batch, batch);
    for_each_broadcast(batch, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      a_off[o] = ia * m * k;
      b_off[o] = ib * k * n;
    });
  }

  flops::add(static_cast<std::int64_t>(2 * nbatch * m * n * k));
  if (folded) {
    // a batch must broadcast to itself here since b has none
    kernels::gemm(false, false, nbatch * m, n, k, a.data().data(), b.data().data(),
                  out.data().data(), false);
  } else {
    for (std::size_t i = 0; i < nbatch; ++i) {
      kernels::gemm(false, trans_b, m, n, k, a.data().data() + a_off[i],
                    b.data().data() + b_off[i], out.data().data() + i * m * n, false);
    }
  }

  if (grad) {
    record("matmul", {a, b}, out, [a, b, out, m, n, k, nbatch, folded, trans_b,
                                   a_off, b_off]() mutable {
      const T* g = out.grad().data();
      if (folded) {
        if (a.requires_grad()) {
          kernels::gemm(false, true, nbatch * m, k, n, g, b.data().data(),
                        a.ensure_grad().data(), true);
        }
        if (b.requires_grad()) {
          kernels::gemm(true, false, k, n, nbatch * m, a.data().data(), g,
                        b.ensure_grad().data(), true);
        }
        return;
      }
      for (std::size_t i = 0; i < nbatch; ++i) {
        const T* gi = g + i * m * n;
        if (a.requires_grad()) {
          // dA = dC * op(B)^T
          kernels::gemm(false, !trans_b, m, k, n, gi, b.data().data() + b_off[i],
                        a.ensure_grad().data() + a_off[i], true);
        }
        if (b.requires_grad()) {
          if (trans_b) {
            // B stored [n,k]: dB = dC^T * A
            kernels::gemm(true, false, n, k, m, gi, a.data().data() + a_off[i],
                          b.ensure_grad().data() + b_off[i], true);
          } else {
            kernels::gemm(true, false, k, n, m, a.data().data() + a_off[i], gi,
                          b.ensure_grad().data() + b_off[i], true);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::broadcast_binary(std::string_view op, const Tensor<T>& a,
                                     const Tensor<T>& b, int kind) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  const bool grad = wants_grad({&a, &b});
  Tensor<T> out = make_output(out_shape, grad);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  const bool same = a.shape() == b.shape();
  const std::size_t total = out.numel();
  auto apply = [kind](T x, T y) {
    return kind == kAdd ? x + y : kind == kSub ? x - y : x * y;
  };
  if (same) {
    for (std::size_t i = 0; i < total; ++i) po[i] = apply(pa[i], pb[i]);
  } else {
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      po[o] = apply(pa[ia], pb[ib]);
    });
  }
  flops::add(static_cast<std::int64_t>(total));

  if (grad) {
    record(op, {a, b}, out, [a, b, out, sa, sb, kind]() mutable {
      const T* g = out.grad().data();
      T* ga = a.requires_grad() ? a.ensure_grad().data() : nullptr;
      T* gb = b.requires_grad() ? b.ensure_grad().data() : nullptr;
      const T* va = a.data().data();
      const T* vb = b.data().data();
      for_each_broadcast(out.shape(), sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        if (ga) ga[ia] += kind == kMul ? g[o] * vb[ib] : g[o];
        if (gb) gb[ib] += kind == kMul ? g[o] * va[ia] : kind == kSub ? -g[o] : g[o];
      });
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary("add", a, b, kAdd);
}

template <typename T>
Tensor<T> Graph<T>::sub(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary("sub", a, b, kSub);
}

template <typename T>
Tensor<T> Graph<T>::mul(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary("mul", a, b, kMul);
}

template <typename T>
Tensor<T> Graph<T>::scale(const Tensor<T>& x, T s) {
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output(x.shape(), grad);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * s;
  flops::add(static_cast<std::int64_t>(x.numel()));
  if (grad) {
    record("scale", {x}, out, [x, out, s]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::add_scalar(const Tensor<T>& x, T s) {
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output(x.shape(), grad);
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + s;
  flops::add(static_cast<std::int64_t>(x.numel()));
  if (grad) {
    record("add_scalar", {x}, out, [x, out]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::softmax_lastdim(const Tensor<T>& x) {
  require_rank("softmax_lastdim", x.rank(), 1, x.shape());
  const std::size_t n = x.dim(-1);
  if (n == 0) throw DimensionError("softmax_lastdim: empty last dimension");
  const std::size_t rows = x.numel() / n;
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output(x.shape(), grad);
  const std::size_t bad = kernels::softmax_rows(x.data().data(), out.data().data(), rows, n);
  if (bad != rows) {
    throw DegenerateRowError("softmax_lastdim: row " + std::to_string(bad) +
                             " has every entry at -inf");
  }
  flops::add(flops::kSoftmaxPerElement * static_cast<std::int64_t>(x.numel()));
  if (grad) {
    record("softmax", {x}, out, [x, out, rows, n]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      auto y = out.data();
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::log_softmax_lastdim(const Tensor<T>& x) {
  require_rank("log_softmax_lastdim", x.rank(), 1, x.shape());
  const std::size_t n = x.dim(-1);
  if (n == 0) throw DimensionError("log_softmax_lastdim: empty last dimension");
  const std::size_t rows = x.numel() / n;
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output(x.shape(), grad);
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[r * n + j]);
    if (mx == -std::numeric_limits<T>::infinity()) {
      throw DegenerateRowError("log_softmax_lastdim: row " + std::to_string(r) +
                               " has every entry at -inf");
    }
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(x[r * n + j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[r * n + j] - lse;
  }
  flops::add(flops::kSoftmaxPerElement * static_cast<std::int64_t>(x.numel()));
  if (grad) {
    record("log_softmax", {x}, out, [x, out, rows, n]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      auto y = out.data();
      for (std::size_t r = 0; r < rows; ++r) {
        T gsum = T(0);
        for (std::size_t j = 0; j < n; ++j) gsum += g[r * n + j];
        for (std::size_t j = 0; j < n; ++j) {
          gx[r * n + j] += g[r * n + j] - std::exp(y[r * n + j]) * gsum;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::masked_softmax(const Tensor<T>& x, const Tensor<T>& key_mask) {
  require_rank("masked_softmax", x.rank(), 2, x.shape());
  const std::size_t n = x.dim(-1);
  if (key_mask.rank() != 2 || key_mask.dim(0) != x.dim(0) || key_mask.dim(1) != n) {
    throw DimensionError("masked_softmax: mask " + shape_str(key_mask.shape()) +
                         " does not match scores " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  const std::size_t rows_per_mask = rows / x.dim(0);
  const bool grad = wants_grad({&x, &key_mask});
  Tensor<T> out = make_output(x.shape(), grad);
  const std::size_t bad = kernels::masked_softmax_rows(
      x.data().data(), key_mask.data().data(), out.data().data(), rows, n, rows_per_mask);
  if (bad != rows) {
    throw DegenerateRowError("masked_softmax: row " + std::to_string(bad) +
                             " has no unmasked key");
  }
  flops::add(flops::kSoftmaxPerElement * static_cast<std::int64_t>(x.numel()));
  if (grad) {
    record("masked_softmax", {x, key_mask}, out,
           [x, key_mask, out, rows, n, rows_per_mask]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto m = key_mask.data();
      T* gx = x.requires_grad() ? x.ensure_grad().data() : nullptr;
      T* gm = key_mask.requires_grad() ? key_mask.ensure_grad().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t mrow = (r / rows_per_mask) * n;
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        if (gx) {
          for (std::size_t j = 0; j < n; ++j) {
            gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
          }
        }
        if (gm) {
          // dy_i/dm_j = (delta_ij - y_i) e_j / Z, so dL/dm_j = (e_j / Z)(g_j - dot).
          T mx = -std::numeric_limits<T>::infinity();
          for (std::size_t j = 0; j < n; ++j) {
            if (m[mrow + j] != T(0)) mx = std::max(mx, x[r * n + j]);
          }
          T z = T(0);
          for (std::size_t j = 0; j < n; ++j) {
            if (m[mrow + j] != T(0)) z += m[mrow + j] * std::exp(x[r * n + j] - mx);
          }
          for (std::size_t j = 0; j < n; ++j) {
            const T e = std::exp(std::min(x[r * n + j] - mx, T(60)));
            gm[mrow + j] += e / z * (g[r * n + j] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                               const Tensor<T>& bias, T eps) {
  require_rank("layer_norm", x.rank(), 1, x.shape());
  const std::size_t d = x.dim(-1);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match input " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = d ? x.numel() / d : 0;
  const bool grad = wants_grad({&x, &gain, &bias});
  Tensor<T> out = make_output(x.shape(), grad);
  std::vector<T> mean(rows);
  std::vector<T> rstd(rows);
  kernels::layer_norm_rows(x.data().data(), gain.data().data(), bias.data().data(), eps,
                           rows, d, out.data().data(), mean.data(), rstd.data());
  flops::add(flops::kLayerNormPerElement * static_cast<std::int64_t>(x.numel()));
  if (grad) {
    record("layer_norm", {x, gain, bias}, out,
           [x, gain, bias, out, rows, d, mean = std::move(mean),
            rstd = std::move(rstd)]() mutable {
      auto g = out.grad();
      auto xv = x.data();
      auto gv = gain.data();
      T* gx = x.requires_grad() ? x.ensure_grad().data() : nullptr;
      T* gg = gain.requires_grad() ? gain.ensure_grad().data() : nullptr;
      T* gb = bias.requires_grad() ? bias.ensure_grad().data() : nullptr;
      std::vector<T> xhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_gy = T(0);
        T mean_gyx = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          xhat[j] = (xv[r * d + j] - mean[r]) * rstd[r];
          const T gy = g[r * d + j] * gv[j];
          mean_gy += gy;
          mean_gyx += gy * xhat[j];
          if (gg) gg[j] += g[r * d + j] * xhat[j];
          if (gb) gb[j] += g[r * d + j];
        }
        if (!gx) continue;
        mean_gy /= T(d);
        mean_gyx /= T(d);
        for (std::size_t j = 0; j < d; ++j) {
          const T gy = g[r * d + j] * gv[j];
          gx[r * d + j] += rstd[r] * (gy - mean_gy - xhat[j] * mean_gyx);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::gelu(const Tensor<T>& x) {
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output(x.shape(), grad);
  kernels::gelu(x.data().data(), out.data().data(), x.numel());
  flops::add(flops::kGeluPerElement * static_cast<std::int64_t>(x.numel()));
  if (grad) {
    record("gelu", {x}, out, [x, out]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      auto xv = x.data();
      constexpr T kInvSqrt2 = T(0.70710678118654752440);
      constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xv[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
        const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::gather_rows(const Tensor<T>& x, std::span<const std::size_t> keep) {
  if (x.rank() != 2) {
    throw DimensionError("gather_rows: expected [n,d], got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t d = x.dim(1);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] >= n || (i > 0 && keep[i] <= keep[i - 1])) {
      throw IndexError("gather_rows: keep list must be strictly increasing within [0," +
                       std::to_string(n) + "), bad entry " + std::to_string(keep[i]) +
                       " at position " + std::to_string(i));
    }
  }
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output({keep.size(), d}, grad);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::copy_n(x.data().data() + keep[i] * d, d, out.data().data() + i * d);
  }
  if (grad) {
    std::vector<std::size_t> idx(keep.begin(), keep.end());
    record("gather_rows", {x}, out, [x, out, idx = std::move(idx), d]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) gx[idx[i] * d + j] += g[i * d + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::scatter_rows(const Tensor<T>& x, std::span<const std::size_t> keep,
                                 std::size_t n) {
  if (x.rank() != 2 || x.dim(0) != keep.size()) {
    throw DimensionError("scatter_rows: expected [" + std::to_string(keep.size()) +
                         ",d], got " + shape_str(x.shape()));
  }
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] >= n || (i > 0 && keep[i] <= keep[i - 1])) {
      throw IndexError("scatter_rows: keep list must be strictly increasing within [0," +
                       std::to_string(n) + ")");
    }
  }
  const std::size_t d = x.dim(1);
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output({n, d}, grad);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    std::copy_n(x.data().data() + i * d, d, out.data().data() + keep[i] * d);
  }
  if (grad) {
    std::vector<std::size_t> idx(keep.begin(), keep.end());
    record("scatter_rows", {x}, out, [x, out, idx = std::move(idx), d]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[idx[i] * d + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  const bool grad = wants_grad({&x});
  Tensor<T> out = Tensor<T>::from(std::move(shape), x.storage(), grad);
  if (grad) {
    record("reshape", {x}, out, [x, out]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::transpose(const Tensor<T>& x, int dim0, int dim1) {
  const auto rank = static_cast<int>(x.rank());
  if (dim0 < 0) dim0 += rank;
  if (dim1 < 0) dim1 += rank;
  if (dim0 < 0 || dim1 < 0 || dim0 >= rank || dim1 >= rank) {
    throw DimensionError("transpose: dims out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  std::swap(out_shape[dim0], out_shape[dim1]);
  // Input strides permuted into output order.
  std::vector<std::size_t> in_strides(rank);
  std::size_t stride = 1;
  for (int i = rank - 1; i >= 0; --i) {
    in_strides[i] = stride;
    stride *= x.shape()[i];
  }
  std::swap(in_strides[dim0], in_strides[dim1]);
  const std::vector<std::size_t> zero(rank, 0);
  std::vector<std::size_t> map(x.numel());
  for_each_broadcast(out_shape, in_strides, zero,
                     [&](std::size_t o, std::size_t i, std::size_t) { map[o] = i; });
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output(out_shape, grad);
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = x[map[o]];
  if (grad) {
    record("transpose", {x}, out, [x, out, map = std::move(map)]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::select_lastdim(const Tensor<T>& x, std::size_t idx) {
  require_rank("select_lastdim", x.rank(), 1, x.shape());
  const std::size_t c = x.dim(-1);
  if (idx >= c) {
    throw IndexError("select_lastdim: index " + std::to_string(idx) +
                     " out of range for " + shape_str(x.shape()));
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output(out_shape, grad);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i * c + idx];
  if (grad) {
    record("select_lastdim", {x}, out, [x, out, c, idx]() mutable {
      auto gx = x.ensure_grad();
      auto g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i * c + idx] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::sum(const Tensor<T>& x) {
  const bool grad = wants_grad({&x});
  Tensor<T> out = make_output({}, grad);
  T acc = T(0);
  for (const T v : x.data()) acc += v;
  out[0] = acc;
  if (grad) {
    record("sum", {x}, out, [x, out]() mutable {
      auto gx = x.ensure_grad();
      const T g = out.grad()[0];
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> Graph<T>::cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                                  std::span<const T> weights) {
  if (logits.rank() != 2 || targets.size() != logits.dim(0) ||
      weights.size() != logits.dim(0)) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) +
                         " vs " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t rows = logits.dim(0);
  const std::size_t c = logits.dim(1);
  const bool grad = wants_grad({&logits});
  Tensor<T> out = make_output({}, grad);
  std::vector<T> probs(rows * c, T(0));
  T total = T(0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (weights[r] == T(0)) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= c) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) +
                       " out of range for " + std::to_string(c) + " classes");
    }
    const T* x = logits.data().data() + r * c;
    T mx = *std::max_element(x, x + c);
    T sum = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      probs[r * c + j] = std::exp(x[j] - mx);
      sum += probs[r * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= sum;
    total += weights[r] * (mx + std::log(sum) - x[targets[r]]);
  }
  out[0] = total;
  if (grad) {
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<T> w(weights.begin(), weights.end());
    record("cross_entropy", {logits}, out,
           [logits, out, rows, c, probs = std::move(probs), tgt = std::move(tgt),
            w = std::move(w)]() mutable {
      auto gl = logits.ensure_grad();
      const T g = out.grad()[0];
      for (std::size_t r = 0; r < rows; ++r) {
        if (w[r] == T(0)) continue;
        for (std::size_t j = 0; j < c; ++j) {
          const T onehot = static_cast<int>(j) == tgt[r] ? T(1) : T(0);
          gl[r * c + j] += g * w[r] * (probs[r * c + j] - onehot);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::straight_through(const Tensor<T>& hard, const Tensor<T>& soft) {
  if (hard.numel() != soft.numel()) {
    throw DimensionError("straight_through: " + shape_str(hard.shape()) + " vs " +
                         shape_str(soft.shape()));
  }
  const bool grad = wants_grad({&soft});
  Tensor<T> out = Tensor<T>::from(soft.shape(), hard.storage(), grad);
  if (grad) {
    record("straight_through", {soft}, out, [soft, out]() mutable {
      auto gs = soft.ensure_grad();
      auto g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> Graph<T>::embedding(const Tensor<T>& table, std::span<const int> ids) {
  if (table.rank() != 2) {
    throw DimensionError("embedding: table must be [V,d], got " + shape_str(table.shape()));
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  for (const int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw VocabError("embedding: token id " + std::to_string(id) +
                       " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  const bool grad = wants_grad({&table});
  Tensor<T> out = make_output({ids.size(), d}, grad);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * d, d,
                out.data().data() + i * d);
  }
  if (grad) {
    std::vector<int> idv(ids.begin(), ids.end());
    record("embedding", {table}, out, [table, out, idv = std::move(idv), d]() mutable {
      auto gt = table.ensure_grad();
      auto g = out.grad();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          gt[static_cast<std::size_t>(idv[i]) * d + j] += g[i * d + j];
        }
      }
    });
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace transkim
