#include "cmlm/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

namespace cmlm::kernels {

namespace {

std::atomic<Exec> g_default_exec{Exec::parallel};

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 16;

// Register-blocked tile: rows [i0, i0+kRowBlock) x cols [j0, j0+kColBlock).
// Each c element is accumulated over p in ascending order.
template <typename T>
inline void gemm_tile_full(std::size_t i0, std::size_t j0, std::size_t m, std::size_t n, std::size_t k,
                           bool trans_a, const T* a, const T* b, T* c, bool accumulate) {
  T acc[kRowBlock][kColBlock];
  for (std::size_t r = 0; r < kRowBlock; ++r) {
    for (std::size_t jj = 0; jj < kColBlock; ++jj) {
      acc[r][jj] = accumulate ? c[(i0 + r) * n + j0 + jj] : T{0};
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n + j0;
    for (std::size_t r = 0; r < kRowBlock; ++r) {
      const T av = trans_a ? a[p * m + i0 + r] : a[(i0 + r) * k + p];
#pragma omp simd
      for (std::size_t jj = 0; jj < kColBlock; ++jj) acc[r][jj] += av * brow[jj];
    }
  }
  for (std::size_t r = 0; r < kRowBlock; ++r) {
    for (std::size_t jj = 0; jj < kColBlock; ++jj) c[(i0 + r) * n + j0 + jj] = acc[r][jj];
  }
}

template <typename T>
inline void gemm_tile_edge(std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1, std::size_t m,
                           std::size_t n, std::size_t k, bool trans_a, const T* a, const T* b, T* c,
                           bool accumulate) {
  for (std::size_t i = i0; i < i1; ++i) {
    T* crow = c + i * n;
    if (!accumulate) {
      for (std::size_t j = j0; j < j1; ++j) crow[j] = T{0};
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T av = trans_a ? a[p * m + i] : a[i * k + p];
      const T* brow = b + p * n;
#pragma omp simd
      for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_row_block(std::size_t i0, std::size_t m, std::size_t n, std::size_t k, bool trans_a, const T* a,
                    const T* b, T* c, bool accumulate) {
  const std::size_t i1 = std::min(i0 + kRowBlock, m);
  const std::size_t full_cols = n - n % kColBlock;
  if (i1 - i0 == kRowBlock) {
    for (std::size_t j0 = 0; j0 < full_cols; j0 += kColBlock) {
      gemm_tile_full(i0, j0, m, n, k, trans_a, a, b, c, accumulate);
    }
  } else if (full_cols > 0) {
    gemm_tile_edge(i0, i1, 0, full_cols, m, n, k, trans_a, a, b, c, accumulate);
  }
  if (full_cols < n) gemm_tile_edge(i0, i1, full_cols, n, m, n, k, trans_a, a, b, c, accumulate);
}

}  // namespace

Exec default_exec() { return g_default_exec.load(std::memory_order_relaxed); }
void set_default_exec(Exec exec) { g_default_exec.store(exec, std::memory_order_relaxed); }

template <typename T>
void gemm(Exec exec, bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, T{0});
    return;
  }
  std::vector<T> bt;
  if (trans_b) {
    // B is n x k; lay it out as k x n so the inner loop runs over contiguous columns.
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    b = bt.data();
  }
  const std::size_t blocks = (m + kRowBlock - 1) / kRowBlock;
  if (exec == Exec::parallel) {
    const bool worth_it = m * n * k >= 32768;
#pragma omp parallel for schedule(static) if (worth_it)
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      gemm_row_block(blk * kRowBlock, m, n, k, trans_a, a, b, c, accumulate);
    }
  } else {
    for (std::size_t blk = 0; blk < blocks; ++blk) {
      gemm_row_block(blk * kRowBlock, m, n, k, trans_a, a, b, c, accumulate);
    }
  }
}

namespace {

template <typename T>
void attention_forward_one(const AttentionShape& s, std::size_t b, std::size_t h, const T* q, const T* k,
                           const T* v, const std::uint8_t* key_mask, T* probs, T* out) {
  const std::size_t width = s.width();
  const T scale = T{1} / std::sqrt(static_cast<T>(s.head_dim));
  const std::uint8_t* mask = key_mask + b * s.seq;
  T* p = probs + (b * s.heads + h) * s.seq * s.seq;
  for (std::size_t i = 0; i < s.seq; ++i) {
    const T* qi = q + (b * s.seq + i) * width + h * s.head_dim;
    T* prow = p + i * s.seq;
    T row_max = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < s.seq; ++j) {
      if (!mask[j]) {
        prow[j] = T{0};
        continue;
      }
      const T* kj = k + (b * s.seq + j) * width + h * s.head_dim;
      T dot{0};
      for (std::size_t t = 0; t < s.head_dim; ++t) dot += qi[t] * kj[t];
      prow[j] = dot * scale;
      row_max = std::max(row_max, prow[j]);
    }
    T total{0};
    for (std::size_t j = 0; j < s.seq; ++j) {
      if (!mask[j]) continue;
      prow[j] = std::exp(prow[j] - row_max);
      total += prow[j];
    }
    for (std::size_t j = 0; j < s.seq; ++j) prow[j] /= total;

    T* oi = out + (b * s.seq + i) * width + h * s.head_dim;
    for (std::size_t t = 0; t < s.head_dim; ++t) oi[t] = T{0};
    for (std::size_t j = 0; j < s.seq; ++j) {
      if (!mask[j]) continue;
      const T pij = prow[j];
      const T* vj = v + (b * s.seq + j) * width + h * s.head_dim;
#pragma omp simd
      for (std::size_t t = 0; t < s.head_dim; ++t) oi[t] += pij * vj[t];
    }
  }
}

template <typename T>
void attention_backward_one(const AttentionShape& s, std::size_t b, std::size_t h, const T* q, const T* k,
                            const T* v, const T* probs, const T* dout, T* dq, T* dk, T* dv,
                            std::vector<T>& dscore) {
  const std::size_t width = s.width();
  const T scale = T{1} / std::sqrt(static_cast<T>(s.head_dim));
  const T* p = probs + (b * s.heads + h) * s.seq * s.seq;
  dscore.assign(s.seq, T{0});
  auto at = [&](const T* base, std::size_t row) { return base + (b * s.seq + row) * width + h * s.head_dim; };
  auto at_mut = [&](T* base, std::size_t row) { return base + (b * s.seq + row) * width + h * s.head_dim; };
  for (std::size_t i = 0; i < s.seq; ++i) {
    const T* prow = p + i * s.seq;
    const T* doi = at(dout, i);
    T weighted{0};
    for (std::size_t j = 0; j < s.seq; ++j) {
      if (prow[j] == T{0}) {
        dscore[j] = T{0};
        continue;
      }
      const T* vj = at(v, j);
      T dp{0};
      for (std::size_t t = 0; t < s.head_dim; ++t) dp += doi[t] * vj[t];
      dscore[j] = dp;
      weighted += prow[j] * dp;
      T* dvj = at_mut(dv, j);
      const T pij = prow[j];
#pragma omp simd
      for (std::size_t t = 0; t < s.head_dim; ++t) dvj[t] += pij * doi[t];
    }
    const T* qi = at(q, i);
    T* dqi = at_mut(dq, i);
    for (std::size_t j = 0; j < s.seq; ++j) {
      if (prow[j] == T{0}) continue;
      const T ds = prow[j] * (dscore[j] - weighted) * scale;
      const T* kj = at(k, j);
      T* dkj = at_mut(dk, j);
#pragma omp simd
      for (std::size_t t = 0; t < s.head_dim; ++t) {
        dqi[t] += ds * kj[t];
        dkj[t] += ds * qi[t];
      }
    }
  }
}

}  // namespace

template <typename T>
void attention_forward(Exec exec, const AttentionShape& shape, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_mask, T* probs, T* out) {
  const std::size_t pairs = shape.batch * shape.heads;
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static) if (pairs > 1)
    for (std::size_t bh = 0; bh < pairs; ++bh) {
      attention_forward_one(shape, bh / shape.heads, bh % shape.heads, q, k, v, key_mask, probs, out);
    }
  } else {
    for (std::size_t bh = 0; bh < pairs; ++bh) {
      attention_forward_one(shape, bh / shape.heads, bh % shape.heads, q, k, v, key_mask, probs, out);
    }
  }
}

template <typename T>
void attention_backward(Exec exec, const AttentionShape& shape, const T* q, const T* k, const T* v,
                        const T* probs, const T* dout, T* dq, T* dk, T* dv) {
  const std::size_t pairs = shape.batch * shape.heads;
  if (exec == Exec::parallel) {
#pragma omp parallel if (pairs > 1)
    {
      std::vector<T> scratch;
#pragma omp for schedule(static)
      for (std::size_t bh = 0; bh < pairs; ++bh) {
        attention_backward_one(shape, bh / shape.heads, bh % shape.heads, q, k, v, probs, dout, dq, dk, dv,
                               scratch);
      }
    }
  } else {
    std::vector<T> scratch;
    for (std::size_t bh = 0; bh < pairs; ++bh) {
      attention_backward_one(shape, bh / shape.heads, bh % shape.heads, q, k, v, probs, dout, dq, dk, dv,
                             scratch);
    }
  }
}

template <typename T>
void cosine_matrix(Exec exec, std::size_t n, std::size_t m, std::size_t d, const T* a, const T* b,
                   double* out) {
  std::vector<double> norm_b(m);
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0;
    for (std::size_t t = 0; t < d; ++t) s += double(b[j * d + t]) * double(b[j * d + t]);
    norm_b[j] = std::sqrt(s);
  }
  auto row = [&](std::size_t i) {
    const T* ai = a + i * d;
    double na = 0;
    for (std::size_t t = 0; t < d; ++t) na += double(ai[t]) * double(ai[t]);
    na = std::sqrt(na);
    for (std::size_t j = 0; j < m; ++j) {
      const T* bj = b + j * d;
      double dot = 0;
      for (std::size_t t = 0; t < d; ++t) dot += double(ai[t]) * double(bj[t]);
      out[i * m + j] = dot / (na * norm_b[j]);
    }
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static) if (n * m * d >= 32768)
    for (std::size_t i = 0; i < n; ++i) row(i);
  } else {
    for (std::size_t i = 0; i < n; ++i) row(i);
  }
}

#define CMLM_INSTANTIATE_KERNELS(T)                                                                          \
  template void gemm<T>(Exec, bool, bool, std::size_t, std::size_t, std::size_t, const T*, const T*, T*,    \
                        bool);                                                                               \
  template void attention_forward<T>(Exec, const AttentionShape&, const T*, const T*, const T*,             \
                                     const std::uint8_t*, T*, T*);                                           \
  template void attention_backward<T>(Exec, const AttentionShape&, const T*, const T*, const T*, const T*, \
                                      const T*, T*, T*, T*);                                                 \
  template void cosine_matrix<T>(Exec, std::size_t, std::size_t, std::size_t, const T*, const T*, double*);

CMLM_INSTANTIATE_KERNELS(float)
CMLM_INSTANTIATE_KERNELS(double)

#undef CMLM_INSTANTIATE_KERNELS

}  // namespace cmlm::kernels
