#pragma once

#include <cstddef>
#include <cstdint>

// Hot loops of the library. Every kernel has a serial reference path and an
// OpenMP path. The parallel path splits work over independent output rows
// (or batch/head pairs), so each output element is reduced in the same order
// as in the serial path and the two are bitwise identical regardless of
// thread count.
namespace cmlm::kernels {

enum class Exec { serial, parallel };

// Process-wide default used by the autograd ops. Tests flip it to compare.
Exec default_exec();
void set_default_exec(Exec exec);

// C[m x n] (+)= op(A) * op(B), where op(A) is m x k and op(B) is k x n.
// A is stored as m x k (or k x m when trans_a); B as k x n (or n x k when trans_b).
template <typename T>
void gemm(Exec exec, bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

struct AttentionShape {
  std::size_t batch;
  std::size_t seq;
  std::size_t heads;
  std::size_t head_dim;
  std::size_t width() const { return heads * head_dim; }
};

// Scaled dot-product attention over [batch*seq x heads*head_dim] q/k/v.
// key_mask is batch*seq; zero entries are never attended to. Each query row
// must see at least one unmasked key. probs receives batch*heads*seq*seq.
template <typename T>
void attention_forward(Exec exec, const AttentionShape& shape, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_mask, T* probs, T* out);

// Accumulates into dq/dk/dv.
template <typename T>
void attention_backward(Exec exec, const AttentionShape& shape, const T* q, const T* k, const T* v,
                        const T* probs, const T* dout, T* dq, T* dk, T* dv);

// out[i*m + j] = cos(a_i, b_j) for a: n x d, b: m x d. Rows must be nonzero.
template <typename T>
void cosine_matrix(Exec exec, std::size_t n, std::size_t m, std::size_t d, const T* a, const T* b,
                   double* out);

}  // namespace cmlm::kernels
