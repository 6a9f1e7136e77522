#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmlm/autograd.hpp"
#include "cmlm/corpus.hpp"
#include "cmlm/encoder.hpp"

namespace cmlm {

enum class CmlmVariant { standard, skip, unconditioned };

std::string to_string(CmlmVariant v);
CmlmVariant parse_variant(const std::string& text);

template <typename T>
struct CmlmResult {
  Var<T> loss;
  double accuracy = 0;  // masked-token accuracy of the argmax prediction
  std::size_t count = 0;
};

// Conditional MLM: v = pool(encode(s1)), prefix = project(v), then MLM over
// the corrupted s2 with the prefix prepended. `unconditioned` zeroes the
// prefix; `skip` also concatenates each masked output with the mean
// projected vector before the output head. With zero_prefix = true any
// variant runs on a zeroed prefix.
template <typename T>
CmlmResult<T> cmlm_loss(Encoder<T>& encoder, const MaskedPairBatch& batch, CmlmVariant variant,
                        bool zero_prefix = false);

// Additive-margin bidirectional in-batch softmax over phi = S T^T. The
// margin is subtracted from the positive (diagonal) logit only.
template <typename T>
Var<T> bitext_loss(const Var<T>& source, const Var<T>& target, double margin);

// Fraction of rows whose highest inner-product column is the diagonal.
template <typename T>
double in_batch_retrieval_accuracy(const Tensor<T>& source, const Tensor<T>& target);

// [u, v, |u - v|, u * v] per row.
template <typename T>
Var<T> nli_features(const Var<T>& u, const Var<T>& v);

template <typename T>
struct NliResult {
  Var<T> loss;
  double accuracy = 0;
};

// Labels must be 0, 1 or 2.
template <typename T>
NliResult<T> nli_loss(Encoder<T>& encoder, const Var<T>& u, const Var<T>& v, std::span<const std::int64_t> labels);

// L_cmlm + alpha * L_br.
template <typename T>
Var<T> combined_loss(const Var<T>& cmlm, const Var<T>& bitext, double alpha);

}  // namespace cmlm
