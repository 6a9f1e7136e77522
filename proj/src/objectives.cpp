#include "cmlm/objectives.hpp"

#include <numeric>

namespace cmlm {

std::string to_string(CmlmVariant v) {
  switch (v) {
    case CmlmVariant::standard:
      return "standard";
    case CmlmVariant::skip:
      return "skip";
    case CmlmVariant::unconditioned:
      return "unconditioned";
  }
  return "?";
}

CmlmVariant parse_variant(const std::string& text) {
  if (text == "standard") return CmlmVariant::standard;
  if (text == "skip") return CmlmVariant::skip;
  if (text == "unconditioned") return CmlmVariant::unconditioned;
  throw ConfigError("unknown variant '" + text + "' (expected standard, skip or unconditioned)");
}

namespace {

template <typename T>
double accuracy_of(const Tensor<T>& logits, std::span<const std::int64_t> labels) {
  const auto pred = argmax_rows(logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += static_cast<std::int64_t>(pred[i]) == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

template <typename T>
CmlmResult<T> cmlm_loss(Encoder<T>& encoder, const MaskedPairBatch& batch, CmlmVariant variant, bool zero_prefix) {
  const std::size_t B = batch.size();
  const std::size_t N = encoder.config().projections;
  const std::size_t d = encoder.config().hidden;
  if (batch.masked_count() == 0) throw ContractError("cmlm_loss: batch has no masked positions");
  if (batch.s2.batch != B || batch.positions.size() != B || batch.labels.size() != B) {
    throw DimensionError("cmlm_loss: inconsistent batch sizes");
  }
  Tape<T>& tape = encoder.tape();

  // A zeroed prefix never looks at s1, so the conditioned and unconditioned
  // paths consume identical randomness and agree exactly.
  const bool zeroed = zero_prefix || variant == CmlmVariant::unconditioned;
  Var<T> prefix, context;
  if (zeroed) {
    prefix = tape.constant(Tensor<T>(Shape{B * N, d}, T{0}));
    context = tape.constant(Tensor<T>(Shape{B, d}, T{0}));
  } else {
    Var<T> v = encoder.sentence_vectors(batch.s1);
    prefix = encoder.project(v);
    if (variant == CmlmVariant::skip) context = encoder.mean_projection(prefix);
  }

  auto seq = encoder.encode(batch.s2, prefix);
  std::vector<std::size_t> rows, owners;
  std::vector<std::int64_t> labels;
  for (std::size_t b = 0; b < B; ++b) {
    if (batch.positions[b].size() != batch.labels[b].size()) {
      throw DimensionError("cmlm_loss: positions and labels differ in length for example " + std::to_string(b));
    }
    for (std::size_t i = 0; i < batch.positions[b].size(); ++i) {
      const std::size_t pos = batch.positions[b][i];
      if (pos >= batch.s2.length || !batch.s2.mask[b * batch.s2.length + pos]) {
        throw ContractError("cmlm_loss: mask position " + std::to_string(pos) + " is padding");
      }
      rows.push_back(b * seq.length + seq.prefix + pos);
      owners.push_back(b);
      labels.push_back(batch.labels[b][i]);
    }
  }
  Var<T> hidden = gather_rows(seq.outputs, std::move(rows));
  if (variant == CmlmVariant::skip) hidden = encoder.skip_merge(hidden, gather_rows(context, std::move(owners)));
  Var<T> logits = encoder.mlm_logits(hidden);

  CmlmResult<T> out;
  out.loss = cross_entropy(logits, std::span<const std::int64_t>(labels));
  out.accuracy = accuracy_of(logits.value(), std::span<const std::int64_t>(labels));
  out.count = labels.size();
  return out;
}

template <typename T>
Var<T> bitext_loss(const Var<T>& source, const Var<T>& target, double margin) {
  if (source.shape() != target.shape() || source.value().rank() != 2) {
    throw DimensionError("bitext_loss: source " + shape_str(source.shape()) + " and target " +
                         shape_str(target.shape()) + " must be equal-shape matrices");
  }
  const std::size_t B = source.rows();
  if (B < 2) throw ContractError("bitext_loss: need at least 2 pairs for in-batch negatives");
  if (!(margin >= 0)) throw ContractError("bitext_loss: margin must be non-negative");
  Var<T> logits = add_diagonal(matmul(source, target, Transpose::yes), -margin);
  std::vector<std::int64_t> diag(B);
  std::iota(diag.begin(), diag.end(), std::int64_t{0});
  Var<T> forward = cross_entropy(logits, std::span<const std::int64_t>(diag));
  Var<T> backward = cross_entropy(transpose(logits), std::span<const std::int64_t>(diag));
  return add(forward, backward);
}

template <typename T>
double in_batch_retrieval_accuracy(const Tensor<T>& source, const Tensor<T>& target) {
  if (source.shape() != target.shape()) throw DimensionError("in_batch_retrieval_accuracy: shape mismatch");
  const std::size_t B = source.rows(), d = source.cols();
  Tensor<T> phi(Shape{B, B});
  kernels::gemm<T>(kernels::default_exec(), false, true, B, B, d, source.data().data(), target.data().data(),
                   phi.data().data(), false);
  const auto best = argmax_rows(phi);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < B; ++i) hits += best[i] == i ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(B);
}

template <typename T>
Var<T> nli_features(const Var<T>& u, const Var<T>& v) {
  if (u.shape() != v.shape()) {
    throw DimensionError("nli_features: u " + shape_str(u.shape()) + " and v " + shape_str(v.shape()) + " differ");
  }
  return concat_cols<T>({u, v, abs(sub(u, v)), mul(u, v)});
}

template <typename T>
NliResult<T> nli_loss(Encoder<T>& encoder, const Var<T>& u, const Var<T>& v, std::span<const std::int64_t> labels) {
  if (labels.size() != u.rows()) throw DimensionError("nli_loss: label count does not match batch");
  for (auto y : labels) {
    if (y < 0 || y > 2) throw ContractError("nli_loss: label " + std::to_string(y) + " outside {0, 1, 2}");
  }
  Var<T> logits = encoder.nli_logits(nli_features(u, v));
  NliResult<T> out;
  out.loss = cross_entropy(logits, labels);
  out.accuracy = accuracy_of(logits.value(), labels);
  return out;
}

template <typename T>
Var<T> combined_loss(const Var<T>& cmlm, const Var<T>& bitext, double alpha) {
  if (!(alpha >= 0)) throw ContractError("combined_loss: alpha must be non-negative");
  return add(cmlm, scale(bitext, alpha));
}

#define CMLM_INSTANTIATE(T)                                                                                   \
  template CmlmResult<T> cmlm_loss(Encoder<T>&, const MaskedPairBatch&, CmlmVariant, bool);                   \
  template Var<T> bitext_loss(const Var<T>&, const Var<T>&, double);                                          \
  template double in_batch_retrieval_accuracy(const Tensor<T>&, const Tensor<T>&);                            \
  template Var<T> nli_features(const Var<T>&, const Var<T>&);                                                 \
  template NliResult<T> nli_loss(Encoder<T>&, const Var<T>&, const Var<T>&, std::span<const std::int64_t>);   \
  template Var<T> combined_loss(const Var<T>&, const Var<T>&, double);

CMLM_INSTANTIATE(float)
CMLM_INSTANTIATE(double)

#undef CMLM_INSTANTIATE

}  // namespace cmlm
