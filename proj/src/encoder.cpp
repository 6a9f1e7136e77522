#include "cmlm/encoder.hpp"

#include <cmath>

namespace cmlm {

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::mean:
      return "mean";
    case Pooling::max:
      return "max";
    case Pooling::cls:
      return "cls";
  }
  return "?";
}

Pooling parse_pooling(const std::string& text) {
  if (text == "mean") return Pooling::mean;
  if (text == "max") return Pooling::max;
  if (text == "cls") return Pooling::cls;
  throw ConfigError("unknown pooling '" + text + "' (expected mean, max or cls)");
}

std::string to_string(Representation r) { return r == Representation::pooled ? "pooled" : "proj-mean"; }

Representation parse_representation(const std::string& text) {
  if (text == "pooled") return Representation::pooled;
  if (text == "proj-mean" || text == "proj_mean") return Representation::proj_mean;
  throw ConfigError("unknown representation '" + text + "' (expected pooled or proj-mean)");
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("encoder config: " + msg); };
  if (layers == 0) fail("layers must be positive");
  if (heads == 0 || hidden == 0 || hidden % heads != 0) fail("hidden size must be a positive multiple of heads");
  if (ff == 0) fail("feed-forward size must be positive");
  if (max_len < 2) fail("max_len must be at least 2");
  if (vocab_size <= static_cast<std::size_t>(Vocab::kNumReserved)) fail("vocabulary too small");
  if (projections == 0) fail("projection count N must be at least 1");
  if (dropout < 0 || dropout >= 1) fail("dropout must be in [0, 1)");
}

namespace {

template <typename T>
Tensor<T> truncated_normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    double x = 0;
    do {
      x = rng.normal(0.0, stddev);
    } while (std::abs(x) > 2 * stddev);
    v = static_cast<T>(x);
  }
  return t;
}

struct ParamSpec {
  std::string name;
  Shape shape;
  enum Kind { weight, bias, gain } kind;
};

std::vector<ParamSpec> param_specs(const EncoderConfig& c) {
  const std::size_t d = c.hidden;
  std::vector<ParamSpec> specs = {
      {"embed.token", {c.vocab_size, d}, ParamSpec::weight},
      {"embed.position", {c.max_len, d}, ParamSpec::weight},
      {"embed.slot", {c.projections, d}, ParamSpec::weight},
      {"embed.norm.gamma", {d}, ParamSpec::gain},
      {"embed.norm.beta", {d}, ParamSpec::bias},
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    specs.push_back({name + ".weight", {in, out}, ParamSpec::weight});
    specs.push_back({name + ".bias", {out}, ParamSpec::bias});
  };
  auto norm = [&](const std::string& name, std::size_t width) {
    specs.push_back({name + ".gamma", {width}, ParamSpec::gain});
    specs.push_back({name + ".beta", {width}, ParamSpec::bias});
  };
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    linear(p + ".attn.query", d, d);
    // No key bias: it shifts every score in a query row equally, so softmax
    // cancels it and its gradient is identically zero.
    specs.push_back({p + ".attn.key.weight", {d, d}, ParamSpec::weight});
    linear(p + ".attn.value", d, d);
    linear(p + ".attn.output", d, d);
    norm(p + ".attn.norm", d);
    linear(p + ".ffn.in", d, c.ff);
    linear(p + ".ffn.out", c.ff, d);
    norm(p + ".ffn.norm", d);
  }
  if (c.projections > 1) {
    linear("project.fc1", d, 2 * d);
    linear("project.fc2", 2 * d, 2 * d);
    linear("project.fc3", 2 * d, (c.projections - 1) * d);
  }
  linear("mlm.transform", d, d);
  norm("mlm.norm", d);
  specs.push_back({"mlm.output.bias", {c.vocab_size}, ParamSpec::bias});
  linear("skip.merge", 2 * d, d);
  linear("nli.classifier", 4 * d, 3);
  return specs;
}

}  // namespace

template <typename T>
ParamStore<T> init_params(const EncoderConfig& config, Rng& rng, double init_stddev) {
  config.validate();
  ParamStore<T> store;
  for (auto& spec : param_specs(config)) {
    switch (spec.kind) {
      case ParamSpec::weight:
        store.add(spec.name, truncated_normal<T>(spec.shape, init_stddev, rng));
        break;
      case ParamSpec::bias:
        store.add(spec.name, Tensor<T>(spec.shape, T{0}));
        break;
      case ParamSpec::gain:
        store.add(spec.name, Tensor<T>(spec.shape, T{1}));
        break;
    }
  }
  return store;
}

template <typename T>
void check_params(const EncoderConfig& config, const ParamStore<T>& params) {
  config.validate();
  const auto specs = param_specs(config);
  if (specs.size() != params.size()) {
    throw ConfigError("parameter count " + std::to_string(params.size()) + " does not match the " +
                      std::to_string(specs.size()) + " expected by the encoder config");
  }
  for (const auto& spec : specs) {
    if (!params.contains(spec.name)) throw ConfigError("missing parameter '" + spec.name + "'");
    const auto& shape = params.get(spec.name).shape();
    if (shape != spec.shape) {
      throw ConfigError("parameter '" + spec.name + "' has shape " + shape_str(shape) + ", config expects " +
                        shape_str(spec.shape));
    }
  }
}

template <typename T>
Encoder<T>::Encoder(Tape<T>& tape, const ParamStore<T>& params, const EncoderConfig& config, Rng* dropout_rng)
    : tape_(tape), params_(params), config_(config), dropout_rng_(dropout_rng) {
  config_.validate();
}

template <typename T>
Var<T> Encoder<T>::linear(const Var<T>& x, const std::string& prefix) {
  return add_bias(matmul(x, param(prefix + ".weight")), param(prefix + ".bias"));
}

template <typename T>
Var<T> Encoder<T>::norm(const Var<T>& x, const std::string& prefix) {
  return layer_norm(x, param(prefix + ".gamma"), param(prefix + ".beta"));
}

template <typename T>
Var<T> Encoder<T>::drop(const Var<T>& x) {
  if (!dropout_rng_ || config_.dropout <= 0) return x;
  return dropout(x, config_.dropout, *dropout_rng_);
}

template <typename T>
typename Encoder<T>::Sequence Encoder<T>::encode(const SentenceBatch& batch, const std::optional<Var<T>>& prefix) {
  const std::size_t B = batch.batch, L = batch.length, d = config_.hidden;
  if (L > config_.max_len) {
    throw ContractError("encode: sequence length " + std::to_string(L) + " exceeds max_len " +
                        std::to_string(config_.max_len));
  }
  if (batch.ids.size() != B * L || batch.mask.size() != B * L) {
    throw DimensionError("encode: ids/mask do not match a " + std::to_string(B) + " x " + std::to_string(L) + " batch");
  }
  std::vector<std::size_t> ids(batch.ids.size()), positions(batch.ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (batch.ids[i] < 0 || static_cast<std::size_t>(batch.ids[i]) >= config_.vocab_size) {
      throw ContractError("encode: token id " + std::to_string(batch.ids[i]) + " outside vocabulary");
    }
    ids[i] = static_cast<std::size_t>(batch.ids[i]);
    positions[i] = i % L;
  }
  Var<T> x = add(gather_rows(param("embed.token"), std::move(ids)), gather_rows(param("embed.position"), std::move(positions)));

  Sequence seq;
  seq.batch = B;
  seq.length = L;
  seq.mask = batch.mask;
  if (prefix) {
    const std::size_t N = config_.projections;
    if (prefix->rows() != B * N || prefix->cols() != d) {
      throw DimensionError("encode: prefix " + shape_str(prefix->shape()) + " is not " + std::to_string(B * N) + " x " +
                           std::to_string(d));
    }
    std::vector<std::size_t> slots(B * N);
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i % N;
    Var<T> pre = add(*prefix, gather_rows(param("embed.slot"), std::move(slots)));
    x = interleave_blocks(pre, N, x, L, B);
    seq.prefix = N;
    seq.length = N + L;
    seq.mask.clear();
    for (std::size_t b = 0; b < B; ++b) {
      seq.mask.insert(seq.mask.end(), N, 1);
      seq.mask.insert(seq.mask.end(), batch.mask.begin() + static_cast<std::ptrdiff_t>(b * L),
                      batch.mask.begin() + static_cast<std::ptrdiff_t>((b + 1) * L));
    }
  }
  x = drop(norm(x, "embed.norm"));

  const kernels::AttentionShape shape{B, seq.length, config_.heads, d / config_.heads};
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    Var<T> q = linear(x, p + ".attn.query");
    Var<T> k = matmul(x, param(p + ".attn.key.weight"));
    Var<T> v = linear(x, p + ".attn.value");
    Var<T> attended = self_attention(q, k, v, shape, seq.mask);
    Var<T> h = drop(linear(attended, p + ".attn.output"));
    x = norm(add(x, h), p + ".attn.norm");
    Var<T> f = drop(linear(gelu(linear(x, p + ".ffn.in")), p + ".ffn.out"));
    x = norm(add(x, f), p + ".ffn.norm");
  }
  seq.outputs = x;
  return seq;
}

template <typename T>
Var<T> Encoder<T>::pool(const Sequence& seq, Pooling kind) {
  const PoolKind pk = kind == Pooling::mean ? PoolKind::mean : kind == Pooling::max ? PoolKind::max : PoolKind::first;
  return segment_pool(seq.outputs, seq.batch, seq.length, seq.mask, pk);
}

template <typename T>
Var<T> Encoder<T>::project(const Var<T>& v) {
  const std::size_t B = v.rows(), d = config_.hidden, N = config_.projections;
  if (v.cols() != d) throw DimensionError("project: sentence vectors " + shape_str(v.shape()) + " are not width " + std::to_string(d));
  if (N == 1) return v;
  Var<T> h = relu(linear(v, "project.fc1"));
  h = relu(linear(h, "project.fc2"));
  Var<T> views = reshape(linear(h, "project.fc3"), Shape{B * (N - 1), d});
  return interleave_blocks(v, 1, views, N - 1, B);
}

template <typename T>
Var<T> Encoder<T>::mean_projection(const Var<T>& projections) {
  const std::size_t N = config_.projections;
  const std::size_t B = projections.rows() / N;
  std::vector<std::uint8_t> all(projections.rows(), 1);
  return segment_pool(projections, B, N, all, PoolKind::mean);
}

template <typename T>
Var<T> Encoder<T>::sentence_vectors(const SentenceBatch& batch) {
  if (config_.pooling != Pooling::cls) return pool(encode(batch), config_.pooling);
  SentenceBatch with_cls;
  with_cls.batch = batch.batch;
  with_cls.length = batch.length + 1;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    with_cls.ids.push_back(Vocab::kCls);
    with_cls.mask.push_back(1);
    with_cls.ids.insert(with_cls.ids.end(), batch.ids.begin() + static_cast<std::ptrdiff_t>(b * batch.length),
                        batch.ids.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch.length));
    with_cls.mask.insert(with_cls.mask.end(), batch.mask.begin() + static_cast<std::ptrdiff_t>(b * batch.length),
                         batch.mask.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch.length));
  }
  return pool(encode(with_cls), Pooling::cls);
}

template <typename T>
Var<T> Encoder<T>::mlm_logits(const Var<T>& hidden) {
  Var<T> t = norm(gelu(linear(hidden, "mlm.transform")), "mlm.norm");
  return add_bias(matmul(t, param("embed.token"), Transpose::yes), param("mlm.output.bias"));
}

template <typename T>
Var<T> Encoder<T>::skip_merge(const Var<T>& hidden, const Var<T>& context) {
  return linear(concat_cols<T>({hidden, context}), "skip.merge");
}

template <typename T>
Var<T> Encoder<T>::nli_logits(const Var<T>& features) {
  return linear(features, "nli.classifier");
}

std::vector<TokenId> encode_text(const std::string& text, const Vocab& vocab, const EncoderConfig& config) {
  auto ids = tokenize(text, vocab);
  const std::size_t limit = config.max_len - (config.pooling == Pooling::cls ? 1 : 0);
  if (ids.size() > limit) ids.resize(limit);
  return ids;
}

template <typename T>
Tensor<T> embed_sentences(const ParamStore<T>& params, const EncoderConfig& config, const Vocab& vocab,
                          const std::vector<std::string>& texts, Representation representation, std::size_t chunk) {
  if (texts.empty()) throw ContractError("embed_sentences: no texts");
  const std::size_t d = config.hidden;
  Tensor<T> out(Shape{texts.size(), d});
  for (std::size_t start = 0; start < texts.size(); start += chunk) {
    const std::size_t end = std::min(texts.size(), start + chunk);
    std::vector<std::vector<TokenId>> ids;
    for (std::size_t i = start; i < end; ++i) {
      ids.push_back(encode_text(texts[i], vocab, config));
      if (ids.back().empty()) throw ContractError("embed_sentences: text " + std::to_string(i) + " has no tokens");
    }
    Tape<T> tape(false);
    Encoder<T> encoder(tape, params, config);
    Var<T> v = encoder.sentence_vectors(make_sentence_batch(ids));
    if (representation == Representation::proj_mean) v = encoder.mean_projection(encoder.project(v));
    std::copy(v.value().data().begin(), v.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * d));
  }
  return out;
}

template ParamStore<float> init_params(const EncoderConfig&, Rng&, double);
template ParamStore<double> init_params(const EncoderConfig&, Rng&, double);
template void check_params(const EncoderConfig&, const ParamStore<float>&);
template void check_params(const EncoderConfig&, const ParamStore<double>&);
template class Encoder<float>;
template class Encoder<double>;
template Tensor<float> embed_sentences(const ParamStore<float>&, const EncoderConfig&, const Vocab&,
                                       const std::vector<std::string>&, Representation, std::size_t);
template Tensor<double> embed_sentences(const ParamStore<double>&, const EncoderConfig&, const Vocab&,
                                        const std::vector<std::string>&, Representation, std::size_t);

}  // namespace cmlm
