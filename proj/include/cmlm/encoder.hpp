#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cmlm/autograd.hpp"
#include "cmlm/corpus.hpp"
#include "cmlm/params.hpp"
#include "cmlm/rng.hpp"
#include "cmlm/vocab.hpp"

namespace cmlm {

enum class Pooling { mean, max, cls };
enum class Representation { pooled, proj_mean };

std::string to_string(Pooling p);
Pooling parse_pooling(const std::string& text);
std::string to_string(Representation r);
Representation parse_representation(const std::string& text);

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t hidden = 64;
  std::size_t ff = 128;
  std::size_t max_len = 64;
  std::size_t vocab_size = 0;
  std::size_t projections = 15;  // N, including the identity view
  Pooling pooling = Pooling::mean;
  double dropout = 0.1;

  // Throws ConfigError on an inconsistent configuration.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// All learnable weights: token/position/slot embeddings, the transformer
// stack, the projection MLP, the MLM head (output tied to the token
// embeddings), the skip-variant head and the NLI classifier. Weight matrices
// draw from a normal with sigma 0.02 truncated at two sigma, biases are zero
// and layer-norm scales are one.
template <typename T>
ParamStore<T> init_params(const EncoderConfig& config, Rng& rng, double init_stddev = 0.02);

// Throws ConfigError unless every expected tensor exists with the right shape.
template <typename T>
void check_params(const EncoderConfig& config, const ParamStore<T>& params);

// Forward builder for one tape. Every method reads the same parameter store,
// so the conditioning encoder and the masked-sentence encoder are one
// siamese network.
template <typename T>
class Encoder {
 public:
  // With a non-null dropout_rng and config.dropout > 0, dropout is active.
  Encoder(Tape<T>& tape, const ParamStore<T>& params, const EncoderConfig& config, Rng* dropout_rng = nullptr);

  struct Sequence {
    Var<T> outputs;  // [batch*length x d]
    std::size_t batch = 0;
    std::size_t length = 0;  // prefix slots + tokens
    std::size_t prefix = 0;
    std::vector<std::uint8_t> mask;
  };

  // With a prefix [batch*N x d], the N vectors occupy positions 0..N-1 of
  // every example (plus learned slot embeddings), followed by the tokens.
  Sequence encode(const SentenceBatch& batch, const std::optional<Var<T>>& prefix = std::nullopt);

  // [batch x d]. Mean and max skip padding; cls takes position 0.
  Var<T> pool(const Sequence& seq, Pooling kind);

  // ProjectionSet for a batch of sentence vectors v [batch x d]: returns
  // [batch*N x d] where row 0 of each example is v itself and rows 1..N-1
  // come from the three-layer MLP.
  Var<T> project(const Var<T>& v);

  // Mean of each example's N projected vectors: [batch x d].
  Var<T> mean_projection(const Var<T>& projections);

  // Pooled sentence vectors for raw token batches; prepends [CLS] when the
  // configured pooling is cls.
  Var<T> sentence_vectors(const SentenceBatch& batch);

  // MLM logits over the vocabulary for hidden rows [m x d].
  Var<T> mlm_logits(const Var<T>& hidden);

  // Skip-variant head input: concat(hidden, context) mapped back to d.
  Var<T> skip_merge(const Var<T>& hidden, const Var<T>& context);

  // 3-way NLI logits from [u, v, |u-v|, u*v] features.
  Var<T> nli_logits(const Var<T>& features);

  Var<T> param(const std::string& name) { return tape_.param(params_, name); }
  Tape<T>& tape() { return tape_; }
  const EncoderConfig& config() const { return config_; }

 private:
  Var<T> linear(const Var<T>& x, const std::string& prefix);
  Var<T> norm(const Var<T>& x, const std::string& prefix);
  Var<T> drop(const Var<T>& x);

  Tape<T>& tape_;
  const ParamStore<T>& params_;
  EncoderConfig config_;
  Rng* dropout_rng_;
};

// Inference embeddings for raw texts (no dropout, no gradients): [n x d].
// Throws ContractError when a text tokenizes to nothing.
template <typename T>
Tensor<T> embed_sentences(const ParamStore<T>& params, const EncoderConfig& config, const Vocab& vocab,
                          const std::vector<std::string>& texts, Representation representation,
                          std::size_t chunk = 64);

// Token ids for one sentence, truncated to the model's maximum length.
std::vector<TokenId> encode_text(const std::string& text, const Vocab& vocab, const EncoderConfig& config);

}  // namespace cmlm
