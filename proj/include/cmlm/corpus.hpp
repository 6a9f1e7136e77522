#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmlm/rng.hpp"
#include "cmlm/vocab.hpp"

namespace cmlm {

// ---------------------------------------------------------------------------
// Pairs and masking

struct SentencePair {
  std::vector<TokenId> s1;  // conditioning sentence
  std::vector<TokenId> s2;  // sentence whose masked tokens are predicted
  bool swapped = false;     // true when s1 came after s2 in the document
  std::string language;
};

// One pair per adjacent couple (A,B),(B,C),... Each pair is swapped with
// probability swap_probability; both sides are truncated to max_len tokens.
// Couples where either side tokenizes to nothing are skipped.
std::vector<SentencePair> make_pairs(const std::vector<std::vector<TokenId>>& document, std::size_t max_len,
                                     const std::string& language, Rng& rng, double swap_probability = 0.5);

// Default mask count for a block length: round(0.3125 * max_len), at least 1.
std::size_t default_mask_count(std::size_t max_len);

struct MaskStats {
  std::size_t masked = 0;     // replaced by [MASK]
  std::size_t random = 0;     // replaced by a random non-reserved id
  std::size_t unchanged = 0;  // left as is
  std::size_t clamped = 0;    // sequences shorter than the requested count
};

struct MaskedTokens {
  std::vector<TokenId> corrupted;
  std::vector<std::size_t> positions;  // ascending
  std::vector<TokenId> labels;         // original ids at `positions`
};

// Picks min(num_mask, len) distinct positions uniformly; each becomes [MASK]
// with probability 0.8, a uniform non-reserved id with 0.1, or stays with 0.1.
MaskedTokens mask_tokens(const std::vector<TokenId>& tokens, std::size_t num_mask, std::size_t vocab_size, Rng& rng,
                         MaskStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Batches

// Right-padded id matrix [batch x length] with a 0/1 attention mask.
struct SentenceBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;
};

SentenceBatch make_sentence_batch(std::span<const std::vector<TokenId>> sentences);

struct MaskedPairBatch {
  SentenceBatch s1;
  SentenceBatch s2;                              // corrupted s2
  std::vector<std::vector<std::size_t>> positions;  // per example, into s2
  std::vector<std::vector<TokenId>> labels;         // per example, pre-corruption ids
  std::vector<bool> swapped;
  std::size_t size() const { return s1.batch; }
  std::size_t masked_count() const;
};

MaskedPairBatch make_batch(std::span<const SentencePair> pairs, std::size_t vocab_size, std::size_t num_mask, Rng& rng,
                           MaskStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Files

struct Document {
  std::string language;
  std::vector<std::string> sentences;
};

// One sentence per line, blank line between documents, optional
// "lang<TAB>sentence" form (language defaults to `default_language`).
std::vector<Document> read_corpus(const std::filesystem::path& path, const std::string& default_language = "en");
void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs);

struct BitextPair {
  std::string source;
  std::string target;
  std::string source_language;
  std::string target_language;
};

// "source<TAB>target<TAB>src_lang<TAB>tgt_lang" per line.
std::vector<BitextPair> read_bitext(const std::filesystem::path& path);
void write_bitext(const std::filesystem::path& path, const std::vector<BitextPair>& pairs);

enum class NliLabel : std::int64_t { entailment = 0, neutral = 1, contradiction = 2 };

struct NliExample {
  std::string premise;
  std::string hypothesis;
  NliLabel label;
};

// "premise<TAB>hypothesis<TAB>label", label as a name or 0/1/2.
std::vector<NliExample> read_nli(const std::filesystem::path& path);
void write_nli(const std::filesystem::path& path, const std::vector<NliExample>& examples);
NliLabel parse_nli_label(const std::string& text);
std::string to_string(NliLabel label);

// Sentence with language tag, per-language text id and optional class label.
// File form: "lang<TAB>sentence[<TAB>label]". Text ids count sentences within
// each language, so line k of every language is the same underlying text.
struct TaggedSentence {
  std::string language;
  std::string text;
  std::uint32_t text_id = 0;
  std::int32_t label = -1;
};

std::vector<TaggedSentence> read_tagged(const std::filesystem::path& path);
void write_tagged(const std::filesystem::path& path, const std::vector<TaggedSentence>& rows);

struct StsPair {
  std::string first;
  std::string second;
  double score = 0;
};

// "sentence1<TAB>sentence2<TAB>score".
std::vector<StsPair> read_sts(const std::filesystem::path& path);
void write_sts(const std::filesystem::path& path, const std::vector<StsPair>& pairs);

}  // namespace cmlm
