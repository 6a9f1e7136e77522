#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmlm/corpus.hpp"

namespace cmlm {

// Synthetic multilingual data. Every "language" renders the same base
// lexicon through a deterministic bijective word substitution, so
// translations, gold retrieval maps and labels come for free.
struct SynthConfig {
  std::size_t languages = 3;
  std::size_t base_words = 120;
  std::size_t topics = 4;
  std::size_t documents = 300;  // per language
  std::size_t sentences_per_doc = 4;
  std::size_t min_words = 5;
  std::size_t max_words = 8;
  std::size_t bitext_pairs = 1500;  // per non-base language
  std::size_t heldout_pairs = 256;  // per non-base language
  std::size_t parallel_sentences = 200;
  std::size_t probe_sentences = 400;
  std::size_t nli_examples = 1200;
  std::size_t sts_pairs = 300;
  std::uint64_t seed = 1;
};

// Surface forms of base words per language.
class Lexicon {
 public:
  Lexicon(std::size_t languages, std::size_t base_words, std::uint64_t seed);

  static const std::vector<std::string>& language_names();

  std::size_t languages() const { return surfaces_.size(); }
  std::size_t base_words() const { return surfaces_.empty() ? 0 : surfaces_[0].size(); }
  const std::string& language(std::size_t l) const { return language_names()[l]; }
  const std::string& word(std::size_t l, std::size_t base) const { return surfaces_[l][base]; }
  std::string render(std::size_t l, const std::vector<std::size_t>& base_sentence) const;

 private:
  std::vector<std::vector<std::string>> surfaces_;
};

struct SynthData {
  std::vector<Document> corpus;                 // copy-task documents in every language
  std::vector<BitextPair> bitext;               // base language -> each other language
  std::vector<BitextPair> heldout_bitext;       // disjoint sentences for evaluation
  std::vector<TaggedSentence> parallel;         // same texts in every language, labelled by topic
  std::vector<TaggedSentence> probe_train;      // base language, labelled by topic
  std::vector<TaggedSentence> probe_test;
  std::vector<NliExample> nli;
  std::vector<StsPair> sts;
};

SynthData generate_synthetic(const SynthConfig& config);

// Writes corpus.txt, bitext.tsv, bitext_heldout.tsv, parallel.txt,
// probe_train.txt, probe_test.txt, nli.tsv and sts.tsv into `dir`.
void write_synthetic(const std::filesystem::path& dir, const SynthData& data);

}  // namespace cmlm
