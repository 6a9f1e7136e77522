#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "cmlm/corpus.hpp"
#include "cmlm/synth.hpp"
#include "cmlm/vocab.hpp"

using namespace cmlm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("cmlm_corpus_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::vector<TokenId> iota_tokens(std::size_t n, TokenId first = 5) {
  std::vector<TokenId> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = first + static_cast<TokenId>(i);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// vocabulary and tokenizer

TEST(Vocab, SmallCorpusByHand) {
  const auto v = Vocab::build({"a b a"}, 8);
  // Five reserved tokens, then the characters a and b. The words "a" and
  // "b" coincide with those characters, so nothing else is added.
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "b"}));
  EXPECT_EQ(tokenize("a b", v), (std::vector<TokenId>{5, 6}));
  EXPECT_TRUE(tokenize("", v).empty());
}

TEST(Vocab, WordsRankedByFrequencyAfterCharacters) {
  const auto v = Vocab::build({"the cat the dog the cat"}, 100);
  const auto first_word = static_cast<std::size_t>(Vocab::kNumReserved) + 8;  // t h e c a d o g
  ASSERT_GE(v.size(), first_word + 3);
  EXPECT_EQ(v.token(static_cast<TokenId>(first_word)), "the");
  EXPECT_EQ(v.token(static_cast<TokenId>(first_word + 1)), "cat");
  EXPECT_EQ(v.token(static_cast<TokenId>(first_word + 2)), "dog");
}

TEST(Vocab, ErrorsAndDeterminism) {
  EXPECT_THROW(Vocab::build({"   "}, 10), ContractError);
  EXPECT_THROW(Vocab::build({"abc"}, 7), ContractError);
  EXPECT_EQ(Vocab::build({"x y z x"}, 50), Vocab::build({"x y z x"}, 50));
  EXPECT_THROW(Vocab::from_tokens({"a", "b"}), IntegrityError);
}

TEST(Vocab, CharacterFallbackAndUnknowns) {
  const auto v = Vocab::build({"ab abc"}, 9);  // reserved + a b c, then "ab"
  EXPECT_EQ(v.size(), 9u);
  // "abc" is not a word entry: longest prefix "ab", then "c".
  EXPECT_EQ(tokenize("abc", v), (std::vector<TokenId>{v.lookup("ab"), v.lookup("c")}));
  EXPECT_EQ(tokenize("AB", v), (std::vector<TokenId>{v.lookup("ab")}));
  EXPECT_EQ(tokenize("az", v), (std::vector<TokenId>{v.lookup("a"), Vocab::kUnk}));
}

// ---------------------------------------------------------------------------
// pairs and masking

TEST(Pairs, AdjacentSentencesAndForcedSwap) {
  std::vector<std::vector<TokenId>> doc{{10}, {11}, {12}};
  Rng rng(1);
  auto pairs = make_pairs(doc, 8, "en", rng, 0.0);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].s1, std::vector<TokenId>{10});
  EXPECT_EQ(pairs[0].s2, std::vector<TokenId>{11});
  EXPECT_EQ(pairs[1].s1, std::vector<TokenId>{11});
  EXPECT_EQ(pairs[1].s2, std::vector<TokenId>{12});
  auto swapped = make_pairs(doc, 8, "en", rng, 1.0);
  for (const auto& p : swapped) EXPECT_TRUE(p.swapped);
  EXPECT_EQ(swapped[0].s1, std::vector<TokenId>{11});
  EXPECT_TRUE(make_pairs({{1, 2}}, 8, "en", rng).empty());
}

TEST(Pairs, SwapRateIsHalf) {
  Rng rng(2);
  std::vector<std::vector<TokenId>> doc(10001, std::vector<TokenId>{7});
  const auto pairs = make_pairs(doc, 8, "en", rng);
  std::size_t swaps = 0;
  for (const auto& p : pairs) swaps += p.swapped;
  EXPECT_NEAR(static_cast<double>(swaps) / pairs.size(), 0.5, 0.02);
}

TEST(Masking, DefaultCountFollowsMaxLength) {
  EXPECT_EQ(default_mask_count(256), 80u);
  EXPECT_EQ(default_mask_count(16), 5u);
  EXPECT_EQ(default_mask_count(1), 1u);
}

TEST(Masking, ExactCountAndClamp) {
  Rng rng(3);
  MaskStats stats;
  for (std::size_t len = 1; len <= 12; ++len) {
    const auto toks = iota_tokens(len);
    auto m = mask_tokens(toks, 5, 40, rng, &stats);
    EXPECT_EQ(m.positions.size(), std::min<std::size_t>(5, len));
    EXPECT_TRUE(std::is_sorted(m.positions.begin(), m.positions.end()));
    EXPECT_EQ(std::set<std::size_t>(m.positions.begin(), m.positions.end()).size(), m.positions.size());
    for (std::size_t i = 0; i < m.positions.size(); ++i) EXPECT_EQ(m.labels[i], toks[m.positions[i]]);
  }
  EXPECT_EQ(stats.clamped, 4u);
}

TEST(Masking, FullMaskRecordsWholeSequence) {
  Rng rng(4);
  const auto toks = iota_tokens(6);
  auto m = mask_tokens(toks, 6, 40, rng);
  EXPECT_EQ(m.labels, toks);
  EXPECT_EQ(m.positions, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST(Masking, EightyTenTenSplit) {
  Rng rng(5);
  MaskStats stats;
  const auto toks = iota_tokens(10);
  for (int i = 0; i < 10000; ++i) mask_tokens(toks, 10, 1000, rng, &stats);
  const double n = 100000.0;
  EXPECT_NEAR(stats.masked / n, 0.8, 0.01);
  EXPECT_NEAR(stats.random / n, 0.1, 0.01);
  EXPECT_NEAR(stats.unchanged / n, 0.1, 0.01);
}

TEST(Masking, Errors) {
  Rng rng(6);
  EXPECT_THROW(mask_tokens({}, 1, 40, rng), ContractError);
  EXPECT_THROW(mask_tokens({7}, 0, 40, rng), ContractError);
  EXPECT_THROW(mask_tokens({7}, 1, 5, rng), ContractError);
}

TEST(Batching, PaddingAndMasks) {
  std::vector<std::vector<TokenId>> s{{5, 6, 7}, {5, 6, 7, 8, 9}};
  auto b = make_sentence_batch(s);
  EXPECT_EQ(b.length, 5u);
  EXPECT_EQ(b.mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0, 1, 1, 1, 1, 1}));
  EXPECT_EQ(b.ids[3], Vocab::kPad);
  EXPECT_THROW(make_sentence_batch(std::vector<std::vector<TokenId>>{}), ContractError);
}

TEST(Batching, DeterministicAndNeverMasksPadding) {
  Rng data(7);
  std::vector<SentencePair> pairs;
  for (int i = 0; i < 64; ++i) {
    pairs.push_back({iota_tokens(static_cast<std::size_t>(data.uniform_int(1, 9))),
                     iota_tokens(static_cast<std::size_t>(data.uniform_int(1, 9))), false, "en"});
  }
  Rng a(8), b(8);
  auto x = make_batch(pairs, 50, 3, a);
  auto y = make_batch(pairs, 50, 3, b);
  EXPECT_EQ(x.s2.ids, y.s2.ids);
  EXPECT_EQ(x.positions, y.positions);
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto start = static_cast<std::size_t>(rng.uniform_int(0, 56));
    auto batch = make_batch(std::span<const SentencePair>(pairs).subspan(start, 8), 50, 4, rng);
    for (std::size_t e = 0; e < batch.size(); ++e) {
      for (std::size_t p : batch.positions[e]) ASSERT_EQ(batch.s2.mask[e * batch.s2.length + p], 1);
    }
  }
  EXPECT_THROW(make_batch({}, 50, 3, rng), ContractError);
}

// ---------------------------------------------------------------------------
// files

TEST(Files, RoundTripsAndLineNumbersInErrors) {
  std::vector<BitextPair> bt{{"hello there", "bonjour la", "en", "fr"}};
  write_bitext(scratch("b.tsv"), bt);
  auto back = read_bitext(scratch("b.tsv"));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].target, "bonjour la");
  EXPECT_EQ(back[0].target_language, "fr");

  std::vector<NliExample> nli{{"a b", "c d", NliLabel::contradiction}};
  write_nli(scratch("n.tsv"), nli);
  EXPECT_EQ(read_nli(scratch("n.tsv"))[0].label, NliLabel::contradiction);
  EXPECT_THROW(parse_nli_label("maybe"), IntegrityError);

  std::vector<TaggedSentence> tagged{{"en", "one two", 0, 3}, {"fr", "un deux", 1, -1}};
  write_tagged(scratch("t.txt"), tagged);
  auto t = read_tagged(scratch("t.txt"));
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].label, 3);
  EXPECT_EQ(t[1].label, -1);

  std::vector<StsPair> sts{{"x y", "x z", 2.5}};
  write_sts(scratch("s.tsv"), sts);
  EXPECT_DOUBLE_EQ(read_sts(scratch("s.tsv"))[0].score, 2.5);

  std::ofstream(scratch("bad.tsv")) << "a\tb\ten\tfr\nbroken line\n";
  try {
    read_bitext(scratch("bad.tsv"));
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_corpus(scratch("missing.txt")), IntegrityError);
}

TEST(Files, CorpusDocumentsAndLanguages) {
  std::vector<Document> docs{{"en", {"one two", "three"}}, {"fr", {"un", "deux trois"}}};
  write_corpus(scratch("c.txt"), docs);
  auto back = read_corpus(scratch("c.txt"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].language, "fr");
  EXPECT_EQ(back[1].sentences, docs[1].sentences);
}

// ---------------------------------------------------------------------------
// synthetic data

TEST(Synth, CipherIsABijectionPerLanguage) {
  Lexicon lex(4, 60, 3);
  for (std::size_t l = 0; l < lex.languages(); ++l) {
    std::set<std::string> seen;
    for (std::size_t w = 0; w < lex.base_words(); ++w) seen.insert(lex.word(l, w));
    EXPECT_EQ(seen.size(), lex.base_words());
  }
  // Surface forms never collide across languages either.
  std::set<std::string> all;
  for (std::size_t l = 0; l < lex.languages(); ++l)
    for (std::size_t w = 0; w < lex.base_words(); ++w) all.insert(lex.word(l, w));
  EXPECT_EQ(all.size(), lex.languages() * lex.base_words());
}

TEST(Synth, BitextIsAWordForWordTranslation) {
  SynthConfig cfg;
  cfg.documents = 20;
  cfg.bitext_pairs = 50;
  cfg.heldout_pairs = 10;
  const auto data = generate_synthetic(cfg);
  EXPECT_EQ(data.bitext.size(), 50u * (cfg.languages - 1));
  EXPECT_EQ(data.heldout_bitext.size(), 10u * (cfg.languages - 1));
  std::map<std::pair<std::string, std::string>, std::string> mapping;
  for (const auto& p : data.bitext) {
    const auto s = split_whitespace(p.source), t = split_whitespace(p.target);
    ASSERT_EQ(s.size(), t.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      auto [it, fresh] = mapping.emplace(std::pair{p.target_language, s[i]}, t[i]);
      EXPECT_EQ(it->second, t[i]);
    }
  }
  std::set<std::string> train;
  for (const auto& p : data.bitext) train.insert(p.source);
  for (const auto& p : data.heldout_bitext) EXPECT_FALSE(train.count(p.source)) << p.source;
}

TEST(Synth, CopyTaskDocumentsRepeatOneSentence) {
  SynthConfig cfg;
  cfg.documents = 10;
  const auto data = generate_synthetic(cfg);
  EXPECT_EQ(data.corpus.size(), cfg.documents * cfg.languages);
  for (const auto& d : data.corpus) {
    ASSERT_EQ(d.sentences.size(), cfg.sentences_per_doc);
    for (const auto& s : d.sentences) EXPECT_EQ(s, d.sentences[0]);
  }
}

TEST(Synth, ParallelRowsShareTextIdsAcrossLanguages) {
  SynthConfig cfg;
  cfg.documents = 5;
  cfg.parallel_sentences = 30;
  const auto data = generate_synthetic(cfg);
  std::map<std::uint32_t, std::set<std::string>> langs;
  std::map<std::uint32_t, std::set<std::int32_t>> labels;
  for (const auto& r : data.parallel) {
    langs[r.text_id].insert(r.language);
    labels[r.text_id].insert(r.label);
  }
  EXPECT_EQ(langs.size(), 30u);
  for (const auto& [id, ls] : langs) EXPECT_EQ(ls.size(), cfg.languages);
  for (const auto& [id, ls] : labels) EXPECT_EQ(ls.size(), 1u);
}

TEST(Synth, DeterministicGivenSeedAndWritesFiles) {
  SynthConfig cfg;
  cfg.documents = 8;
  cfg.bitext_pairs = 20;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  EXPECT_EQ(a.corpus.size(), b.corpus.size());
  for (std::size_t i = 0; i < a.corpus.size(); ++i) EXPECT_EQ(a.corpus[i].sentences, b.corpus[i].sentences);
  cfg.seed = 2;
  EXPECT_NE(generate_synthetic(cfg).corpus[0].sentences, a.corpus[0].sentences);
  const auto dir = scratch("synth");
  write_synthetic(dir, a);
  EXPECT_EQ(read_corpus(dir / "corpus.txt").size(), a.corpus.size());
  EXPECT_EQ(read_bitext(dir / "bitext.tsv").size(), a.bitext.size());
  EXPECT_EQ(read_tagged(dir / "parallel.txt").size(), a.parallel.size());
}
