#include "cmlm/synth.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "cmlm/errors.hpp"
#include "cmlm/rng.hpp"

namespace cmlm {

namespace {

const std::string kConsonants = "bdfgklmnprstvz";
const std::string kVowels = "aeiou";
// Language markers; none of these letters appear in the syllable inventory.
const std::string kMarkers = "xqjwyc";

std::string syllable(std::size_t i) {
  return std::string(1, kConsonants[i / kVowels.size()]) + kVowels[i % kVowels.size()];
}

struct Topics {
  std::vector<std::vector<std::size_t>> words;  // base word ids per topic
};

Topics make_topics(std::size_t base_words, std::size_t topics) {
  Topics t;
  t.words.resize(topics);
  for (std::size_t w = 0; w < base_words; ++w) t.words[w % topics].push_back(w);
  return t;
}

std::vector<std::size_t> draw_sentence(const Topics& topics, std::size_t topic, const SynthConfig& cfg, Rng& rng) {
  const auto& pool = topics.words[topic];
  const auto len = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.min_words), static_cast<std::int64_t>(cfg.max_words)));
  std::vector<std::size_t> out;
  for (std::size_t idx : rng.sample_distinct(pool.size(), std::min(len, pool.size()))) out.push_back(pool[idx]);
  return out;
}

}  // namespace

const std::vector<std::string>& Lexicon::language_names() {
  static const std::vector<std::string> names = {"en", "fr", "de", "ru", "es", "zh", "ja"};
  return names;
}

Lexicon::Lexicon(std::size_t languages, std::size_t base_words, std::uint64_t seed) {
  const std::size_t syllables = kConsonants.size() * kVowels.size();
  if (languages == 0 || languages > language_names().size()) {
    throw ContractError("synthetic languages must be in [1, " + std::to_string(language_names().size()) + "]");
  }
  if (base_words == 0 || base_words > syllables * syllables) {
    throw ContractError("synthetic base lexicon size out of range");
  }
  surfaces_.resize(languages);
  for (std::size_t l = 0; l < languages; ++l) {
    std::vector<std::size_t> perm(base_words);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (l > 0) {
      Rng rng(seed * 1000003ULL + l);
      std::shuffle(perm.begin(), perm.end(), rng.engine());
    }
    for (std::size_t w = 0; w < base_words; ++w) {
      const std::size_t code = perm[w];
      std::string surface = syllable(code / syllables) + syllable(code % syllables);
      if (l > 0) surface += kMarkers[(l - 1) % kMarkers.size()];
      surfaces_[l].push_back(std::move(surface));
    }
  }
}

std::string Lexicon::render(std::size_t l, const std::vector<std::size_t>& base_sentence) const {
  std::string out;
  for (std::size_t i = 0; i < base_sentence.size(); ++i) {
    if (i) out += ' ';
    out += word(l, base_sentence[i]);
  }
  return out;
}

SynthData generate_synthetic(const SynthConfig& cfg) {
  if (cfg.topics == 0 || cfg.base_words < cfg.topics) throw ContractError("need at least one word per topic");
  if (cfg.min_words == 0 || cfg.min_words > cfg.max_words) throw ContractError("invalid sentence length range");
  if (cfg.sentences_per_doc < 2) throw ContractError("documents need at least two sentences");
  Lexicon lex(cfg.languages, cfg.base_words, cfg.seed);
  const Topics topics = make_topics(cfg.base_words, cfg.topics);
  Rng rng(cfg.seed);
  SynthData data;
  auto random_topic = [&] { return static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.topics) - 1)); };

  // Copy-task documents: every sentence of a document repeats the same
  // content words, so s2 is predictable from s1 and nothing else. Words are
  // in base-id order, which a pooled (order-free) sentence vector can still
  // convey.
  for (std::size_t l = 0; l < cfg.languages; ++l) {
    for (std::size_t d = 0; d < cfg.documents; ++d) {
      auto base = draw_sentence(topics, random_topic(), cfg, rng);
      std::sort(base.begin(), base.end());
      Document doc;
      doc.language = lex.language(l);
      for (std::size_t s = 0; s < cfg.sentences_per_doc; ++s) doc.sentences.push_back(lex.render(l, base));
      data.corpus.push_back(std::move(doc));
    }
  }

  std::set<std::vector<std::size_t>> seen;
  auto fresh_sentence = [&](std::size_t topic) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      auto s = draw_sentence(topics, topic, cfg, rng);
      if (seen.insert(s).second) return s;
    }
    throw ContractError("synthetic lexicon too small for the requested number of distinct sentences");
  };

  for (std::size_t l = 1; l < cfg.languages; ++l) {
    for (std::size_t i = 0; i < cfg.bitext_pairs; ++i) {
      const auto base = fresh_sentence(random_topic());
      data.bitext.push_back({lex.render(0, base), lex.render(l, base), lex.language(0), lex.language(l)});
    }
  }
  for (std::size_t l = 1; l < cfg.languages; ++l) {
    for (std::size_t i = 0; i < cfg.heldout_pairs; ++i) {
      const auto base = fresh_sentence(random_topic());
      data.heldout_bitext.push_back({lex.render(0, base), lex.render(l, base), lex.language(0), lex.language(l)});
    }
  }

  std::vector<std::pair<std::vector<std::size_t>, std::size_t>> parallel_base;
  for (std::size_t i = 0; i < cfg.parallel_sentences; ++i) {
    const std::size_t topic = random_topic();
    parallel_base.emplace_back(fresh_sentence(topic), topic);
  }
  for (std::size_t l = 0; l < cfg.languages; ++l) {
    for (std::size_t i = 0; i < parallel_base.size(); ++i) {
      data.parallel.push_back({lex.language(l), lex.render(l, parallel_base[i].first), static_cast<std::uint32_t>(i),
                               static_cast<std::int32_t>(parallel_base[i].second)});
    }
  }

  for (std::size_t i = 0; i < cfg.probe_sentences; ++i) {
    const std::size_t topic = random_topic();
    const auto base = draw_sentence(topics, topic, cfg, rng);
    auto& dest = (i % 4 == 3) ? data.probe_test : data.probe_train;
    dest.push_back({lex.language(0), lex.render(0, base), static_cast<std::uint32_t>(dest.size()),
                    static_cast<std::int32_t>(topic)});
  }

  for (std::size_t i = 0; i < cfg.nli_examples; ++i) {
    const std::size_t topic = random_topic();
    auto premise = draw_sentence(topics, topic, cfg, rng);
    std::vector<std::size_t> hypothesis;
    const auto label = static_cast<NliLabel>(rng.uniform_int(0, 2));
    switch (label) {
      case NliLabel::entailment: {
        // Drop one word, keep the order.
        hypothesis = premise;
        hypothesis.erase(hypothesis.begin() + rng.uniform_int(0, static_cast<std::int64_t>(hypothesis.size()) - 1));
        break;
      }
      case NliLabel::contradiction: {
        // Swap one word for its paired "opposite" word.
        hypothesis = premise;
        auto& w = hypothesis[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(hypothesis.size()) - 1))];
        w = std::min(w ^ std::size_t{1}, cfg.base_words - 1);
        break;
      }
      case NliLabel::neutral: {
        // Keep half, append unrelated words.
        hypothesis.assign(premise.begin(), premise.begin() + static_cast<std::ptrdiff_t>(premise.size() / 2));
        for (std::size_t w : draw_sentence(topics, random_topic(), cfg, rng)) {
          if (hypothesis.size() >= cfg.max_words) break;
          hypothesis.push_back(w);
        }
        break;
      }
    }
    const auto lp = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.languages) - 1));
    const auto lh = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cfg.languages) - 1));
    data.nli.push_back({lex.render(lp, premise), lex.render(lh, hypothesis), label});
  }

  for (std::size_t i = 0; i < cfg.sts_pairs; ++i) {
    const std::size_t topic = random_topic();
    const auto first = draw_sentence(topics, topic, cfg, rng);
    auto second = first;
    const auto replaced = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(first.size())));
    const auto& pool = topics.words[random_topic()];
    for (std::size_t pos : rng.sample_distinct(first.size(), replaced)) {
      second[pos] = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
    }
    std::size_t kept = 0;
    for (std::size_t p = 0; p < first.size(); ++p) kept += first[p] == second[p] ? 1 : 0;
    const double score = 5.0 * static_cast<double>(kept) / static_cast<double>(first.size());
    data.sts.push_back({lex.render(0, first), lex.render(0, second), score});
  }
  return data;
}

void write_synthetic(const std::filesystem::path& dir, const SynthData& data) {
  std::filesystem::create_directories(dir);
  write_corpus(dir / "corpus.txt", data.corpus);
  write_bitext(dir / "bitext.tsv", data.bitext);
  write_bitext(dir / "bitext_heldout.tsv", data.heldout_bitext);
  write_tagged(dir / "parallel.txt", data.parallel);
  write_tagged(dir / "probe_train.txt", data.probe_train);
  write_tagged(dir / "probe_test.txt", data.probe_test);
  write_nli(dir / "nli.tsv", data.nli);
  write_sts(dir / "sts.tsv", data.sts);
}

}  // namespace cmlm
