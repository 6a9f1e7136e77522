#include "cmlm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "cmlm/errors.hpp"

namespace cmlm {

std::vector<SentencePair> make_pairs(const std::vector<std::vector<TokenId>>& document, std::size_t max_len,
                                     const std::string& language, Rng& rng, double swap_probability) {
  std::vector<SentencePair> pairs;
  if (document.size() < 2) return pairs;
  auto clip = [max_len](const std::vector<TokenId>& s) {
    return std::vector<TokenId>(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(std::min(s.size(), max_len)));
  };
  for (std::size_t i = 0; i + 1 < document.size(); ++i) {
    if (document[i].empty() || document[i + 1].empty()) continue;
    SentencePair pair;
    pair.s1 = clip(document[i]);
    pair.s2 = clip(document[i + 1]);
    pair.language = language;
    pair.swapped = rng.bernoulli(swap_probability);
    if (pair.swapped) std::swap(pair.s1, pair.s2);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::size_t default_mask_count(std::size_t max_len) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.3125 * static_cast<double>(max_len))));
}

MaskedTokens mask_tokens(const std::vector<TokenId>& tokens, std::size_t num_mask, std::size_t vocab_size, Rng& rng,
                         MaskStats* stats) {
  if (tokens.empty()) throw ContractError("mask_tokens: empty sequence");
  if (num_mask == 0) throw ContractError("mask_tokens: mask count must be at least 1");
  if (vocab_size <= static_cast<std::size_t>(Vocab::kNumReserved)) {
    throw ContractError("mask_tokens: vocabulary has no non-reserved tokens");
  }
  if (num_mask > tokens.size()) {
    num_mask = tokens.size();
    if (stats) ++stats->clamped;
  }
  MaskedTokens out;
  out.corrupted = tokens;
  out.positions = rng.sample_distinct(tokens.size(), num_mask);
  std::sort(out.positions.begin(), out.positions.end());
  for (std::size_t pos : out.positions) {
    out.labels.push_back(tokens[pos]);
    const double u = rng.uniform();
    if (u < 0.8) {
      out.corrupted[pos] = Vocab::kMask;
      if (stats) ++stats->masked;
    } else if (u < 0.9) {
      out.corrupted[pos] = static_cast<TokenId>(
          rng.uniform_int(Vocab::kNumReserved, static_cast<std::int64_t>(vocab_size) - 1));
      if (stats) ++stats->random;
    } else {
      if (stats) ++stats->unchanged;
    }
  }
  return out;
}

SentenceBatch make_sentence_batch(std::span<const std::vector<TokenId>> sentences) {
  if (sentences.empty()) throw ContractError("make_sentence_batch: no sentences");
  SentenceBatch batch;
  batch.batch = sentences.size();
  for (const auto& s : sentences) {
    if (s.empty()) throw ContractError("make_sentence_batch: empty sentence");
    batch.length = std::max(batch.length, s.size());
  }
  batch.ids.assign(batch.batch * batch.length, Vocab::kPad);
  batch.mask.assign(batch.batch * batch.length, 0);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    std::copy(sentences[b].begin(), sentences[b].end(), batch.ids.begin() + static_cast<std::ptrdiff_t>(b * batch.length));
    std::fill_n(batch.mask.begin() + static_cast<std::ptrdiff_t>(b * batch.length), sentences[b].size(), 1);
  }
  return batch;
}

std::size_t MaskedPairBatch::masked_count() const {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.size();
  return n;
}

MaskedPairBatch make_batch(std::span<const SentencePair> pairs, std::size_t vocab_size, std::size_t num_mask, Rng& rng,
                           MaskStats* stats) {
  if (pairs.empty()) throw ContractError("make_batch: empty pair list");
  std::vector<std::vector<TokenId>> firsts, seconds;
  MaskedPairBatch batch;
  for (const auto& pair : pairs) {
    MaskedTokens masked = mask_tokens(pair.s2, num_mask, vocab_size, rng, stats);
    firsts.push_back(pair.s1);
    seconds.push_back(std::move(masked.corrupted));
    batch.positions.push_back(std::move(masked.positions));
    batch.labels.push_back(std::move(masked.labels));
    batch.swapped.push_back(pair.swapped);
  }
  batch.s1 = make_sentence_batch(firsts);
  batch.s2 = make_sentence_batch(seconds);
  return batch;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IntegrityError("cannot write '" + path.string() + "'");
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t'; });
}

std::string where(const std::filesystem::path& path, std::size_t line_no) {
  return path.string() + ":" + std::to_string(line_no);
}

}  // namespace

std::vector<Document> read_corpus(const std::filesystem::path& path, const std::string& default_language) {
  auto in = open_input(path);
  std::vector<Document> docs;
  Document current;
  std::string line;
  auto flush = [&] {
    if (!current.sentences.empty()) docs.push_back(std::move(current));
    current = Document{};
  };
  while (std::getline(in, line)) {
    strip_cr(line);
    if (blank(line)) {
      flush();
      continue;
    }
    std::string lang = default_language;
    std::string text = line;
    if (auto tab = line.find('\t'); tab != std::string::npos) {
      lang = line.substr(0, tab);
      text = line.substr(tab + 1);
    }
    if (current.sentences.empty()) current.language = lang;
    current.sentences.push_back(std::move(text));
  }
  flush();
  return docs;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs) {
  auto out = open_output(path);
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d) out << '\n';
    for (const auto& s : docs[d].sentences) out << docs[d].language << '\t' << s << '\n';
  }
}

std::vector<BitextPair> read_bitext(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<BitextPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (blank(line)) continue;
    auto f = split_tabs(line);
    if (f.size() != 4) throw IntegrityError(where(path, line_no) + ": expected 4 tab-separated fields");
    pairs.push_back({f[0], f[1], f[2], f[3]});
  }
  return pairs;
}

void write_bitext(const std::filesystem::path& path, const std::vector<BitextPair>& pairs) {
  auto out = open_output(path);
  for (const auto& p : pairs) {
    out << p.source << '\t' << p.target << '\t' << p.source_language << '\t' << p.target_language << '\n';
  }
}

NliLabel parse_nli_label(const std::string& text) {
  if (text == "entailment" || text == "0") return NliLabel::entailment;
  if (text == "neutral" || text == "1") return NliLabel::neutral;
  if (text == "contradiction" || text == "2") return NliLabel::contradiction;
  throw IntegrityError("unknown NLI label '" + text + "'");
}

std::string to_string(NliLabel label) {
  switch (label) {
    case NliLabel::entailment:
      return "entailment";
    case NliLabel::neutral:
      return "neutral";
    case NliLabel::contradiction:
      return "contradiction";
  }
  return "?";
}

std::vector<NliExample> read_nli(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<NliExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (blank(line)) continue;
    auto f = split_tabs(line);
    if (f.size() != 3) throw IntegrityError(where(path, line_no) + ": expected 3 tab-separated fields");
    out.push_back({f[0], f[1], parse_nli_label(f[2])});
  }
  return out;
}

void write_nli(const std::filesystem::path& path, const std::vector<NliExample>& examples) {
  auto out = open_output(path);
  for (const auto& e : examples) out << e.premise << '\t' << e.hypothesis << '\t' << to_string(e.label) << '\n';
}

std::vector<TaggedSentence> read_tagged(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<TaggedSentence> out;
  std::map<std::string, std::uint32_t> next_id;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (blank(line)) continue;
    auto f = split_tabs(line);
    if (f.size() != 2 && f.size() != 3) {
      throw IntegrityError(where(path, line_no) + ": expected 'lang<TAB>sentence[<TAB>label]'");
    }
    TaggedSentence row;
    row.language = f[0];
    row.text = f[1];
    row.text_id = next_id[row.language]++;
    if (f.size() == 3) {
      try {
        row.label = std::stoi(f[2]);
      } catch (const std::exception&) {
        throw IntegrityError(where(path, line_no) + ": label '" + f[2] + "' is not an integer");
      }
    }
    out.push_back(std::move(row));
  }
  return out;
}

void write_tagged(const std::filesystem::path& path, const std::vector<TaggedSentence>& rows) {
  auto out = open_output(path);
  for (const auto& r : rows) {
    out << r.language << '\t' << r.text;
    if (r.label >= 0) out << '\t' << r.label;
    out << '\n';
  }
}

std::vector<StsPair> read_sts(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<StsPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (blank(line)) continue;
    auto f = split_tabs(line);
    if (f.size() != 3) throw IntegrityError(where(path, line_no) + ": expected 3 tab-separated fields");
    try {
      out.push_back({f[0], f[1], std::stod(f[2])});
    } catch (const std::exception&) {
      throw IntegrityError(where(path, line_no) + ": score '" + f[2] + "' is not a number");
    }
  }
  return out;
}

void write_sts(const std::filesystem::path& path, const std::vector<StsPair>& pairs) {
  auto out = open_output(path);
  out.precision(6);
  for (const auto& p : pairs) out << p.first << '\t' << p.second << '\t' << std::fixed << p.score << '\n';
}

}  // namespace cmlm
