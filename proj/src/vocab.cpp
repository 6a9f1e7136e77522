#include "cmlm/vocab.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "cmlm/errors.hpp"

namespace cmlm {

namespace {

const std::vector<std::string> kReserved = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

}  // namespace

std::string normalize(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !space(text[j])) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::vector<std::string> utf8_chars(std::string_view word) {
  std::vector<std::string> chars;
  std::size_t i = 0;
  while (i < word.size()) {
    std::size_t len = utf8_length(static_cast<unsigned char>(word[i]));
    if (i + len > word.size()) len = 1;
    chars.emplace_back(word.substr(i, len));
    i += len;
  }
  return chars;
}

Vocab Vocab::build(const std::vector<std::string>& lines, std::size_t target_size) {
  std::map<std::string, std::size_t> word_counts;
  std::set<std::string> chars;
  for (const auto& line : lines) {
    for (auto& word : split_whitespace(normalize(line))) {
      for (auto& ch : utf8_chars(word)) chars.insert(ch);
      ++word_counts[word];
    }
  }
  if (word_counts.empty()) throw ContractError("build_vocab: empty corpus");
  const std::size_t minimum = kReserved.size() + chars.size();
  if (target_size < minimum) {
    throw ContractError("build_vocab: target size " + std::to_string(target_size) + " is below the minimum " +
                        std::to_string(minimum) + " (reserved tokens plus distinct characters)");
  }
  std::vector<std::string> tokens = kReserved;
  tokens.insert(tokens.end(), chars.begin(), chars.end());

  std::vector<std::pair<std::string, std::size_t>> ranked(word_counts.begin(), word_counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::set<std::string> present(tokens.begin(), tokens.end());
  for (const auto& [word, count] : ranked) {
    if (tokens.size() >= target_size) break;
    if (present.insert(word).second) tokens.push_back(word);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved.size() || !std::equal(kReserved.begin(), kReserved.end(), tokens.begin())) {
    throw IntegrityError("vocabulary does not start with the reserved tokens");
  }
  Vocab vocab;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!vocab.ids_.emplace(tokens[i], static_cast<TokenId>(i)).second) {
      throw IntegrityError("duplicate vocabulary entry '" + tokens[i] + "'");
    }
  }
  vocab.tokens_ = std::move(tokens);
  return vocab;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::lookup(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<TokenId> ids;
  for (const auto& word : split_whitespace(normalize(text))) {
    if (auto id = vocab.find(word)) {
      ids.push_back(*id);
      continue;
    }
    const auto chars = utf8_chars(word);
    std::size_t start = 0;
    while (start < chars.size()) {
      // Longest run of characters from `start` that is a vocabulary entry.
      std::optional<TokenId> match;
      std::size_t matched = 0;
      std::string piece;
      for (std::size_t end = start; end < chars.size(); ++end) {
        piece += chars[end];
        if (auto id = vocab.find(piece)) {
          match = id;
          matched = end - start + 1;
        }
      }
      if (match) {
        ids.push_back(*match);
        start += matched;
      } else {
        ids.push_back(Vocab::kUnk);
        ++start;
      }
    }
  }
  return ids;
}

}  // namespace cmlm
