#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cmlm {

using TokenId = std::int32_t;

// Word-level vocabulary with a character fallback layer.
// Layout: the five reserved tokens, every single character seen in the
// corpus (sorted), then whole words by descending frequency.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kMask = 4;
  static constexpr TokenId kNumReserved = 5;

  static Vocab build(const std::vector<std::string>& lines, std::size_t target_size);
  // Restores a vocabulary from its token list (e.g. from a checkpoint).
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::optional<TokenId> find(std::string_view token) const;
  TokenId lookup(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

// ASCII lowercasing; bytes >= 0x80 pass through untouched.
std::string normalize(std::string_view text);
std::vector<std::string> split_whitespace(std::string_view text);
// UTF-8 code points as byte strings. Malformed lead bytes become single bytes.
std::vector<std::string> utf8_chars(std::string_view word);

// Lowercase, split on whitespace, whole-word lookup, else greedy
// longest-prefix match over vocabulary entries; unmatched characters map to
// [UNK].
std::vector<TokenId> tokenize(std::string_view text, const Vocab& vocab);

}  // namespace cmlm
