#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace cnkit {

using TokenId = std::size_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr std::string_view kBos = "<bos>";
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kUnk = "<unk>";

/// Lowercased words (letters, digits, apostrophes, inner hyphens) and single
/// punctuation characters. The boundary markers "[CLS]" and "[SEP]" are kept
/// verbatim as single tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Joins tokens with single spaces, attaching closing punctuation to the left.
std::string detokenize(const std::vector<std::string>& tokens);

/// Closed vocabulary with reserved <bos>=0, <eos>=1, <unk>=2.
class Vocabulary {
 public:
  Vocabulary();

  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count = 1);
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId bos() const { return 0; }
  TokenId eos() const { return 1; }
  TokenId unk() const { return 2; }
  bool is_special(TokenId id) const { return id < 3; }

  TokenId id(std::string_view token) const;  // OOV -> unk
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenSeq encode(std::string_view text) const;
  std::string decode(const TokenSeq& ids) const;  // specials dropped

  void check(const TokenSeq& ids) const;  // throws on out-of-range id

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace cnkit
