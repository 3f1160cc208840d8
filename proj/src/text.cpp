#include "cnkit/text.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "cnkit/common.hpp"

namespace cnkit {

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

bool attaches_left(const std::string& tok) {
  static const std::string kClosers = ".,!?;:)]}%";
  return tok.size() == 1 && kClosers.find(tok[0]) != std::string::npos;
}

bool attaches_right(const std::string& tok) {
  return tok == "(" || tok == "[" || tok == "{" || tok == "$";
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (text.substr(i, 5) == "[CLS]" || text.substr(i, 5) == "[SEP]") {
      out.emplace_back(text.substr(i, 5));
      i += 5;
      continue;
    }
    if (is_word_char(c)) {
      std::string word;
      while (i < n) {
        const auto d = static_cast<unsigned char>(text[i]);
        if (is_word_char(d)) {
          word.push_back(static_cast<char>(std::tolower(d)));
          ++i;
        } else if ((d == '\'' || d == '-') && i + 1 < n &&
                   is_word_char(static_cast<unsigned char>(text[i + 1])) && !word.empty()) {
          word.push_back(static_cast<char>(d));
          ++i;
        } else {
          break;
        }
      }
      out.push_back(std::move(word));
      continue;
    }
    out.emplace_back(1, static_cast<char>(c));
    ++i;
  }
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  bool glue = true;
  for (const auto& tok : tokens) {
    if (!glue && !attaches_left(tok)) out.push_back(' ');
    out += tok;
    glue = attaches_right(tok);
  }
  return out;
}

Vocabulary::Vocabulary() {
  add(std::string(kBos));
  add(std::string(kEos));
  add(std::string(kUnk));
}

void Vocabulary::add(const std::string& token) {
  if (index_.count(token)) return;
  index_.emplace(token, tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& tok : sentence) ++counts[tok];
  Vocabulary v;
  for (const auto& [tok, count] : counts)
    if (count >= min_count) v.add(tok);
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk() : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw PreconditionError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

TokenSeq Vocabulary::encode(std::string_view text) const {
  TokenSeq ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(const TokenSeq& ids) const {
  std::vector<std::string> toks;
  for (TokenId id : ids)
    if (!is_special(id)) toks.push_back(token(id));
  return detokenize(toks);
}

void Vocabulary::check(const TokenSeq& ids) const {
  for (TokenId id : ids)
    if (id >= tokens_.size())
      throw PreconditionError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                              std::to_string(tokens_.size()));
}

nlohmann::json Vocabulary::to_json() const { return tokens_; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  auto toks = j.get<std::vector<std::string>>();
  if (toks.size() < 3 || toks[0] != kBos || toks[1] != kEos || toks[2] != kUnk)
    throw Error("vocabulary listing must start with <bos> <eos> <unk>");
  return from_tokens(toks);
}

}  // namespace cnkit
