#pragma once

#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "cnkit/common.hpp"
#include "cnkit/corpus.hpp"
#include "cnkit/embed.hpp"
#include "cnkit/lm.hpp"

namespace cnkit::retrieve {

inline constexpr std::string_view kCounterPrompt = "However, I disagree.";

struct RetrievalConfig {
  std::size_t k1 = 30;  // posts kept by stance
  std::size_t k2 = 10;  // comments kept by chi
  std::size_t k3 = 10;  // sentences kept by fitness
  double alpha = 0.5;   // semantic weight in chi
  double beta = 0.5;    // stance weight in chi
  std::string counter_prompt{kCounterPrompt};
  bool conditional_fit = false;  // score only the sentence tokens in FIT

  std::vector<std::string> violations() const;
  void validate() const;
};

class NoCounterKnowledge : public Error {
 public:
  NoCounterKnowledge() : Error("no counter-knowledge") {}
};

enum class Layer { STA, CHI, FIT };
const char* to_string(Layer layer);

struct ScoredItem {
  std::string id;
  double score = 0.0;
  Layer layer = Layer::STA;
};

/// Where stance and semantic vectors come from.
class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  virtual Vector post_stance(const corpus::Post& post, const corpus::HateSpeechSample& x) const = 0;
  virtual Vector hs_stance(const corpus::HateSpeechSample& x) const = 0;
  virtual Vector comment_semantic(const corpus::Comment& comment) const = 0;
  virtual Vector hs_semantic(const corpus::HateSpeechSample& x) const = 0;
};

/// Encodes on the fly. Both sides of the stance comparison use the hate
/// speech target in the stance template.
class EncoderSource final : public EmbeddingSource {
 public:
  EncoderSource(const embed::Encoder& stance, const embed::Encoder& semantic);
  Vector post_stance(const corpus::Post& post, const corpus::HateSpeechSample& x) const override;
  Vector hs_stance(const corpus::HateSpeechSample& x) const override;
  Vector comment_semantic(const corpus::Comment& comment) const override;
  Vector hs_semantic(const corpus::HateSpeechSample& x) const override;

 private:
  const embed::Encoder* stance_;
  const embed::Encoder* semantic_;
};

/// Precomputed vectors: the stance table holds post and hate speech ids, the
/// semantic table comment and hate speech ids.
class TableSource final : public EmbeddingSource {
 public:
  TableSource(embed::EmbeddingTable stance, embed::EmbeddingTable semantic);
  Vector post_stance(const corpus::Post& post, const corpus::HateSpeechSample& x) const override;
  Vector hs_stance(const corpus::HateSpeechSample& x) const override;
  Vector comment_semantic(const corpus::Comment& comment) const override;
  Vector hs_semantic(const corpus::HateSpeechSample& x) const override;

 private:
  static const Vector& lookup(const embed::EmbeddingTable& table, const std::string& id, const char* what);
  embed::EmbeddingTable stance_, semantic_;
};

double sta_score(const corpus::Post& post, const corpus::HateSpeechSample& x, const EmbeddingSource& emb);

/// Top-k1 posts by STA, ties by ascending id.
std::vector<ScoredItem> select_posts(const corpus::KnowledgeRepository& repo, const corpus::HateSpeechSample& x,
                                     const RetrievalConfig& config, const EmbeddingSource& emb);

double chi_score(const corpus::Comment& comment, const corpus::Post& parent, const corpus::HateSpeechSample& x,
                 const RetrievalConfig& config, const EmbeddingSource& emb);

/// Top-k2 comments of the selected posts by chi, ties by ascending id.
std::vector<ScoredItem> select_comments(const corpus::KnowledgeRepository& repo, const std::vector<ScoredItem>& posts,
                                        const corpus::HateSpeechSample& x, const RetrievalConfig& config,
                                        const EmbeddingSource& emb);

/// <bos> + x + P + s as token ids, and the index of the first sentence token.
std::pair<TokenSeq, std::size_t> fit_sequence(const Vocabulary& vocab, std::string_view sentence,
                                              std::string_view hs_text, const RetrievalConfig& config);

/// Perplexity of x + P + s; +infinity when the model assigns zero probability.
double fit_score(std::string_view sentence, std::string_view hs_text, const RetrievalConfig& config,
                 const lm::LanguageModel& forward);

inline constexpr double kInfiniteFit = std::numeric_limits<double>::infinity();

struct Knowledge {
  std::string sentence_id;
  std::string text;
  std::string post_id;
  std::string comment_id;
  double sta = 0.0;
  double chi = 0.0;
  double fit = 0.0;
};

struct CounterKnowledge {
  std::vector<Knowledge> ranked;  // ascending FIT
  bool empty() const { return ranked.empty(); }
  const Knowledge& best() const;
};

/// Stance -> semantic -> fitness retrieval. Throws NoCounterKnowledge on an
/// empty repository; may return an empty result if no sentence survives.
CounterKnowledge ssf(const corpus::KnowledgeRepository& repo, const corpus::HateSpeechSample& x,
                     const RetrievalConfig& config, const EmbeddingSource& emb, const lm::LanguageModel& forward);

}  // namespace cnkit::retrieve
