#include "cnkit/retrieve.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cnkit::retrieve {

std::vector<std::string> RetrievalConfig::violations() const {
  std::vector<std::string> out;
  if (k2 < 1) out.push_back("k2 must be >= 1");
  if (k1 < k2) out.push_back("k1 must be >= k2");
  if (k3 < 1) out.push_back("k3 must be >= 1");
  if (alpha < 0 || beta < 0) out.push_back("alpha and beta must be >= 0");
  if (!(alpha + beta > 0)) out.push_back("alpha + beta must be > 0");
  if (counter_prompt.empty()) out.push_back("counter_prompt must be nonempty");
  return out;
}

void RetrievalConfig::validate() const {
  const auto v = violations();
  if (!v.empty()) throw PreconditionError("invalid retrieval config: " + v.front());
}

const char* to_string(Layer layer) {
  switch (layer) {
    case Layer::STA: return "STA";
    case Layer::CHI: return "CHI";
    case Layer::FIT: return "FIT";
  }
  return "?";
}

EncoderSource::EncoderSource(const embed::Encoder& stance, const embed::Encoder& semantic)
    : stance_(&stance), semantic_(&semantic) {
  require(stance.kind() == embed::EncoderKind::stance, "stance source needs a stance encoder");
}

Vector EncoderSource::post_stance(const corpus::Post& post, const corpus::HateSpeechSample& x) const {
  return stance_->encode(post.text(), x.target);
}
Vector EncoderSource::hs_stance(const corpus::HateSpeechSample& x) const { return stance_->encode(x.text, x.target); }
Vector EncoderSource::comment_semantic(const corpus::Comment& c) const { return semantic_->encode(c.body); }
Vector EncoderSource::hs_semantic(const corpus::HateSpeechSample& x) const { return semantic_->encode(x.text); }

TableSource::TableSource(embed::EmbeddingTable stance, embed::EmbeddingTable semantic)
    : stance_(std::move(stance)), semantic_(std::move(semantic)) {}

const Vector& TableSource::lookup(const embed::EmbeddingTable& table, const std::string& id, const char* what) {
  const Vector* v = table.find(id);
  if (!v) throw PreconditionError(std::string("no ") + what + " vector for id '" + id + "'");
  return *v;
}

Vector TableSource::post_stance(const corpus::Post& post, const corpus::HateSpeechSample&) const {
  return lookup(stance_, post.id, "stance");
}
Vector TableSource::hs_stance(const corpus::HateSpeechSample& x) const { return lookup(stance_, x.id, "stance"); }
Vector TableSource::comment_semantic(const corpus::Comment& c) const { return lookup(semantic_, c.id, "semantic"); }
Vector TableSource::hs_semantic(const corpus::HateSpeechSample& x) const { return lookup(semantic_, x.id, "semantic"); }

double sta_score(const corpus::Post& post, const corpus::HateSpeechSample& x, const EmbeddingSource& emb) {
  return embed::cosine(emb.post_stance(post, x), emb.hs_stance(x));
}

namespace {

void sort_descending(std::vector<ScoredItem>& items) {
  std::sort(items.begin(), items.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
}

void cut(std::vector<ScoredItem>& items, std::size_t k) {
  if (items.size() > k) items.resize(k);
}

}  // namespace

std::vector<ScoredItem> select_posts(const corpus::KnowledgeRepository& repo, const corpus::HateSpeechSample& x,
                                     const RetrievalConfig& config, const EmbeddingSource& emb) {
  config.validate();
  require(!repo.empty(), "select_posts on an empty repository");
  const Vector hs = emb.hs_stance(x);
  std::vector<ScoredItem> items;
  items.reserve(repo.posts().size());
  for (const auto& post : repo.posts())
    items.push_back({post.id, embed::cosine(emb.post_stance(post, x), hs), Layer::STA});
  sort_descending(items);
  cut(items, config.k1);
  return items;
}

double chi_score(const corpus::Comment& comment, const corpus::Post& parent, const corpus::HateSpeechSample& x,
                 const RetrievalConfig& config, const EmbeddingSource& emb) {
  require(comment.post_id == parent.id, "chi_score: parent does not own the comment");
  double chi = 0.0;
  if (config.alpha != 0.0) chi += config.alpha * embed::cosine(emb.comment_semantic(comment), emb.hs_semantic(x));
  if (config.beta != 0.0) chi += config.beta * sta_score(parent, x, emb);
  return chi;
}

std::vector<ScoredItem> select_comments(const corpus::KnowledgeRepository& repo, const std::vector<ScoredItem>& posts,
                                        const corpus::HateSpeechSample& x, const RetrievalConfig& config,
                                        const EmbeddingSource& emb) {
  config.validate();
  std::vector<ScoredItem> items;
  if (posts.empty()) return items;
  const Vector hs = config.alpha != 0.0 ? emb.hs_semantic(x) : Vector();
  for (const auto& p : posts) {
    require(repo.find_post(p.id) != nullptr, "selected post not in repository: " + p.id);
    for (std::size_t ci : repo.comments_of(p.id)) {
      const auto& c = repo.comments()[ci];
      double chi = config.beta * p.score;  // p.score is the parent's STA
      if (config.alpha != 0.0) chi += config.alpha * embed::cosine(emb.comment_semantic(c), hs);
      items.push_back({c.id, chi, Layer::CHI});
    }
  }
  sort_descending(items);
  cut(items, config.k2);
  return items;
}

std::pair<TokenSeq, std::size_t> fit_sequence(const Vocabulary& vocab, std::string_view sentence,
                                              std::string_view hs_text, const RetrievalConfig& config) {
  const TokenSeq s = vocab.encode(sentence);
  require(!s.empty(), "fit_score of an empty sentence");
  TokenSeq seq{vocab.bos()};
  for (TokenId t : vocab.encode(hs_text)) seq.push_back(t);
  for (TokenId t : vocab.encode(config.counter_prompt)) seq.push_back(t);
  const std::size_t first = seq.size();
  seq.insert(seq.end(), s.begin(), s.end());
  return {seq, first};
}

double fit_score(std::string_view sentence, std::string_view hs_text, const RetrievalConfig& config,
                 const lm::LanguageModel& forward) {
  const auto [seq, first] = fit_sequence(forward.vocab(), sentence, hs_text, config);
  try {
    const double ppl = config.conditional_fit ? lm::conditional_perplexity(forward, seq, first)
                                              : lm::perplexity(forward, seq);
    return std::isfinite(ppl) ? ppl : kInfiniteFit;
  } catch (const NumericError&) {
    return kInfiniteFit;
  }
}

const Knowledge& CounterKnowledge::best() const {
  if (ranked.empty()) throw NoCounterKnowledge();
  return ranked.front();
}

CounterKnowledge ssf(const corpus::KnowledgeRepository& repo, const corpus::HateSpeechSample& x,
                     const RetrievalConfig& config, const EmbeddingSource& emb, const lm::LanguageModel& forward) {
  if (repo.empty()) throw NoCounterKnowledge();
  const auto posts = select_posts(repo, x, config, emb);
  const auto comments = select_comments(repo, posts, x, config, emb);

  CounterKnowledge out;
  for (const auto& c : comments) {
    const auto* comment = repo.find_comment(c.id);
    const auto post_it = std::find_if(posts.begin(), posts.end(), [&](const ScoredItem& p) { return p.id == comment->post_id; });
    for (std::size_t si : repo.sentences_of(c.id)) {
      const auto& s = repo.sentences()[si];
      out.ranked.push_back({s.id(), s.text, comment->post_id, c.id, post_it->score, c.score,
                            fit_score(s.text, x.text, config, forward)});
    }
  }
  // Infinite FIT sorts last; equal scores fall back to the sentence id.
  std::sort(out.ranked.begin(), out.ranked.end(), [](const Knowledge& a, const Knowledge& b) {
    if (a.fit != b.fit) return a.fit < b.fit;
    return a.sentence_id < b.sentence_id;
  });
  if (out.ranked.size() > config.k3) out.ranked.resize(config.k3);
  return out;
}

}  // namespace cnkit::retrieve
