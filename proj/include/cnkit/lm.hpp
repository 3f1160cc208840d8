#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnkit/common.hpp"
#include "cnkit/nn.hpp"
#include "cnkit/text.hpp"

namespace cnkit::lm {

enum class Direction { forward, backward };

const char* to_string(Direction d);
Direction direction_from_string(std::string_view s);

/// T x |V| matrix of unnormalized token scores, the decoder's optimization variable.
struct SoftSequence {
  Matrix logits;

  SoftSequence() = default;
  explicit SoftSequence(Matrix m);

  std::size_t length() const { return std::size_t(logits.rows()); }
  std::size_t vocab_size() const { return std::size_t(logits.cols()); }

  /// Row t has `margin` at ids[t] and 0 elsewhere; with the default margin the
  /// row softmax is exactly one-hot in double precision.
  static SoftSequence one_hot(const TokenSeq& ids, std::size_t vocab_size, double margin = 1000.0);

  /// Row-wise softmax(logits / temperature).
  Matrix probabilities(double temperature = 1.0) const;
  TokenSeq argmax() const;
};

/// Backend contract. Contexts are probability rows over the vocabulary, oldest
/// first, exactly context_size() of them. Hard tokens are one-hot rows.
/// A backward model reads its context right to left.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual const Vocabulary& vocab() const = 0;
  virtual Direction direction() const = 0;
  virtual int context_size() const = 0;

  virtual Vector predict(const Matrix& context) const = 0;
  /// d(loss)/d(context) given d(loss)/d(predict(context)).
  virtual Matrix predict_backward(const Matrix& context, const Vector& grad_probs) const = 0;
  virtual Vector predict_hard(const TokenSeq& context) const;

  virtual nlohmann::json to_json() const = 0;
  void save(const std::filesystem::path& path) const;

  std::size_t vocab_size() const { return vocab().size(); }
};

std::unique_ptr<LanguageModel> load_model(const std::filesystem::path& path);
std::unique_ptr<LanguageModel> model_from_json(const nlohmann::json& j);

class UniformLM final : public LanguageModel {
 public:
  UniformLM(Vocabulary vocab, Direction dir = Direction::forward, int context = 1)
      : vocab_(std::move(vocab)), dir_(dir), context_(context) {}

  const Vocabulary& vocab() const override { return vocab_; }
  Direction direction() const override { return dir_; }
  int context_size() const override { return context_; }
  Vector predict(const Matrix& context) const override;
  Matrix predict_backward(const Matrix& context, const Vector& grad_probs) const override;
  nlohmann::json to_json() const override;

 private:
  Vocabulary vocab_;
  Direction dir_;
  int context_;
};

struct ToyLMConfig {
  int order = 3;                // n of the n-gram; context is order-1 tokens
  double add_k = 0.1;           // 0 disables smoothing
  double neural_weight = 0.3;   // mixture weight of the neural component
  int embed_dim = 16;
  int hidden_dim = 32;
  int epochs = 8;
  double learning_rate = 1e-2;
  std::size_t batch_size = 32;
};

/// Mixture of an add-k smoothed n-gram table and a neural n-gram model
/// (token embeddings, one tanh hidden layer, softmax output). A soft context
/// row contributes expected embeddings to the neural part and expected
/// context weights to the table part, so one-hot rows reproduce hard input.
class ToyLM final : public LanguageModel {
 public:
  struct ContextStats {
    TokenSeq context;
    double total = 0.0;
    std::vector<std::pair<TokenId, double>> next;  // sorted by token id
  };

  ToyLM(Vocabulary vocab, Direction dir, const ToyLMConfig& config, std::uint64_t seed);

  const Vocabulary& vocab() const override { return vocab_; }
  Direction direction() const override { return dir_; }
  int context_size() const override { return config_.order - 1; }
  Vector predict(const Matrix& context) const override;
  Matrix predict_backward(const Matrix& context, const Vector& grad_probs) const override;
  Vector predict_hard(const TokenSeq& context) const override;
  nlohmann::json to_json() const override;
  static std::unique_ptr<ToyLM> from_json(const nlohmann::json& j);

  const ToyLMConfig& config() const { return config_; }
  const std::vector<ContextStats>& table() const { return table_; }
  /// Smoothed n-gram probability of `next` after a hard context (no neural part).
  double table_prob(const TokenSeq& context, TokenId next) const;

  /// Replaces the count table with counts from `sequences` (already oriented).
  void fit_counts(const std::vector<TokenSeq>& sequences);
  /// Trains the neural component by cross-entropy; returns per-epoch mean loss.
  std::vector<double> fit_neural(const std::vector<TokenSeq>& sequences, std::uint64_t seed);

  Matrix& embedding() { return embedding_; }
  const Matrix& embedding() const { return embedding_; }
  nn::FeedForward& net() { return net_; }
  const nn::FeedForward& net() const { return net_; }

 private:
  Vector count_predict(const Matrix& context) const;
  Vector neural_predict(const Matrix& context, nn::FeedForward::Cache* cache) const;
  void rebuild_index();

  Vocabulary vocab_;
  Direction dir_;
  ToyLMConfig config_;
  std::vector<ContextStats> table_;
  std::map<TokenSeq, std::size_t> table_index_;
  Matrix embedding_;   // |V| x embed_dim
  nn::FeedForward net_;  // (context * embed_dim) -> hidden -> |V|
};

/// Training sequences: [<bos>]*(order-1) + tokens + [<eos>], tokens reversed
/// first for a backward model.
std::vector<TokenSeq> training_sequences(const std::vector<TokenSeq>& corpus, Direction dir, int context);

std::unique_ptr<ToyLM> train_toy_lm(const std::vector<TokenSeq>& corpus, const Vocabulary& vocab, Direction dir,
                                    const ToyLMConfig& config, std::uint64_t seed);

/// The context_size() rows preceding the next prediction over `hard` tokens
/// followed by the first `soft_count` rows of `soft_probs`, left-padded with
/// <bos>. source[j] is the soft row feeding context row j, or -1.
struct ContextWindow {
  Matrix rows;
  std::vector<long> source;
};

ContextWindow context_window(const LanguageModel& lm, const TokenSeq& hard, const Matrix* soft_probs,
                             std::size_t soft_count);

/// Context rows for predicting the token after `prefix` (left-padded with <bos>).
Matrix hard_context(const LanguageModel& lm, const TokenSeq& prefix);

Vector next_dist(const LanguageModel& lm, const TokenSeq& prefix);

/// Next-token distribution after `left_context` followed by the soft rows
/// softmax(soft_prefix / temperature).
Vector next_dist_soft(const LanguageModel& lm, const SoftSequence& soft_prefix, const TokenSeq& left_context,
                      double temperature = 1.0);

/// d(loss)/d(soft_prefix.logits) given d(loss)/d(next_dist_soft(...)).
Matrix next_dist_soft_backward(const LanguageModel& lm, const SoftSequence& soft_prefix,
                               const TokenSeq& left_context, const Vector& grad_probs, double temperature = 1.0);

/// exp(mean -log p(seq[t] | seq[<t])) over t = 1..T-1.
double perplexity(const LanguageModel& lm, const TokenSeq& seq);
/// Same, but only positions t >= first_scored contribute.
double conditional_perplexity(const LanguageModel& lm, const TokenSeq& seq, std::size_t first_scored);

/// Row t = log next_dist(<bos> + seq[<t]); |seq| rows.
SoftSequence logits_of(const LanguageModel& lm, const TokenSeq& seq);

/// Greedy continuation after `prefix`: appends `count` rows of log-probabilities
/// and the argmax tokens.
std::pair<SoftSequence, TokenSeq> greedy_continuation(const LanguageModel& lm, const TokenSeq& prefix,
                                                      std::size_t count);

}  // namespace cnkit::lm
