#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnkit/common.hpp"
#include "cnkit/lm.hpp"
#include "cnkit/nn.hpp"
#include "cnkit/text.hpp"

namespace cnkit::classifier {

inline constexpr int kNonCounter = 0;
inline constexpr int kCounter = 1;

struct ClassifierConfig {
  int feature_dim = 128;
  int hidden_dim = 32;
  int rep_dim = 16;
  double join_temperature = 1.0;
  std::size_t max_join_length = 512;
  std::uint64_t seed = 11;
};

/// "<bos> x <eos> softmax(y / tau) <eos>" as probability rows over a vocabulary.
struct JoinedInput {
  Matrix rows;
  std::size_t candidate_offset = 0;  // index of the first candidate row
  std::size_t length() const { return std::size_t(rows.rows()); }
};

JoinedInput join(const Vocabulary& vocab, const TokenSeq& x, const lm::SoftSequence& y, double temperature,
                 std::size_t max_length = 512);
JoinedInput join_hard(const Vocabulary& vocab, const TokenSeq& x, const TokenSeq& y, std::size_t max_length = 512);

struct LabeledPair {
  std::vector<std::string> hs;
  std::vector<std::string> candidate;
  int label = kNonCounter;
};

std::vector<LabeledPair> read_pairs(const std::filesystem::path& path);

/// Hashed token features mean-pooled per segment, a tanh hidden layer, and a
/// 2-way linear head. The pooled vector plays the role of the sequence
/// summary that a transformer would read off the leading <bos> position.
class CNClassifier {
 public:
  CNClassifier() = default;
  explicit CNClassifier(const ClassifierConfig& config);

  const ClassifierConfig& config() const { return config_; }

  /// |V| x feature_dim table of per-token features for a vocabulary.
  Matrix token_features(const Vocabulary& vocab) const;

  Vector logits(const Vocabulary& vocab, const TokenSeq& x, const lm::SoftSequence& y) const;
  Vector logits(const Matrix& token_features, const Vocabulary& vocab, const TokenSeq& x,
                const lm::SoftSequence& y) const;
  Vector logits_hard(const Vocabulary& vocab, const TokenSeq& x, const TokenSeq& y) const;
  Vector logits_tokens(const std::vector<std::string>& hs, const std::vector<std::string>& candidate) const;
  Vector logits_text(std::string_view hs, std::string_view candidate) const;

  /// d(loss)/d(y.logits) given d(loss)/d(logits).
  Matrix logits_backward(const Matrix& token_features, const Vocabulary& vocab, const TokenSeq& x,
                         const lm::SoftSequence& y, const Vector& grad_logits) const;

  double counter_probability(std::string_view hs, std::string_view candidate) const;
  int predict(std::string_view hs, std::string_view candidate) const;

  /// Logits from pooled segment features.
  Vector head(const Vector& pooled, nn::FeedForward::Cache* cache = nullptr) const;
  Vector pooled_features(const std::vector<std::string>& hs, const std::vector<std::string>& candidate) const;

  const nn::FeedForward& encoder() const { return encoder_; }
  nn::FeedForward& encoder() { return encoder_; }
  const Matrix& weight() const { return weight_; }
  Matrix& weight() { return weight_; }
  const Vector& bias() const { return bias_; }
  Vector& bias() { return bias_; }

  nlohmann::json to_json() const;
  static CNClassifier from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static CNClassifier load(const std::filesystem::path& path);

 private:
  Vector pooled_from_join(const Matrix& token_features, const JoinedInput& joined) const;

  ClassifierConfig config_;
  nn::FeatureHasher hasher_;
  nn::FeedForward encoder_;
  Matrix weight_;  // 2 x rep_dim
  Vector bias_;    // 2
};

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-2;
  std::size_t batch_size = 32;
  std::uint64_t seed = 17;
};

struct TrainReport {
  CNClassifier model;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

TrainReport train(std::span<const LabeledPair> pairs, CNClassifier model, const TrainConfig& config);

double accuracy(std::span<const LabeledPair> pairs, const CNClassifier& model);

/// Negative log-likelihood of the counter class divided by gamma.
double cc_loss(const Vector& logits, double gamma);
Vector cc_loss_grad(const Vector& logits, double gamma);

}  // namespace cnkit::classifier
