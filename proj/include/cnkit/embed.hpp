#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnkit/common.hpp"
#include "cnkit/nn.hpp"

namespace cnkit::embed {

class DegenerateEmbedding : public NumericError {
 public:
  DegenerateEmbedding() : NumericError("degenerate embedding") {}
};

/// Cosine similarity; throws DegenerateEmbedding for a zero or non-finite vector.
double cosine(const Vector& u, const Vector& v);

/// d cosine(u, v) / du.
Vector cosine_grad(const Vector& u, const Vector& v);

/// "[CLS] <target> [SEP] <statement> [SEP]"
std::string format_stance_input(std::string_view target, std::string_view statement);
std::pair<std::string, std::string> parse_stance_input(std::string_view formatted);

struct StanceStatement {
  std::string id;
  std::string text;
  std::string target;
  std::string polarity;  // e.g. "pro" / "con"
};

struct TriplePair {
  std::string anchor;
  std::string positive;
  std::string hard_negative;
  std::string target;

  auto operator<=>(const TriplePair&) const = default;
};

struct PairSet {
  std::vector<TriplePair> pairs;
  std::size_t skipped_anchors = 0;
};

/// Every (anchor, positive, hard negative) with positive sharing target and
/// polarity and the hard negative sharing only the target. Anchors lacking
/// either are skipped and counted.
PairSet build_pairs(std::span<const StanceStatement> dataset);

std::vector<StanceStatement> read_stance_dataset(const std::filesystem::path& path);

/// Line-delimited {"anchor", "positive", "negative", "target"?} records.
std::vector<TriplePair> read_triples(const std::filesystem::path& path);

enum class EncoderKind { stance, semantic };

struct EncoderConfig {
  int feature_dim = 256;
  int hidden_dim = 64;
  int output_dim = 32;
  std::uint64_t seed = 7;
};

/// Hashed unigram/bigram features followed by a tanh hidden layer and a linear
/// projection. Stance encoders embed the "[CLS] target [SEP] text [SEP]" form.
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderKind kind, const EncoderConfig& config);

  EncoderKind kind() const { return kind_; }
  int dim() const { return net_.output_dim(); }

  /// Features of an already formatted input string.
  Vector features(std::string_view input) const;
  Vector encode_raw(std::string_view input, nn::FeedForward::Cache* cache = nullptr) const;

  /// Stance encoders require a target; semantic encoders ignore it.
  Vector encode(std::string_view text, std::string_view target = {}) const;
  std::string prepare(std::string_view text, std::string_view target) const;

  const nn::FeedForward& net() const { return net_; }
  nn::FeedForward& net() { return net_; }

  nlohmann::json to_json() const;
  static Encoder from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Encoder load(const std::filesystem::path& path);

 private:
  EncoderKind kind_ = EncoderKind::semantic;
  nn::FeatureHasher hasher_;
  nn::FeedForward net_;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<Vector> grad_anchor, grad_positive, grad_negative;
};

/// Mean InfoNCE loss over the batch with in-batch positives and hard negatives
/// in the denominator, using cosine similarity.
LossAndGrad contrastive_loss(std::span<const Vector> anchors, std::span<const Vector> positives,
                             std::span<const Vector> negatives, double temperature);

double contrastive_loss(std::span<const TriplePair> batch, const Encoder& encoder, double temperature);

/// Loss and gradient with respect to the encoder's flat parameters.
double contrastive_loss_grad(std::span<const TriplePair> batch, const Encoder& encoder, double temperature,
                             Vector& param_grad);

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-2;
  double temperature = 0.05;
  std::size_t batch_size = 16;
  std::uint64_t seed = 13;
};

struct TrainReport {
  Encoder encoder;
  std::vector<double> epoch_loss;
  bool diverged = false;
};

TrainReport train_encoder(std::span<const TriplePair> pairs, Encoder encoder, const TrainConfig& config);

/// Mean cos(anchor, positive) - mean cos(anchor, negative).
double stance_margin(std::span<const TriplePair> pairs, const Encoder& encoder);

/// Precomputed vectors keyed by id. Text format: "dim <d>" then "<id> v1 ... vd".
class EmbeddingTable {
 public:
  explicit EmbeddingTable(int dim = 0) : dim_(dim) {}

  int dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }
  void set(const std::string& id, Vector v);
  const Vector* find(std::string_view id) const;
  const std::map<std::string, Vector>& rows() const { return rows_; }

  void write(std::ostream& out) const;
  static EmbeddingTable read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static EmbeddingTable load(const std::filesystem::path& path);

 private:
  int dim_;
  std::map<std::string, Vector> rows_;
};

}  // namespace cnkit::embed
