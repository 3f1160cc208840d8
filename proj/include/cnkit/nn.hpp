#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnkit/common.hpp"

namespace cnkit::nn {

/// Signed feature hashing of strings into a fixed-width vector.
class FeatureHasher {
 public:
  explicit FeatureHasher(int dim = 256, std::uint64_t salt = 0) : dim_(dim), salt_(salt) {}

  int dim() const { return dim_; }
  std::uint64_t salt() const { return salt_; }

  /// Adds sign(key) to bucket(key).
  void accumulate(const std::string& key, Vector& features, double weight = 1.0) const;

  /// Mean hashed unigram + bigram features of a token list.
  Vector bag_features(const std::vector<std::string>& tokens) const;

  /// Hashed unigram feature of a single token.
  Vector token_features(const std::string& token) const;

 private:
  int dim_;
  std::uint64_t salt_;
};

/// Two-layer perceptron z = W2 tanh(W1 f + b1) + b2 with flat parameter storage.
class FeedForward {
 public:
  struct Cache {
    Vector input;
    Vector hidden;  // tanh activations
  };

  FeedForward() = default;
  FeedForward(int input_dim, int hidden_dim, int output_dim, std::uint64_t seed);

  int input_dim() const { return in_; }
  int hidden_dim() const { return hid_; }
  int output_dim() const { return out_; }

  Vector forward(const Vector& input, Cache* cache = nullptr) const;

  /// Accumulates parameter gradients into `param_grad` (same layout as params())
  /// and returns d/dinput.
  Vector backward(const Cache& cache, const Vector& grad_output, Vector* param_grad) const;

  const Vector& params() const { return params_; }
  Vector& params() { return params_; }
  Eigen::Index num_params() const { return params_.size(); }

  nlohmann::json to_json() const;
  static FeedForward from_json(const nlohmann::json& j);

 private:
  using MatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  MatMap w1() const;
  MatMap w2() const;
  Eigen::Map<const Vector> b1() const;
  Eigen::Map<const Vector> b2() const;
  Eigen::Index off_b1() const { return Eigen::Index(hid_) * in_; }
  Eigen::Index off_w2() const { return off_b1() + hid_; }
  Eigen::Index off_b2() const { return off_w2() + Eigen::Index(out_) * hid_; }

  int in_ = 0;
  int hid_ = 0;
  int out_ = 0;
  Vector params_;
};

/// Adam over a flat parameter vector.
class Adam {
 public:
  explicit Adam(Eigen::Index n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Vector& params, const Vector& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Vector m_, v_;
};

nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

}  // namespace cnkit::nn
