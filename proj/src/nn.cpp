#include "cnkit/nn.hpp"

#include <cmath>
#include <random>

namespace cnkit::nn {

void FeatureHasher::accumulate(const std::string& key, Vector& features, double weight) const {
  const std::uint64_t h = fnv1a64(key, 14695981039346656037ULL ^ salt_);
  const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim_));
  const double sign = (h >> 63) ? -1.0 : 1.0;
  features[bucket] += sign * weight;
}

Vector FeatureHasher::bag_features(const std::vector<std::string>& tokens) const {
  Vector f = Vector::Zero(dim_);
  if (tokens.empty()) return f;
  double n = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    accumulate("u:" + tokens[i], f);
    n += 1.0;
    if (i + 1 < tokens.size()) {
      accumulate("b:" + tokens[i] + " " + tokens[i + 1], f);
      n += 1.0;
    }
  }
  return f / n;
}

Vector FeatureHasher::token_features(const std::string& token) const {
  Vector f = Vector::Zero(dim_);
  accumulate("u:" + token, f);
  return f;
}

FeedForward::FeedForward(int input_dim, int hidden_dim, int output_dim, std::uint64_t seed)
    : in_(input_dim), hid_(hidden_dim), out_(output_dim) {
  require(in_ > 0 && hid_ > 0 && out_ > 0, "layer dimensions must be positive");
  params_ = Vector::Zero(off_b2() + out_);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g1(0.0, 1.0 / std::sqrt(double(in_)));
  std::normal_distribution<double> g2(0.0, 1.0 / std::sqrt(double(hid_)));
  for (Eigen::Index i = 0; i < off_b1(); ++i) params_[i] = g1(rng);
  for (Eigen::Index i = off_w2(); i < off_b2(); ++i) params_[i] = g2(rng);
}

FeedForward::MatMap FeedForward::w1() const { return MatMap(params_.data(), hid_, in_); }
FeedForward::MatMap FeedForward::w2() const { return MatMap(params_.data() + off_w2(), out_, hid_); }
Eigen::Map<const Vector> FeedForward::b1() const { return Eigen::Map<const Vector>(params_.data() + off_b1(), hid_); }
Eigen::Map<const Vector> FeedForward::b2() const { return Eigen::Map<const Vector>(params_.data() + off_b2(), out_); }

Vector FeedForward::forward(const Vector& input, Cache* cache) const {
  require(input.size() == in_, "feed-forward input dimension mismatch");
  Vector hidden = (w1() * input + b1()).array().tanh();
  Vector out = w2() * hidden + b2();
  if (cache) {
    cache->input = input;
    cache->hidden = std::move(hidden);
  }
  return out;
}

Vector FeedForward::backward(const Cache& cache, const Vector& grad_output, Vector* param_grad) const {
  Vector grad_hidden = w2().transpose() * grad_output;
  Vector grad_pre = grad_hidden.array() * (1.0 - cache.hidden.array().square());
  if (param_grad) {
    Vector& g = *param_grad;
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw1(g.data(), hid_, in_);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw2(g.data() + off_w2(),
                                                                                          out_, hid_);
    gw1.noalias() += grad_pre * cache.input.transpose();
    g.segment(off_b1(), hid_) += grad_pre;
    gw2.noalias() += grad_output * cache.hidden.transpose();
    g.segment(off_b2(), out_) += grad_output;
  }
  return w1().transpose() * grad_pre;
}

nlohmann::json FeedForward::to_json() const {
  return {{"input_dim", in_}, {"hidden_dim", hid_}, {"output_dim", out_}, {"params", vector_to_json(params_)}};
}

FeedForward FeedForward::from_json(const nlohmann::json& j) {
  FeedForward ff;
  ff.in_ = j.at("input_dim").get<int>();
  ff.hid_ = j.at("hidden_dim").get<int>();
  ff.out_ = j.at("output_dim").get<int>();
  ff.params_ = vector_from_json(j.at("params"));
  if (ff.params_.size() != ff.off_b2() + ff.out_) throw Error("feed-forward parameter count mismatch");
  return ff;
}

Adam::Adam(Eigen::Index n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

void Adam::step(Vector& params, const Vector& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const nlohmann::json& j) {
  auto vals = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(vals.data(), Eigen::Index(vals.size()));
}

}  // namespace cnkit::nn
