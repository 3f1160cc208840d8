#include "cnkit/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace cnkit::classifier {

using nlohmann::json;

JoinedInput join(const Vocabulary& vocab, const TokenSeq& x, const lm::SoftSequence& y, double temperature,
                 std::size_t max_length) {
  require(temperature > 0.0, "join temperature must be positive");
  vocab.check(x);
  require(y.vocab_size() == vocab.size(), "soft candidate width does not match the vocabulary");
  const std::size_t total = x.size() + y.length() + 3;
  if (total > max_length)
    throw PreconditionError("joined input length " + std::to_string(total) + " exceeds maximum " +
                            std::to_string(max_length));
  const auto V = Eigen::Index(vocab.size());
  JoinedInput out{Matrix::Zero(Eigen::Index(total), V), x.size() + 2};
  Eigen::Index r = 0;
  out.rows(r++, Eigen::Index(vocab.bos())) = 1.0;
  for (TokenId id : x) out.rows(r++, Eigen::Index(id)) = 1.0;
  out.rows(r++, Eigen::Index(vocab.eos())) = 1.0;
  out.rows.block(r, 0, Eigen::Index(y.length()), V) = y.probabilities(temperature);
  r += Eigen::Index(y.length());
  out.rows(r, Eigen::Index(vocab.eos())) = 1.0;
  return out;
}

JoinedInput join_hard(const Vocabulary& vocab, const TokenSeq& x, const TokenSeq& y, std::size_t max_length) {
  vocab.check(x);
  vocab.check(y);
  const std::size_t total = x.size() + y.size() + 3;
  if (total > max_length)
    throw PreconditionError("joined input length " + std::to_string(total) + " exceeds maximum " +
                            std::to_string(max_length));
  JoinedInput out{Matrix::Zero(Eigen::Index(total), Eigen::Index(vocab.size())), x.size() + 2};
  Eigen::Index r = 0;
  out.rows(r++, Eigen::Index(vocab.bos())) = 1.0;
  for (TokenId id : x) out.rows(r++, Eigen::Index(id)) = 1.0;
  out.rows(r++, Eigen::Index(vocab.eos())) = 1.0;
  for (TokenId id : y) out.rows(r++, Eigen::Index(id)) = 1.0;
  out.rows(r, Eigen::Index(vocab.eos())) = 1.0;
  return out;
}

std::vector<LabeledPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open classifier pairs file " + path.string());
  std::vector<LabeledPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = json::parse(line);
    LabeledPair p{tokenize(j.at("hs").get<std::string>()), tokenize(j.at("cn").get<std::string>()),
                  j.at("label").get<int>()};
    if (p.hs.empty() || p.candidate.empty())
      throw Error("pairs line " + std::to_string(lineno) + ": empty hs or cn");
    if (p.label != kCounter && p.label != kNonCounter)
      throw Error("pairs line " + std::to_string(lineno) + ": label must be 0 or 1");
    out.push_back(std::move(p));
  }
  return out;
}

CNClassifier::CNClassifier(const ClassifierConfig& config)
    : config_(config),
      hasher_(config.feature_dim, config.seed ^ 0xc2b2ae35ULL),
      encoder_(2 * config.feature_dim, config.hidden_dim, config.rep_dim, config.seed) {
  std::mt19937_64 rng(derive_seed(config.seed, "head"));
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(double(config.rep_dim)));
  weight_ = Matrix(2, config.rep_dim);
  for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = g(rng);
  bias_ = Vector::Zero(2);
}

Matrix CNClassifier::token_features(const Vocabulary& vocab) const {
  Matrix phi(Eigen::Index(vocab.size()), config_.feature_dim);
  for (std::size_t v = 0; v < vocab.size(); ++v)
    phi.row(Eigen::Index(v)) = hasher_.token_features(vocab.token(v)).transpose();
  return phi;
}

Vector CNClassifier::pooled_from_join(const Matrix& phi, const JoinedInput& joined) const {
  const auto F = config_.feature_dim;
  const auto off = Eigen::Index(joined.candidate_offset);
  const auto n = joined.rows.rows();
  Vector pooled(2 * F);
  pooled.head(F) = (joined.rows.topRows(off).colwise().sum() * phi).transpose() / double(off);
  pooled.tail(F) = (joined.rows.bottomRows(n - off).colwise().sum() * phi).transpose() / double(n - off);
  return pooled;
}

Vector CNClassifier::pooled_features(const std::vector<std::string>& hs,
                                     const std::vector<std::string>& candidate) const {
  const auto F = config_.feature_dim;
  Vector pooled = Vector::Zero(2 * F);
  Vector first = Vector::Zero(F), second = Vector::Zero(F);
  hasher_.accumulate("u:" + std::string(kBos), first);
  for (const auto& t : hs) hasher_.accumulate("u:" + t, first);
  hasher_.accumulate("u:" + std::string(kEos), first);
  for (const auto& t : candidate) hasher_.accumulate("u:" + t, second);
  hasher_.accumulate("u:" + std::string(kEos), second);
  pooled.head(F) = first / double(hs.size() + 2);
  pooled.tail(F) = second / double(candidate.size() + 1);
  return pooled;
}

Vector CNClassifier::head(const Vector& pooled, nn::FeedForward::Cache* cache) const {
  return weight_ * encoder_.forward(pooled, cache) + bias_;
}

Vector CNClassifier::logits(const Matrix& phi, const Vocabulary& vocab, const TokenSeq& x,
                            const lm::SoftSequence& y) const {
  const auto joined = join(vocab, x, y, config_.join_temperature, config_.max_join_length);
  return head(pooled_from_join(phi, joined));
}

Vector CNClassifier::logits(const Vocabulary& vocab, const TokenSeq& x, const lm::SoftSequence& y) const {
  return logits(token_features(vocab), vocab, x, y);
}

Vector CNClassifier::logits_hard(const Vocabulary& vocab, const TokenSeq& x, const TokenSeq& y) const {
  return head(pooled_from_join(token_features(vocab), join_hard(vocab, x, y, config_.max_join_length)));
}

Vector CNClassifier::logits_tokens(const std::vector<std::string>& hs,
                                   const std::vector<std::string>& candidate) const {
  return head(pooled_features(hs, candidate));
}

Vector CNClassifier::logits_text(std::string_view hs, std::string_view candidate) const {
  return logits_tokens(tokenize(hs), tokenize(candidate));
}

Matrix CNClassifier::logits_backward(const Matrix& phi, const Vocabulary& vocab, const TokenSeq& x,
                                     const lm::SoftSequence& y, const Vector& grad_logits) const {
  const double tau = config_.join_temperature;
  const auto joined = join(vocab, x, y, tau, config_.max_join_length);
  nn::FeedForward::Cache cache;
  head(pooled_from_join(phi, joined), &cache);
  const Vector grad_pooled = encoder_.backward(cache, weight_.transpose() * grad_logits, nullptr);
  const auto F = config_.feature_dim;
  const double n_second = double(y.length() + 1);
  // Every candidate row feeds the second segment mean with weight 1/n_second.
  const Vector grad_row = phi * grad_pooled.tail(F) / n_second;
  Matrix grad(Eigen::Index(y.length()), y.logits.cols());
  const auto off = Eigen::Index(joined.candidate_offset);
  for (Eigen::Index t = 0; t < grad.rows(); ++t)
    grad.row(t) = softmax_backward(joined.rows.row(off + t).transpose(), grad_row, tau).transpose();
  return grad;
}

double CNClassifier::counter_probability(std::string_view hs, std::string_view candidate) const {
  return softmax_temp(logits_text(hs, candidate))[kCounter];
}

int CNClassifier::predict(std::string_view hs, std::string_view candidate) const {
  const Vector l = logits_text(hs, candidate);
  return l[kCounter] > l[kNonCounter] ? kCounter : kNonCounter;
}

json CNClassifier::to_json() const {
  const Eigen::Map<const Vector> w(weight_.data(), weight_.size());
  return {{"format", "cnkit-classifier"},
          {"feature_dim", config_.feature_dim},
          {"hidden_dim", config_.hidden_dim},
          {"rep_dim", config_.rep_dim},
          {"join_temperature", config_.join_temperature},
          {"max_join_length", config_.max_join_length},
          {"hash_salt", hasher_.salt()},
          {"encoder", encoder_.to_json()},
          {"weight", nn::vector_to_json(w)},
          {"bias", nn::vector_to_json(bias_)}};
}

CNClassifier CNClassifier::from_json(const json& j) {
  if (j.value("format", "") != "cnkit-classifier") throw Error("not a classifier model file");
  CNClassifier c;
  c.config_.feature_dim = j.at("feature_dim").get<int>();
  c.config_.hidden_dim = j.at("hidden_dim").get<int>();
  c.config_.rep_dim = j.at("rep_dim").get<int>();
  c.config_.join_temperature = j.at("join_temperature").get<double>();
  c.config_.max_join_length = j.at("max_join_length").get<std::size_t>();
  c.hasher_ = nn::FeatureHasher(c.config_.feature_dim, j.at("hash_salt").get<std::uint64_t>());
  c.encoder_ = nn::FeedForward::from_json(j.at("encoder"));
  const Vector w = nn::vector_from_json(j.at("weight"));
  if (w.size() != 2 * c.config_.rep_dim || c.encoder_.output_dim() != c.config_.rep_dim ||
      c.encoder_.input_dim() != 2 * c.config_.feature_dim)
    throw Error("classifier shape mismatch");
  c.weight_ = Eigen::Map<const Matrix>(w.data(), 2, c.config_.rep_dim);
  c.bias_ = nn::vector_from_json(j.at("bias"));
  if (c.bias_.size() != 2) throw Error("classifier bias must have 2 entries");
  return c;
}

void CNClassifier::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << to_json().dump() << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

CNClassifier CNClassifier::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open classifier file " + path.string());
  return from_json(json::parse(in));
}

double accuracy(std::span<const LabeledPair> pairs, const CNClassifier& model) {
  require(!pairs.empty(), "accuracy of empty pair set");
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    const Vector l = model.logits_tokens(p.hs, p.candidate);
    const int guess = l[kCounter] > l[kNonCounter] ? kCounter : kNonCounter;
    correct += guess == p.label;
  }
  return double(correct) / double(pairs.size());
}

TrainReport train(std::span<const LabeledPair> pairs, CNClassifier model, const TrainConfig& config) {
  const bool has_pos = std::any_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.label == kCounter; });
  const bool has_neg = std::any_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.label == kNonCounter; });
  if (!has_pos || !has_neg) throw PreconditionError("classifier training needs both counter and non-counter pairs");
  require(config.learning_rate > 0.0, "learning rate must be positive");

  std::vector<Vector> pooled;
  for (const auto& p : pairs) pooled.push_back(model.pooled_features(p.hs, p.candidate));

  const auto n_enc = model.encoder().num_params();
  const auto n_head = model.weight().size() + model.bias().size();
  nn::Adam opt(n_enc + n_head, config.learning_rate);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  Vector params(n_enc + n_head);
  Vector grad(n_enc + n_head);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Vector enc_grad = Vector::Zero(n_enc);
      Matrix w_grad = Matrix::Zero(2, model.weight().cols());
      Vector b_grad = Vector::Zero(2);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        nn::FeedForward::Cache cache;
        const Vector encoded = model.encoder().forward(pooled[i], &cache);
        const Vector logits = model.weight() * encoded + model.bias();
        Vector probs = softmax_temp(logits);
        const int label = pairs[i].label;
        total -= std::log(std::max(probs[label], 1e-300));
        correct += (logits[kCounter] > logits[kNonCounter] ? kCounter : kNonCounter) == label;
        probs[label] -= 1.0;
        const Vector rep = model.weight().transpose() * probs;
        w_grad += probs * encoded.transpose();
        b_grad += probs;
        model.encoder().backward(cache, rep, &enc_grad);
      }
      const double scale = 1.0 / double(end - start);
      params << model.encoder().params(), Eigen::Map<const Vector>(model.weight().data(), model.weight().size()),
          model.bias();
      grad << enc_grad * scale, Eigen::Map<const Vector>(w_grad.data(), w_grad.size()) * scale, b_grad * scale;
      opt.step(params, grad);
      model.encoder().params() = params.head(n_enc);
      Eigen::Map<Vector>(model.weight().data(), model.weight().size()) = params.segment(n_enc, model.weight().size());
      model.bias() = params.tail(2);
    }
    report.epoch_loss.push_back(total / double(pairs.size()));
    report.epoch_accuracy.push_back(double(correct) / double(pairs.size()));
  }
  report.model = std::move(model);
  return report;
}

double cc_loss(const Vector& logits, double gamma) {
  require(gamma > 0.0, "gamma must be positive");
  require(logits.size() == 2, "classifier logits must have two entries");
  return -log_softmax(logits)[kCounter] / gamma;
}

Vector cc_loss_grad(const Vector& logits, double gamma) {
  require(gamma > 0.0, "gamma must be positive");
  Vector g = softmax_temp(logits);
  g[kCounter] -= 1.0;
  return g / gamma;
}

}  // namespace cnkit::classifier
