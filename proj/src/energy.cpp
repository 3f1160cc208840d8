#include "cnkit/energy.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cnkit::energy {

std::vector<std::string> EnergyConfig::violations() const {
  std::vector<std::string> out;
  if (lambda_a < 0 || lambda_b < 0 || lambda_c_lr < 0 || lambda_c_rl < 0) out.push_back("all lambda weights must be >= 0");
  if (!(lambda_a + lambda_b + lambda_c_lr + lambda_c_rl > 0)) out.push_back("lambda weights must not all be zero");
  if (ngram_n < 1) out.push_back("ngram_n must be >= 1");
  if (gamma < 0) out.push_back("gamma must be > 0 (or 0 for the candidate length)");
  if (!(lm_temperature > 0)) out.push_back("lm_temperature must be > 0");
  return out;
}

void EnergyConfig::validate() const {
  const auto v = violations();
  if (!v.empty()) throw PreconditionError("invalid energy config: " + v.front());
}

Components::Components(const lm::LanguageModel& fwd, const lm::LanguageModel& bwd,
                       const classifier::CNClassifier& clf)
    : forward(&fwd), backward(&bwd), classifier(&clf), classifier_features(clf.token_features(fwd.vocab())) {
  require(fwd.vocab() == bwd.vocab(), "forward and backward models must share a vocabulary");
  require(fwd.direction() == lm::Direction::forward, "left-to-right fluency needs a forward model");
  require(bwd.direction() == lm::Direction::backward, "right-to-left fluency needs a backward model");
}

namespace {

std::vector<TokenSeq> distinct_ngrams(const TokenSeq& seq, int n) {
  std::set<TokenSeq> grams;
  for (std::size_t t = 0; t + std::size_t(n) <= seq.size(); ++t)
    grams.emplace(seq.begin() + long(t), seq.begin() + long(t) + n);
  return {grams.begin(), grams.end()};
}

void check_grad(const Matrix& g, const char* term) {
  if (!g.allFinite()) throw NumericError(std::string("non-finite gradient in ") + term);
}

}  // namespace

double ngram_match(const lm::SoftSequence& y, const TokenSeq& y_star, int n) {
  require(n >= 1, "n-gram order must be >= 1");
  require(y_star.size() >= std::size_t(n), "counter-knowledge shorter than the n-gram order");
  require(y.length() >= std::size_t(n), "soft sequence shorter than the n-gram order");
  const Matrix probs = y.probabilities();
  const auto grams = distinct_ngrams(y_star, n);
  const std::size_t windows = y.length() - std::size_t(n) + 1;
  double match = 0.0;
  for (std::size_t t = 0; t < windows; ++t)
    for (const auto& g : grams) {
      double prod = 1.0;
      for (int j = 0; j < n; ++j) prod *= probs(Eigen::Index(t) + j, Eigen::Index(g[std::size_t(j)]));
      match += prod;
    }
  return match / double(windows);
}

double f_sim(const lm::SoftSequence& y, const TokenSeq& y_star, int n, Matrix* grad) {
  const double value = 1.0 - ngram_match(y, y_star, n);
  if (grad) {
    const Matrix probs = y.probabilities();
    const auto grams = distinct_ngrams(y_star, n);
    const std::size_t windows = y.length() - std::size_t(n) + 1;
    Matrix grad_probs = Matrix::Zero(probs.rows(), probs.cols());
    for (std::size_t t = 0; t < windows; ++t)
      for (const auto& g : grams)
        for (int j = 0; j < n; ++j) {
          double others = 1.0;
          for (int i = 0; i < n && others != 0.0; ++i)
            if (i != j) others *= probs(Eigen::Index(t) + i, Eigen::Index(g[std::size_t(i)]));
          grad_probs(Eigen::Index(t) + j, Eigen::Index(g[std::size_t(j)])) -= others / double(windows);
        }
    grad->resize(probs.rows(), probs.cols());
    for (Eigen::Index t = 0; t < probs.rows(); ++t)
      grad->row(t) = softmax_backward(probs.row(t).transpose(), grad_probs.row(t).transpose()).transpose();
  }
  return value;
}

namespace {

// Shared body of both fluency directions. `context_of(t)` yields the LM context
// window for position t with sources indexing rows of `reading_probs`, and
// `original_row(s)` maps a reading-order row back to the sequence row.
template <typename ContextOf, typename OriginalRow>
double fluency(const lm::SoftSequence& y, const lm::LanguageModel& model, const EnergyConfig& config,
               const Matrix& reading_probs, ContextOf context_of, OriginalRow original_row, Matrix* grad) {
  const auto T = Eigen::Index(y.length());
  require(y.vocab_size() == model.vocab_size(), "soft sequence width does not match the language model");
  const double scale = config.normalize_by_length ? 1.0 / double(T) : 1.0;
  const double tau = config.lm_temperature;
  if (grad) *grad = Matrix::Zero(T, y.logits.cols());
  double value = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const lm::ContextWindow window = context_of(t);
    const Vector p = model.predict(window.rows);
    const Vector log_q = log_softmax(y.logits.row(t).transpose());
    value -= scale * p.dot(log_q);
    if (!grad) continue;
    const Vector q = softmax_temp(y.logits.row(t).transpose());
    grad->row(t) += (scale * (q - p)).transpose();
    if (config.detach_lm) continue;
    const Matrix grad_ctx = model.predict_backward(window.rows, -scale * log_q);
    for (std::size_t j = 0; j < window.source.size(); ++j) {
      const long s = window.source[j];
      if (s < 0) continue;
      grad->row(original_row(s)) +=
          softmax_backward(reading_probs.row(s).transpose(), grad_ctx.row(Eigen::Index(j)).transpose(), tau)
              .transpose();
    }
  }
  return value;
}

}  // namespace

double f_lr(const lm::SoftSequence& y, const TokenSeq& x_left, const lm::LanguageModel& fwd,
            const EnergyConfig& config, Matrix* grad) {
  const Matrix probs = y.probabilities(config.lm_temperature);
  double v = fluency(
      y, fwd, config, probs,
      [&](Eigen::Index t) { return lm::context_window(fwd, x_left, &probs, std::size_t(t)); },
      [](long s) { return Eigen::Index(s); }, grad);
  if (!std::isfinite(v)) throw NumericError("non-finite left-to-right fluency");
  if (grad) check_grad(*grad, "f_lr");
  return v;
}

double f_rl(const lm::SoftSequence& y, const lm::LanguageModel& bwd, const EnergyConfig& config, Matrix* grad) {
  const Matrix probs = y.probabilities(config.lm_temperature);
  const auto T = probs.rows();
  const Matrix reversed = probs.colwise().reverse();
  const TokenSeq no_hard;
  double v = fluency(
      y, bwd, config, reversed,
      [&](Eigen::Index t) { return lm::context_window(bwd, no_hard, &reversed, std::size_t(T - 1 - t)); },
      [T](long s) { return T - 1 - Eigen::Index(s); }, grad);
  if (!std::isfinite(v)) throw NumericError("non-finite right-to-left fluency");
  if (grad) check_grad(*grad, "f_rl");
  return v;
}

double f_flu(const lm::SoftSequence& y, const TokenSeq& x_left, const lm::LanguageModel& fwd,
             const lm::LanguageModel& bwd, double lambda_lr, double lambda_rl, const EnergyConfig& config) {
  double v = 0.0;
  if (lambda_lr != 0.0) v += lambda_lr * f_lr(y, x_left, fwd, config);
  if (lambda_rl != 0.0) v += lambda_rl * f_rl(y, bwd, config);
  return v;
}

double f_cc(const lm::SoftSequence& y, const TokenSeq& x, const Components& comps, double gamma, Matrix* grad) {
  const auto& clf = *comps.classifier;
  const Vector logits = clf.logits(comps.classifier_features, comps.vocab(), x, y);
  const double v = classifier::cc_loss(logits, gamma);
  if (!std::isfinite(v)) throw NumericError("non-finite countering loss");
  if (grad) {
    *grad = clf.logits_backward(comps.classifier_features, comps.vocab(), x, y, classifier::cc_loss_grad(logits, gamma));
    check_grad(*grad, "f_cc");
  }
  return v;
}

double effective_gamma(const EnergyConfig& config, std::size_t length) {
  return config.gamma > 0.0 ? config.gamma : double(length);
}

namespace {

EnergyBreakdown evaluate(const Problem& problem, const lm::SoftSequence& y, const Components& comps,
                         const EnergyConfig& config, Matrix* grad) {
  config.validate();
  EnergyBreakdown b;
  Matrix g;
  if (grad) *grad = Matrix::Zero(y.logits.rows(), y.logits.cols());
  auto accumulate = [&](double lambda, double value, double& slot) {
    slot = value;
    b.total += lambda * value;
    if (grad && lambda != 0.0) *grad += lambda * g;
  };
  // Terms with zero weight are still reported in the breakdown.
  accumulate(config.lambda_a, f_sim(y, problem.y_star, config.ngram_n, grad && config.lambda_a != 0 ? &g : nullptr),
             b.f_sim);
  accumulate(config.lambda_b,
             f_cc(y, problem.x, comps, effective_gamma(config, y.length()), grad && config.lambda_b != 0 ? &g : nullptr),
             b.f_cc);
  accumulate(config.lambda_c_lr,
             f_lr(y, problem.x_left, *comps.forward, config, grad && config.lambda_c_lr != 0 ? &g : nullptr), b.f_lr);
  accumulate(config.lambda_c_rl, f_rl(y, *comps.backward, config, grad && config.lambda_c_rl != 0 ? &g : nullptr),
             b.f_rl);
  if (!std::isfinite(b.total)) throw NumericError("non-finite total energy");
  return b;
}

}  // namespace

EnergyBreakdown energy(const Problem& problem, const lm::SoftSequence& y, const Components& comps,
                       const EnergyConfig& config) {
  return evaluate(problem, y, comps, config, nullptr);
}

Matrix grad_energy(const Problem& problem, const lm::SoftSequence& y, const Components& comps,
                   const EnergyConfig& config, EnergyBreakdown* breakdown) {
  Matrix grad;
  const auto b = evaluate(problem, y, comps, config, &grad);
  if (breakdown) *breakdown = b;
  return grad;
}

}  // namespace cnkit::energy
