#pragma once

#include <string>
#include <vector>

#include "cnkit/classifier.hpp"
#include "cnkit/common.hpp"
#include "cnkit/lm.hpp"

namespace cnkit::energy {

struct EnergyConfig {
  double lambda_a = 0.25;     // knowledge preservation
  double lambda_b = 0.5;      // countering
  double lambda_c_lr = 0.225; // left-to-right fluency
  double lambda_c_rl = 0.025; // right-to-left fluency
  int ngram_n = 2;
  double gamma = 0.0;         // countering scale; 0 means "candidate length T"
  double lm_temperature = 1.0;
  bool normalize_by_length = false;  // divide fluency sums by T
  bool detach_lm = false;            // stop gradients through the LM predictions

  /// Empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;
};

struct EnergyBreakdown {
  double f_sim = 0.0;
  double f_cc = 0.0;
  double f_lr = 0.0;
  double f_rl = 0.0;
  double total = 0.0;
};

/// Everything the energy needs besides the soft sequence.
struct Problem {
  TokenSeq x;       // hate speech tokens
  TokenSeq x_left;  // <bos> + x + counter prompt, left context of the forward LM
  TokenSeq y_star;  // retrieved counter-knowledge
};

/// The models are borrowed; they must outlive the Components.
struct Components {
  const lm::LanguageModel* forward = nullptr;
  const lm::LanguageModel* backward = nullptr;
  const classifier::CNClassifier* classifier = nullptr;
  Matrix classifier_features;  // classifier->token_features(vocab)

  Components(const lm::LanguageModel& fwd, const lm::LanguageModel& bwd, const classifier::CNClassifier& clf);
  const Vocabulary& vocab() const { return forward->vocab(); }
};

/// Expected n-gram precision of the soft sequence against the distinct n-grams
/// of y_star, in [0, 1].
double ngram_match(const lm::SoftSequence& y, const TokenSeq& y_star, int n);

/// Knowledge-preservation energy 1 - ngram_match; optionally writes d/dlogits.
double f_sim(const lm::SoftSequence& y, const TokenSeq& y_star, int n, Matrix* grad = nullptr);

/// Left-to-right fluency energy: sum_t CE(p_fwd(. | x_left, y_<t), softmax(y_t)).
double f_lr(const lm::SoftSequence& y, const TokenSeq& x_left, const lm::LanguageModel& fwd,
            const EnergyConfig& config = {}, Matrix* grad = nullptr);

/// Right-to-left fluency energy: sum_t CE(p_bwd(. | y_>t), softmax(y_t)).
double f_rl(const lm::SoftSequence& y, const lm::LanguageModel& bwd, const EnergyConfig& config = {},
            Matrix* grad = nullptr);

/// lambda_lr * f_lr + lambda_rl * f_rl.
double f_flu(const lm::SoftSequence& y, const TokenSeq& x_left, const lm::LanguageModel& fwd,
             const lm::LanguageModel& bwd, double lambda_lr, double lambda_rl, const EnergyConfig& config = {});

/// Countering energy: counter-class NLL of the classifier on join(x, y), over gamma.
double f_cc(const lm::SoftSequence& y, const TokenSeq& x, const Components& comps, double gamma,
            Matrix* grad = nullptr);

double effective_gamma(const EnergyConfig& config, std::size_t length);

EnergyBreakdown energy(const Problem& problem, const lm::SoftSequence& y, const Components& comps,
                       const EnergyConfig& config);

/// Gradient of the total energy; fills `breakdown` when given.
Matrix grad_energy(const Problem& problem, const lm::SoftSequence& y, const Components& comps,
                   const EnergyConfig& config, EnergyBreakdown* breakdown = nullptr);

}  // namespace cnkit::energy
