#include "cnkit/decoder.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

namespace cnkit::decoder {

const char* to_string(NoiseDecay d) {
  switch (d) {
    case NoiseDecay::linear: return "linear";
    case NoiseDecay::constant: return "constant";
    case NoiseDecay::exponential: return "exponential";
  }
  return "?";
}

NoiseDecay noise_decay_from_string(std::string_view s) {
  if (s == "linear") return NoiseDecay::linear;
  if (s == "constant") return NoiseDecay::constant;
  if (s == "exponential") return NoiseDecay::exponential;
  throw PreconditionError("unknown noise decay '" + std::string(s) + "'");
}

const char* to_string(DiscretizeMode m) { return m == DiscretizeMode::argmax ? "argmax" : "sample"; }

DiscretizeMode discretize_mode_from_string(std::string_view s) {
  if (s == "argmax") return DiscretizeMode::argmax;
  if (s == "sample") return DiscretizeMode::sample;
  throw PreconditionError("unknown discretize mode '" + std::string(s) + "'");
}

std::vector<std::string> DecoderConfig::violations() const {
  std::vector<std::string> out;
  if (iterations < 0) out.push_back("iterations must be >= 0");
  if (!(step_size > 0)) out.push_back("step_size must be > 0");
  if (max_length < 1) out.push_back("max_length must be >= 1");
  if (!(noise_initial >= 0)) out.push_back("noise_initial must be >= 0");
  if (noise_decay == NoiseDecay::exponential && !(noise_rate > 0 && noise_rate <= 1))
    out.push_back("noise_rate must be in (0, 1]");
  if (!(discretize_temperature > 0)) out.push_back("discretize_temperature must be > 0");
  return out;
}

void DecoderConfig::validate() const {
  const auto v = violations();
  if (!v.empty()) throw PreconditionError("invalid decoder config: " + v.front());
}

double DecoderConfig::noise_at(int n) const {
  switch (noise_decay) {
    case NoiseDecay::constant: return noise_initial;
    case NoiseDecay::exponential: return noise_initial * std::pow(noise_rate, double(n));
    case NoiseDecay::linear:
      return iterations > 0 ? noise_initial * (1.0 - double(n) / double(iterations)) : noise_initial;
  }
  return noise_initial;
}

lm::SoftSequence init_from_knowledge(const TokenSeq& y_star, const lm::LanguageModel& forward,
                                     std::size_t max_length) {
  require(!y_star.empty(), "counter-knowledge is empty");
  require(max_length >= 1, "max_length must be >= 1");
  const std::size_t kept = std::min(y_star.size(), max_length);
  const TokenSeq head(y_star.begin(), y_star.begin() + long(kept));
  Matrix rows(Eigen::Index(max_length), Eigen::Index(forward.vocab_size()));
  rows.topRows(Eigen::Index(kept)) = lm::logits_of(forward, head).logits;
  if (kept < max_length) {
    TokenSeq prefix{forward.vocab().bos()};
    prefix.insert(prefix.end(), head.begin(), head.end());
    rows.bottomRows(Eigen::Index(max_length - kept)) =
        lm::greedy_continuation(forward, prefix, max_length - kept).first.logits;
  }
  return lm::SoftSequence(std::move(rows));
}

lm::SoftSequence langevin_step(const lm::SoftSequence& y, const Matrix& grad, double step_size, double sigma,
                               std::mt19937_64& rng) {
  require(grad.rows() == y.logits.rows() && grad.cols() == y.logits.cols(), "gradient shape mismatch");
  require(sigma >= 0, "noise scale must be >= 0");
  Matrix next = y.logits - step_size * grad;
  if (sigma > 0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < next.rows(); ++i)
      for (Eigen::Index j = 0; j < next.cols(); ++j) next(i, j) += noise(rng);
  }
  if (!next.allFinite()) throw NumericError("non-finite soft sequence after Langevin step");
  return lm::SoftSequence(std::move(next));
}

TokenSeq discretize(const lm::SoftSequence& y, const DecoderConfig& config, std::mt19937_64& rng) {
  if (config.discretize_mode == DiscretizeMode::argmax) return y.argmax();
  const Matrix probs = y.probabilities(config.discretize_temperature);
  TokenSeq out;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index t = 0; t < probs.rows(); ++t) {
    const double u = unit(rng);
    double acc = 0.0;
    Eigen::Index pick = probs.cols() - 1;
    for (Eigen::Index v = 0; v < probs.cols(); ++v) {
      acc += probs(t, v);
      if (u < acc) {
        pick = v;
        break;
      }
    }
    out.push_back(TokenId(pick));
  }
  return out;
}

TokenSeq truncate_at_eos(const TokenSeq& tokens, const Vocabulary& vocab) {
  TokenSeq out;
  for (TokenId t : tokens) {
    if (t == vocab.eos()) break;
    out.push_back(t);
  }
  return out;
}

DecodeResult decode(const energy::Problem& problem, const energy::Components& comps,
                    const energy::EnergyConfig& energy_config, const DecoderConfig& config,
                    const std::string& provenance) {
  config.validate();
  energy_config.validate();
  std::mt19937_64 rng(config.seed);
  DecodeTrace trace;
  trace.provenance = provenance;
  lm::SoftSequence y = init_from_knowledge(problem.y_star, *comps.forward, config.max_length);
  try {
    for (int n = 0; n < config.iterations; ++n) {
      energy::EnergyBreakdown b;
      const Matrix grad = energy::grad_energy(problem, y, comps, energy_config, &b);
      trace.steps.push_back(b);
      y = langevin_step(y, grad, config.step_size, config.noise_at(n), rng);
    }
    trace.steps.push_back(energy::energy(problem, y, comps, energy_config));
  } catch (const Error& e) {
    trace.final_soft = y;
    throw DecodeError(std::string("decoding failed at iteration ") + std::to_string(trace.steps.size()) + ": " +
                          e.what(),
                      std::move(trace));
  }
  DecodeResult result;
  const TokenSeq raw = discretize(y, config, rng);
  result.tokens = truncate_at_eos(raw, comps.vocab());
  std::vector<std::string> words;
  for (TokenId t : result.tokens)
    if (!comps.vocab().is_special(t)) words.push_back(comps.vocab().token(t));
  result.text = detokenize(words);
  trace.final_soft = std::move(y);
  trace.final_tokens = raw;
  result.trace = std::move(trace);
  return result;
}

void write_trace(std::ostream& out, const DecodeTrace& trace) {
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& b = trace.steps[i];
    nlohmann::json row{{"iter", i},   {"f_sim", b.f_sim}, {"f_cc", b.f_cc},
                       {"f_lr", b.f_lr}, {"f_rl", b.f_rl},   {"total", b.total}};
    out << row.dump() << '\n';
  }
}

void write_trace(const std::filesystem::path& path, const DecodeTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trace file " + path.string());
  write_trace(out, trace);
}

}  // namespace cnkit::decoder
