#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "cnkit/common.hpp"
#include "cnkit/energy.hpp"
#include "cnkit/lm.hpp"

namespace cnkit::decoder {

enum class NoiseDecay { linear, constant, exponential };
enum class DiscretizeMode { argmax, sample };

const char* to_string(NoiseDecay d);
NoiseDecay noise_decay_from_string(std::string_view s);
const char* to_string(DiscretizeMode m);
DiscretizeMode discretize_mode_from_string(std::string_view s);

struct DecoderConfig {
  int iterations = 2000;
  double step_size = 0.1;
  std::size_t max_length = 30;
  double noise_initial = 1.0;
  NoiseDecay noise_decay = NoiseDecay::linear;
  double noise_rate = 0.999;  // per-iteration factor for exponential decay
  double discretize_temperature = 1.0;
  DiscretizeMode discretize_mode = DiscretizeMode::argmax;
  std::uint64_t seed = 0;

  std::vector<std::string> violations() const;
  void validate() const;

  /// Noise standard deviation at iteration n (0-based).
  double noise_at(int n) const;
};

/// First min(|y*|, max_length) rows are logits_of(y*), the rest the forward
/// model's greedy continuation.
lm::SoftSequence init_from_knowledge(const TokenSeq& y_star, const lm::LanguageModel& forward,
                                     std::size_t max_length);

/// y - step * grad + N(0, sigma^2) elementwise.
lm::SoftSequence langevin_step(const lm::SoftSequence& y, const Matrix& grad, double step_size, double sigma,
                               std::mt19937_64& rng);

/// Per-position argmax, or a sample from softmax(y / temperature).
TokenSeq discretize(const lm::SoftSequence& y, const DecoderConfig& config, std::mt19937_64& rng);

/// Cuts at the first <eos>.
TokenSeq truncate_at_eos(const TokenSeq& tokens, const Vocabulary& vocab);

struct DecodeTrace {
  std::vector<energy::EnergyBreakdown> steps;  // energy of the iterate before each update, then the final one
  lm::SoftSequence final_soft;
  TokenSeq final_tokens;
  std::string provenance;  // id of the counter-knowledge sentence
};

struct DecodeResult {
  std::string text;
  TokenSeq tokens;
  DecodeTrace trace;
};

/// Thrown when a step fails; carries the trace up to the failure.
class DecodeError : public Error {
 public:
  DecodeError(const std::string& message, DecodeTrace partial) : Error(message), trace_(std::move(partial)) {}
  const DecodeTrace& trace() const { return trace_; }

 private:
  DecodeTrace trace_;
};

DecodeResult decode(const energy::Problem& problem, const energy::Components& comps,
                    const energy::EnergyConfig& energy_config, const DecoderConfig& config,
                    const std::string& provenance = {});

/// One "iter f_sim f_cc f_lr f_rl total" JSON object per line.
void write_trace(std::ostream& out, const DecodeTrace& trace);
void write_trace(const std::filesystem::path& path, const DecodeTrace& trace);

}  // namespace cnkit::decoder
