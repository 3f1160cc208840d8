#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnkit/classifier.hpp"
#include "cnkit/corpus.hpp"
#include "cnkit/decoder.hpp"
#include "cnkit/embed.hpp"
#include "cnkit/energy.hpp"
#include "cnkit/eval.hpp"
#include "cnkit/lm.hpp"
#include "cnkit/retrieve.hpp"

namespace cnkit::pipeline {

namespace fs = std::filesystem;

struct Paths {
  fs::path corpus;            // line-delimited post/comment records
  fs::path hs;                // hate speech samples
  fs::path stance_data;       // labeled stance statements
  fs::path semantic_data;     // semantic triples
  fs::path classifier_pairs;  // labeled <hs, cn> pairs
  fs::path judge_responses;   // recorded judge responses (judge.kind = "recorded")
  fs::path work_dir = "cnkit-out";
  fs::path report;            // defaults to <work_dir>/report.json
};

struct ModelSettings {
  lm::ToyLMConfig lm;
  embed::EncoderConfig stance_encoder;
  embed::TrainConfig stance_training;
  embed::EncoderConfig semantic_encoder;
  embed::TrainConfig semantic_training;
  classifier::ClassifierConfig classifier;
  classifier::TrainConfig classifier_training;
};

struct ServiceSettings {
  std::string kind;       // judge: constant|recorded|http; toxicity: none|constant|http
  double constant = 0.5;  // value returned by the constant stub
  eval::HttpEndpoint http;
};

struct PipelineConfig {
  Paths paths;
  retrieve::RetrievalConfig retrieval;
  energy::EnergyConfig energy;
  decoder::DecoderConfig decoder;
  ModelSettings models;
  ServiceSettings judge{"constant", 0.5, {}};
  ServiceSettings toxicity{"none", 0.0, {}};
  std::uint64_t seed = 2024;
  std::size_t workers = 1;
  bool offline = true;         // refuse HTTP services
  bool drop_dangling = false;  // drop comments with unknown post ids at ingest
  bool filter_votes = true;
  bool write_traces = true;

  nlohmann::json to_json() const;
  fs::path report_path() const;
};

struct Validation {
  PipelineConfig config;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

/// Never throws: malformed input and every invariant violation end up in
/// `errors`, unknown keys in `warnings`. Relative paths resolve against `base_dir`.
Validation validate_config_json(const nlohmann::json& j, const fs::path& base_dir = {});
Validation validate_config_text(std::string_view text, const fs::path& base_dir = {});
Validation validate_config(const fs::path& path);

/// Paths the full pipeline needs, as errors for those unset or missing.
std::vector<std::string> missing_inputs(const PipelineConfig& config);

/// Every model the retrieval and decoding stages consume.
struct ModelBundle {
  Vocabulary vocab;
  std::unique_ptr<lm::LanguageModel> forward;
  std::unique_ptr<lm::LanguageModel> backward;
  embed::Encoder stance;
  embed::Encoder semantic;
  classifier::CNClassifier classifier;

  void save(const fs::path& dir) const;
  static ModelBundle load(const fs::path& dir);
};

/// Post (title + body) and comment texts, tokenized; the LM training corpus.
std::vector<std::vector<std::string>> lm_corpus(const corpus::KnowledgeRepository& repo);

/// Closed vocabulary over the LM corpus plus any extra texts.
Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& corpus,
                            const std::vector<std::string>& extra_texts);

ModelBundle train_models(const corpus::KnowledgeRepository& repo, const std::vector<corpus::HateSpeechSample>& hs,
                         const PipelineConfig& config, std::ostream* log = nullptr);

std::unique_ptr<eval::JudgeClient> make_judge(const PipelineConfig& config);
std::unique_ptr<eval::ToxicityClient> make_toxicity(const PipelineConfig& config);

energy::Problem make_problem(const Vocabulary& vocab, std::string_view hs_text, std::string_view knowledge,
                             std::string_view counter_prompt);

struct SampleResult {
  corpus::HateSpeechSample hs;
  bool ok = false;
  std::string error;
  retrieve::CounterKnowledge knowledge;
  std::string cn;
  energy::EnergyBreakdown initial, final;
  decoder::DecodeTrace trace;
};

/// Retrieval and decoding for one sample; errors become an error row.
SampleResult run_sample(const corpus::KnowledgeRepository& repo, const corpus::HateSpeechSample& hs,
                        const ModelBundle& models, const PipelineConfig& config, std::uint64_t seed);

/// Generation output row (no metrics) and its inverse, for generate -> evaluate.
nlohmann::json sample_json(const SampleResult& r);
SampleResult sample_from_json(const nlohmann::json& j);

/// Runs `count` jobs on at most `workers` threads; results stay in input order.
template <typename Job>
auto parallel_map(std::size_t count, std::size_t workers, Job job) -> std::vector<decltype(job(std::size_t{}))>;

/// Metrics over finished samples; returns the report JSON (per-sample rows + aggregate).
nlohmann::json evaluate(const std::vector<SampleResult>& samples, const ModelBundle& models,
                        const corpus::KnowledgeRepository& repo, eval::JudgeClient& judge,
                        eval::ToxicityClient* toxicity);

struct RunSummary {
  int exit_code = 0;
  std::vector<std::string> errors;
  nlohmann::json report;
};

/// ingest -> train -> retrieve -> decode -> evaluate. Writes the repository,
/// models, traces and report under the configured work directory.
RunSummary run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr);

}  // namespace cnkit::pipeline

#include "cnkit/detail/parallel.hpp"
