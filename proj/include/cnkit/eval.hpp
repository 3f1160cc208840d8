#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cnkit/classifier.hpp"
#include "cnkit/common.hpp"
#include "cnkit/embed.hpp"

namespace cnkit::eval {

/// Lowercased word tokens; punctuation dropped.
std::vector<std::string> words(std::string_view text);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Document frequencies and average length over an evaluation pool.
class Bm25Stats {
 public:
  Bm25Stats() = default;
  explicit Bm25Stats(const std::vector<std::string>& documents);

  std::size_t documents() const { return n_docs_; }
  double average_length() const { return avg_len_; }
  std::size_t document_frequency(const std::string& term) const;
  /// log((N - n + 0.5) / (n + 0.5) + 1)
  double idf(const std::string& term) const;

 private:
  std::size_t n_docs_ = 0;
  double avg_len_ = 0.0;
  std::map<std::string, std::size_t> df_;
};

/// BM25 of `cn` as the document against the distinct terms of `hs` as the query.
double bm25_relevance(std::string_view cn, std::string_view hs, const Bm25Stats& stats, const Bm25Params& params = {});

struct Pair {
  std::string hs;
  std::string cn;
};

/// Fraction of pairs the classifier labels as countering.
double sroc(const std::vector<Pair>& pairs, const classifier::CNClassifier& clf);

/// Jaccard similarity of lowercased word sets.
double jaccard(std::string_view a, std::string_view b);

/// 1 - max similarity to any corpus sentence.
double novelty(std::string_view cn, const std::vector<std::string>& corpus);

struct Retention {
  double ngram_rate = 0.0;
  double semantic = 0.0;
};

/// Fraction of the distinct n-grams of y* found in cn; semantic cosine of
/// the two texts under `semantic`.
double ngram_retention(std::string_view cn, std::string_view y_star, int n = 2);
Retention retention(std::string_view cn, std::string_view y_star, const embed::Encoder& semantic, int n = 2);

struct JudgeScore {
  double persuasiveness = 0.0;
  double informativeness = 0.0;
};

class ServiceTimeout : public Error {
 public:
  using Error::Error;
};

/// Request {"text"}; response {"persuasiveness", "informativeness"} in [0, 1].
class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual JudgeScore score(const std::string& text) = 0;
};

class ConstantJudge final : public JudgeClient {
 public:
  explicit ConstantJudge(JudgeScore value) : value_(value) {}
  JudgeScore score(const std::string&) override { return value_; }

 private:
  JudgeScore value_;
};

/// Replays recorded responses keyed by text. Unknown text is treated as a
/// timeout so it is skipped and counted.
class RecordedJudge final : public JudgeClient {
 public:
  explicit RecordedJudge(std::map<std::string, JudgeScore> responses) : responses_(std::move(responses)) {}
  static RecordedJudge load(const std::filesystem::path& jsonl);
  JudgeScore score(const std::string& text) override;

 private:
  std::map<std::string, JudgeScore> responses_;
};

struct HttpEndpoint {
  std::string url;  // scheme://host[:port]
  std::string path = "/score";
  std::chrono::milliseconds timeout{5000};
  std::string bearer_env;  // environment variable holding a token, if any
};

class HttpJudge final : public JudgeClient {
 public:
  explicit HttpJudge(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  JudgeScore score(const std::string& text) override;

 private:
  HttpEndpoint endpoint_;
};

/// Request {"text"}; response {"toxicity"} in [0, 1].
class ToxicityClient {
 public:
  virtual ~ToxicityClient() = default;
  virtual double score(const std::string& text) = 0;
};

class ConstantToxicity final : public ToxicityClient {
 public:
  explicit ConstantToxicity(double value) : value_(value) {}
  double score(const std::string&) override { return value_; }

 private:
  double value_;
};

class HttpToxicity final : public ToxicityClient {
 public:
  explicit HttpToxicity(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  double score(const std::string& text) override;

 private:
  HttpEndpoint endpoint_;
};

struct ValidScore {
  double per_valid = 0.0;
  double inf_valid = 0.0;
  std::size_t scored = 0;
  std::size_t skipped = 0;
  std::vector<std::string> errors;  // one message per skipped sample
};

/// Mean over samples of r_i * judge score, r_i the classifier's 0/1 label.
/// Samples whose judge call times out are skipped and counted.
ValidScore valid_score(const std::vector<Pair>& pairs, const classifier::CNClassifier& clf, JudgeClient& judge);

struct MetricReport {
  double relevance = 0.0;
  double sroc = 0.0;
  double novelty = 0.0;
  double retention_ngram = 0.0;
  double retention_semantic = 0.0;
  double per_valid = 0.0;
  double inf_valid = 0.0;
  std::optional<double> toxicity;
  std::size_t samples = 0;
  std::size_t judge_skipped = 0;

  nlohmann::json to_json() const;
};

}  // namespace cnkit::eval
