#include "cnkit/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include <httplib.h>

#include "cnkit/text.hpp"

namespace cnkit::eval {

namespace {

bool is_word(const std::string& tok) {
  return std::any_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isalnum(c) || c >= 0x80; });
}

std::set<std::string> word_set(std::string_view text) {
  const auto w = words(text);
  return {w.begin(), w.end()};
}

std::set<std::vector<std::string>> ngrams(const std::vector<std::string>& toks, int n) {
  std::set<std::vector<std::string>> out;
  for (std::size_t i = 0; i + std::size_t(n) <= toks.size(); ++i)
    out.emplace(toks.begin() + long(i), toks.begin() + long(i) + n);
  return out;
}

}  // namespace

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  for (auto& tok : tokenize(text))
    if (is_word(tok) && tok != "[CLS]" && tok != "[SEP]") out.push_back(std::move(tok));
  return out;
}

Bm25Stats::Bm25Stats(const std::vector<std::string>& documents) : n_docs_(documents.size()) {
  std::size_t total = 0;
  for (const auto& d : documents) {
    const auto w = words(d);
    total += w.size();
    for (const auto& term : std::set<std::string>(w.begin(), w.end())) ++df_[term];
  }
  avg_len_ = n_docs_ ? double(total) / double(n_docs_) : 0.0;
}

std::size_t Bm25Stats::document_frequency(const std::string& term) const {
  const auto it = df_.find(term);
  return it == df_.end() ? 0 : it->second;
}

double Bm25Stats::idf(const std::string& term) const {
  const double n = double(document_frequency(term));
  return std::log((double(n_docs_) - n + 0.5) / (n + 0.5) + 1.0);
}

double bm25_relevance(std::string_view cn, std::string_view hs, const Bm25Stats& stats, const Bm25Params& params) {
  const auto doc = words(cn);
  const auto query = word_set(hs);
  if (doc.empty() || query.empty()) return 0.0;
  std::map<std::string, std::size_t> tf;
  for (const auto& w : doc) ++tf[w];
  const double avg = stats.average_length() > 0 ? stats.average_length() : double(doc.size());
  const double norm = params.k1 * (1.0 - params.b + params.b * double(doc.size()) / avg);
  double score = 0.0;
  for (const auto& q : query) {
    const auto it = tf.find(q);
    if (it == tf.end()) continue;
    const double f = double(it->second);
    score += stats.idf(q) * f * (params.k1 + 1.0) / (f + norm);
  }
  return score;
}

double sroc(const std::vector<Pair>& pairs, const classifier::CNClassifier& clf) {
  require(!pairs.empty(), "sroc of an empty pair list");
  std::size_t counter = 0;
  for (const auto& p : pairs)
    if (clf.predict(p.hs, p.cn) == classifier::kCounter) ++counter;
  return double(counter) / double(pairs.size());
}

double jaccard(std::string_view a, std::string_view b) {
  const auto sa = word_set(a), sb = word_set(b);
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& w : sa) common += sb.count(w);
  return double(common) / double(sa.size() + sb.size() - common);
}

double novelty(std::string_view cn, const std::vector<std::string>& corpus) {
  require(!corpus.empty(), "novelty against an empty corpus");
  double best = 0.0;
  for (const auto& s : corpus) best = std::max(best, jaccard(cn, s));
  return 1.0 - best;
}

double ngram_retention(std::string_view cn, std::string_view y_star, int n) {
  require(n >= 1, "n-gram order must be >= 1");
  const auto ref = ngrams(tokenize(y_star), n);
  if (ref.empty()) throw PreconditionError("counter-knowledge shorter than the n-gram order");
  const auto got = ngrams(tokenize(cn), n);
  std::size_t kept = 0;
  for (const auto& g : ref) kept += got.count(g);
  return double(kept) / double(ref.size());
}

Retention retention(std::string_view cn, std::string_view y_star, const embed::Encoder& semantic, int n) {
  require(!cn.empty() && !y_star.empty(), "retention needs nonempty texts");
  return {ngram_retention(cn, y_star, n), embed::cosine(semantic.encode(cn), semantic.encode(y_star))};
}

RecordedJudge RecordedJudge::load(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) throw Error("cannot open recorded judge responses " + jsonl.string());
  std::map<std::string, JudgeScore> responses;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      responses[j.at("text").get<std::string>()] = {j.at("persuasiveness").get<double>(),
                                                    j.at("informativeness").get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw Error(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return RecordedJudge(std::move(responses));
}

JudgeScore RecordedJudge::score(const std::string& text) {
  const auto it = responses_.find(text);
  if (it == responses_.end()) throw ServiceTimeout("no recorded judge response");
  return it->second;
}

namespace {

nlohmann::json post_json(const HttpEndpoint& ep, const std::string& text) {
  httplib::Client client(ep.url);
  const auto secs = ep.timeout.count() / 1000;
  const auto usecs = (ep.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!ep.bearer_env.empty())
    if (const char* token = std::getenv(ep.bearer_env.c_str())) headers.emplace("Authorization", std::string("Bearer ") + token);
  const auto res = client.Post(ep.path, headers, nlohmann::json{{"text", text}}.dump(), "application/json");
  if (!res) throw ServiceTimeout("request to " + ep.url + ep.path + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw ServiceTimeout("service returned HTTP " + std::to_string(res->status));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw ServiceTimeout(std::string("malformed service response: ") + e.what());
  }
}

double unit_value(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) throw ServiceTimeout(std::string("response lacks '") + key + "'");
  const double v = j[key].get<double>();
  if (!(v >= 0.0 && v <= 1.0)) throw ServiceTimeout(std::string("'") + key + "' outside [0, 1]");
  return v;
}

}  // namespace

JudgeScore HttpJudge::score(const std::string& text) {
  const auto j = post_json(endpoint_, text);
  return {unit_value(j, "persuasiveness"), unit_value(j, "informativeness")};
}

double HttpToxicity::score(const std::string& text) { return unit_value(post_json(endpoint_, text), "toxicity"); }

ValidScore valid_score(const std::vector<Pair>& pairs, const classifier::CNClassifier& clf, JudgeClient& judge) {
  ValidScore out;
  double per = 0.0, inf = 0.0;
  for (const auto& p : pairs) {
    JudgeScore s;
    try {
      s = judge.score(p.cn);
    } catch (const ServiceTimeout& e) {
      ++out.skipped;
      out.errors.push_back(e.what());
      continue;
    }
    const double r = clf.predict(p.hs, p.cn) == classifier::kCounter ? 1.0 : 0.0;
    per += r * s.persuasiveness;
    inf += r * s.informativeness;
    ++out.scored;
  }
  if (out.scored) {
    out.per_valid = per / double(out.scored);
    out.inf_valid = inf / double(out.scored);
  }
  return out;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"relevance", relevance},
                   {"sroc", sroc},
                   {"novelty", novelty},
                   {"retention_ngram", retention_ngram},
                   {"retention_semantic", retention_semantic},
                   {"per_valid", per_valid},
                   {"inf_valid", inf_valid},
                   {"samples", samples},
                   {"judge_skipped", judge_skipped}};
  j["toxicity"] = toxicity ? nlohmann::json(*toxicity) : nlohmann::json(nullptr);
  return j;
}

}  // namespace cnkit::eval
