#include "cnkit/pipeline.hpp"

#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace cnkit::pipeline {

namespace {

using json = nlohmann::json;

// Reads typed fields out of one config object, collecting problems instead of
// throwing and remembering which keys were consumed.
class Section {
 public:
  Section(const json* obj, std::string name, Validation& v, fs::path base)
      : obj_(obj), name_(std::move(name)), v_(v), base_(std::move(base)) {
    if (obj_ && !obj_->is_object()) {
      v_.errors.push_back(name_ + ": expected an object");
      obj_ = nullptr;
    }
  }

  ~Section() {
    if (!obj_) return;
    for (const auto& [key, _] : obj_->items())
      if (!seen_.count(key)) v_.warnings.push_back("unknown key " + qualified(key) + " ignored");
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!obj_ || !obj_->contains(key)) return nullptr;
    return &(*obj_)[key];
  }

  std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void get(const std::string& key, double& out) {
    if (const json* j = child(key)) {
      if (j->is_number()) out = j->get<double>();
      else type_error(key, "a number");
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* j = child(key)) {
      if (j->is_boolean()) out = j->get<bool>();
      else type_error(key, "a boolean");
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* j = child(key)) {
      if (j->is_string()) out = j->get<std::string>();
      else type_error(key, "a string");
    }
  }
  void get(const std::string& key, fs::path& out) {
    std::string s;
    bool given = false;
    if (const json* j = child(key)) {
      if (j->is_string()) {
        s = j->get<std::string>();
        given = true;
      } else {
        type_error(key, "a path string");
      }
    }
    if (given) out = (s.empty() || base_.empty() || fs::path(s).is_absolute()) ? fs::path(s) : base_ / s;
  }
  template <typename Int>
    requires std::is_integral_v<Int>
  void get(const std::string& key, Int& out) {
    const json* j = child(key);
    if (!j) return;
    if (!j->is_number_integer()) return type_error(key, "an integer");
    if (j->is_number_unsigned()) {
      const auto u = j->get<std::uint64_t>();
      if (u > std::uint64_t(std::numeric_limits<Int>::max())) return range_error(key);
      out = Int(u);
    } else {
      const auto s = j->get<std::int64_t>();
      if constexpr (std::is_unsigned_v<Int>) {
        if (s < 0) return range_error(key);
      } else if (s < std::int64_t(std::numeric_limits<Int>::min()) || s > std::int64_t(std::numeric_limits<Int>::max())) {
        return range_error(key);
      }
      out = Int(s);
    }
  }

 private:
  void type_error(const std::string& key, const char* expected) {
    v_.errors.push_back(qualified(key) + ": expected " + expected);
  }
  void range_error(const std::string& key) { v_.errors.push_back(qualified(key) + ": integer out of range"); }

  const json* obj_;
  std::string name_;
  Validation& v_;
  fs::path base_;
  std::set<std::string> seen_;
};

void read_endpoint(Section& s, ServiceSettings& out) {
  s.get("kind", out.kind);
  s.get("constant", out.constant);
  s.get("url", out.http.url);
  s.get("path", out.http.path);
  long timeout_ms = long(out.http.timeout.count());
  s.get("timeout_ms", timeout_ms);
  out.http.timeout = std::chrono::milliseconds(timeout_ms);
  s.get("token_env", out.http.bearer_env);
}

void read_encoder(Section& s, embed::EncoderConfig& enc, embed::TrainConfig& train) {
  s.get("feature_dim", enc.feature_dim);
  s.get("hidden_dim", enc.hidden_dim);
  s.get("output_dim", enc.output_dim);
  s.get("epochs", train.epochs);
  s.get("learning_rate", train.learning_rate);
  s.get("temperature", train.temperature);
  s.get("batch_size", train.batch_size);
}

void check(std::vector<std::string>& errors, const std::string& section, const std::vector<std::string>& v) {
  for (const auto& e : v) errors.push_back(section + ": " + e);
}

void check_encoder(std::vector<std::string>& errors, const std::string& name, const embed::EncoderConfig& enc,
                   const embed::TrainConfig& train) {
  if (enc.feature_dim < 1 || enc.hidden_dim < 1 || enc.output_dim < 1)
    errors.push_back(name + ": dimensions must be >= 1");
  if (train.epochs < 0) errors.push_back(name + ": epochs must be >= 0");
  if (!(train.learning_rate > 0)) errors.push_back(name + ": learning_rate must be > 0");
  if (!(train.temperature > 0)) errors.push_back(name + ": temperature must be > 0");
  if (train.batch_size < 1) errors.push_back(name + ": batch_size must be >= 1");
}

void check_service(std::vector<std::string>& errors, const std::string& name, const ServiceSettings& s,
                   const std::set<std::string>& kinds, bool offline) {
  if (!kinds.count(s.kind)) {
    std::string list;
    for (const auto& k : kinds) list += (list.empty() ? "" : ", ") + k;
    errors.push_back(name + ".kind: must be one of " + list);
  }
  if (!(s.constant >= 0 && s.constant <= 1)) errors.push_back(name + ".constant: must be in [0, 1]");
  if (s.kind == "http") {
    if (s.http.url.empty()) errors.push_back(name + ".url: required for an http client");
    if (offline) errors.push_back(name + ": http client requested but offline is true");
    if (s.http.timeout.count() <= 0) errors.push_back(name + ".timeout_ms: must be > 0");
  }
}

void check_path(std::vector<std::string>& errors, const char* key, const fs::path& p) {
  std::error_code ec;
  if (!p.empty() && !fs::exists(p, ec)) errors.push_back("paths." + std::string(key) + ": no such file: " + p.string());
}

json endpoint_json(const ServiceSettings& s) {
  return {{"kind", s.kind},
          {"constant", s.constant},
          {"url", s.http.url},
          {"path", s.http.path},
          {"timeout_ms", s.http.timeout.count()},
          {"token_env", s.http.bearer_env}};
}

json encoder_json(const embed::EncoderConfig& enc, const embed::TrainConfig& train) {
  return {{"feature_dim", enc.feature_dim},   {"hidden_dim", enc.hidden_dim},
          {"output_dim", enc.output_dim},     {"epochs", train.epochs},
          {"learning_rate", train.learning_rate}, {"temperature", train.temperature},
          {"batch_size", train.batch_size}};
}

}  // namespace

json PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["workers"] = workers;
  j["offline"] = offline;
  j["drop_dangling"] = drop_dangling;
  j["filter_votes"] = filter_votes;
  j["write_traces"] = write_traces;
  j["paths"] = {{"corpus", paths.corpus.string()},
                {"hs", paths.hs.string()},
                {"stance_data", paths.stance_data.string()},
                {"semantic_data", paths.semantic_data.string()},
                {"classifier_pairs", paths.classifier_pairs.string()},
                {"judge_responses", paths.judge_responses.string()},
                {"work_dir", paths.work_dir.string()},
                {"report", paths.report.string()}};
  j["retrieval"] = {{"k1", retrieval.k1},       {"k2", retrieval.k2},
                    {"k3", retrieval.k3},       {"alpha", retrieval.alpha},
                    {"beta", retrieval.beta},   {"counter_prompt", retrieval.counter_prompt},
                    {"conditional_fit", retrieval.conditional_fit}};
  j["energy"] = {{"lambda_a", energy.lambda_a},
                 {"lambda_b", energy.lambda_b},
                 {"lambda_c_lr", energy.lambda_c_lr},
                 {"lambda_c_rl", energy.lambda_c_rl},
                 {"ngram_n", energy.ngram_n},
                 {"gamma", energy.gamma},
                 {"lm_temperature", energy.lm_temperature},
                 {"normalize_by_length", energy.normalize_by_length},
                 {"detach_lm", energy.detach_lm}};
  j["decoder"] = {{"iterations", decoder.iterations},
                  {"step_size", decoder.step_size},
                  {"max_length", decoder.max_length},
                  {"noise_initial", decoder.noise_initial},
                  {"noise_decay", decoder::to_string(decoder.noise_decay)},
                  {"noise_rate", decoder.noise_rate},
                  {"discretize_temperature", decoder.discretize_temperature},
                  {"discretize_mode", decoder::to_string(decoder.discretize_mode)}};
  const auto& m = models;
  j["lm"] = {{"order", m.lm.order},           {"add_k", m.lm.add_k},
             {"neural_weight", m.lm.neural_weight}, {"embed_dim", m.lm.embed_dim},
             {"hidden_dim", m.lm.hidden_dim}, {"epochs", m.lm.epochs},
             {"learning_rate", m.lm.learning_rate}, {"batch_size", m.lm.batch_size}};
  j["stance"] = encoder_json(m.stance_encoder, m.stance_training);
  j["semantic"] = encoder_json(m.semantic_encoder, m.semantic_training);
  j["classifier"] = {{"feature_dim", m.classifier.feature_dim},
                     {"hidden_dim", m.classifier.hidden_dim},
                     {"rep_dim", m.classifier.rep_dim},
                     {"join_temperature", m.classifier.join_temperature},
                     {"max_join_length", m.classifier.max_join_length},
                     {"epochs", m.classifier_training.epochs},
                     {"learning_rate", m.classifier_training.learning_rate},
                     {"batch_size", m.classifier_training.batch_size}};
  j["judge"] = endpoint_json(judge);
  j["toxicity"] = endpoint_json(toxicity);
  return j;
}

fs::path PipelineConfig::report_path() const { return paths.report.empty() ? paths.work_dir / "report.json" : paths.report; }

Validation validate_config_json(const json& root, const fs::path& base_dir) {
  Validation v;
  try {
    if (root.is_null()) return v;
    if (!root.is_object()) {
      v.errors.push_back("config root must be an object");
      return v;
    }
    auto& c = v.config;
    {
      Section s(&root, "", v, base_dir);
      s.get("seed", c.seed);
      s.get("workers", c.workers);
      s.get("offline", c.offline);
      s.get("drop_dangling", c.drop_dangling);
      s.get("filter_votes", c.filter_votes);
      s.get("write_traces", c.write_traces);
      {
        Section p(s.child("paths"), "paths", v, base_dir);
        p.get("corpus", c.paths.corpus);
        p.get("hs", c.paths.hs);
        p.get("stance_data", c.paths.stance_data);
        p.get("semantic_data", c.paths.semantic_data);
        p.get("classifier_pairs", c.paths.classifier_pairs);
        p.get("judge_responses", c.paths.judge_responses);
        p.get("work_dir", c.paths.work_dir);
        p.get("report", c.paths.report);
      }
      {
        Section r(s.child("retrieval"), "retrieval", v, base_dir);
        r.get("k1", c.retrieval.k1);
        r.get("k2", c.retrieval.k2);
        r.get("k3", c.retrieval.k3);
        r.get("alpha", c.retrieval.alpha);
        r.get("beta", c.retrieval.beta);
        r.get("counter_prompt", c.retrieval.counter_prompt);
        r.get("conditional_fit", c.retrieval.conditional_fit);
      }
      {
        Section e(s.child("energy"), "energy", v, base_dir);
        e.get("lambda_a", c.energy.lambda_a);
        e.get("lambda_b", c.energy.lambda_b);
        e.get("lambda_c_lr", c.energy.lambda_c_lr);
        e.get("lambda_c_rl", c.energy.lambda_c_rl);
        e.get("ngram_n", c.energy.ngram_n);
        e.get("gamma", c.energy.gamma);
        e.get("lm_temperature", c.energy.lm_temperature);
        e.get("normalize_by_length", c.energy.normalize_by_length);
        e.get("detach_lm", c.energy.detach_lm);
      }
      {
        Section d(s.child("decoder"), "decoder", v, base_dir);
        d.get("iterations", c.decoder.iterations);
        d.get("step_size", c.decoder.step_size);
        d.get("max_length", c.decoder.max_length);
        d.get("noise_initial", c.decoder.noise_initial);
        std::string decay = decoder::to_string(c.decoder.noise_decay);
        d.get("noise_decay", decay);
        try {
          c.decoder.noise_decay = decoder::noise_decay_from_string(decay);
        } catch (const Error&) {
          v.errors.push_back("decoder.noise_decay: must be linear, constant or exponential");
        }
        d.get("noise_rate", c.decoder.noise_rate);
        d.get("discretize_temperature", c.decoder.discretize_temperature);
        std::string mode = decoder::to_string(c.decoder.discretize_mode);
        d.get("discretize_mode", mode);
        try {
          c.decoder.discretize_mode = decoder::discretize_mode_from_string(mode);
        } catch (const Error&) {
          v.errors.push_back("decoder.discretize_mode: must be argmax or sample");
        }
      }
      {
        Section l(s.child("lm"), "lm", v, base_dir);
        auto& m = c.models.lm;
        l.get("order", m.order);
        l.get("add_k", m.add_k);
        l.get("neural_weight", m.neural_weight);
        l.get("embed_dim", m.embed_dim);
        l.get("hidden_dim", m.hidden_dim);
        l.get("epochs", m.epochs);
        l.get("learning_rate", m.learning_rate);
        l.get("batch_size", m.batch_size);
      }
      {
        Section st(s.child("stance"), "stance", v, base_dir);
        read_encoder(st, c.models.stance_encoder, c.models.stance_training);
      }
      {
        Section se(s.child("semantic"), "semantic", v, base_dir);
        read_encoder(se, c.models.semantic_encoder, c.models.semantic_training);
      }
      {
        Section k(s.child("classifier"), "classifier", v, base_dir);
        auto& m = c.models.classifier;
        k.get("feature_dim", m.feature_dim);
        k.get("hidden_dim", m.hidden_dim);
        k.get("rep_dim", m.rep_dim);
        k.get("join_temperature", m.join_temperature);
        k.get("max_join_length", m.max_join_length);
        k.get("epochs", c.models.classifier_training.epochs);
        k.get("learning_rate", c.models.classifier_training.learning_rate);
        k.get("batch_size", c.models.classifier_training.batch_size);
      }
      {
        Section jd(s.child("judge"), "judge", v, base_dir);
        read_endpoint(jd, c.judge);
      }
      {
        Section tx(s.child("toxicity"), "toxicity", v, base_dir);
        read_endpoint(tx, c.toxicity);
      }
    }

    // Invariants, all reported together.
    check(v.errors, "retrieval", c.retrieval.violations());
    check(v.errors, "energy", c.energy.violations());
    check(v.errors, "decoder", c.decoder.violations());
    const auto& lmc = c.models.lm;
    if (lmc.order < 1) v.errors.push_back("lm: order must be >= 1");
    if (lmc.add_k < 0) v.errors.push_back("lm: add_k must be >= 0");
    if (!(lmc.neural_weight >= 0 && lmc.neural_weight <= 1)) v.errors.push_back("lm: neural_weight must be in [0, 1]");
    if (lmc.embed_dim < 1 || lmc.hidden_dim < 1) v.errors.push_back("lm: dimensions must be >= 1");
    if (lmc.epochs < 0) v.errors.push_back("lm: epochs must be >= 0");
    if (!(lmc.learning_rate > 0)) v.errors.push_back("lm: learning_rate must be > 0");
    if (lmc.batch_size < 1) v.errors.push_back("lm: batch_size must be >= 1");
    check_encoder(v.errors, "stance", c.models.stance_encoder, c.models.stance_training);
    check_encoder(v.errors, "semantic", c.models.semantic_encoder, c.models.semantic_training);
    const auto& k = c.models.classifier;
    if (k.feature_dim < 1 || k.hidden_dim < 1 || k.rep_dim < 1) v.errors.push_back("classifier: dimensions must be >= 1");
    if (!(k.join_temperature > 0)) v.errors.push_back("classifier: join_temperature must be > 0");
    if (k.max_join_length < c.decoder.max_length + 3)
      v.errors.push_back("classifier: max_join_length must leave room for decoder.max_length + 3");
    if (c.models.classifier_training.epochs < 0) v.errors.push_back("classifier: epochs must be >= 0");
    if (!(c.models.classifier_training.learning_rate > 0)) v.errors.push_back("classifier: learning_rate must be > 0");
    if (c.models.classifier_training.batch_size < 1) v.errors.push_back("classifier: batch_size must be >= 1");
    if (c.workers < 1) v.errors.push_back("workers must be >= 1");
    check_service(v.errors, "judge", c.judge, {"constant", "recorded", "http"}, c.offline);
    check_service(v.errors, "toxicity", c.toxicity, {"none", "constant", "http"}, c.offline);
    if (c.judge.kind == "recorded" && c.paths.judge_responses.empty())
      v.errors.push_back("paths.judge_responses: required for a recorded judge");
    check_path(v.errors, "corpus", c.paths.corpus);
    check_path(v.errors, "hs", c.paths.hs);
    check_path(v.errors, "stance_data", c.paths.stance_data);
    check_path(v.errors, "semantic_data", c.paths.semantic_data);
    check_path(v.errors, "classifier_pairs", c.paths.classifier_pairs);
    check_path(v.errors, "judge_responses", c.paths.judge_responses);
    if (c.paths.work_dir.empty()) v.errors.push_back("paths.work_dir: must be nonempty");
  } catch (const std::exception& e) {
    v.errors.push_back(std::string("unexpected configuration problem: ") + e.what());
  }
  return v;
}

Validation validate_config_text(std::string_view text, const fs::path& base_dir) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) return validate_config_json(json(nullptr), base_dir);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    Validation v;
    v.errors.push_back(std::string("config is not valid JSON: ") + e.what());
    return v;
  }
  return validate_config_json(j, base_dir);
}

Validation validate_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    Validation v;
    v.errors.push_back("cannot read config file " + path.string());
    return v;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return validate_config_text(ss.str(), path.parent_path());
}

std::vector<std::string> missing_inputs(const PipelineConfig& config) {
  std::vector<std::string> errors;
  auto need = [&](const char* key, const fs::path& p) {
    std::error_code ec;
    if (p.empty()) errors.push_back(std::string("paths.") + key + ": required");
    else if (!fs::is_regular_file(p, ec)) errors.push_back(std::string("paths.") + key + ": no such file: " + p.string());
  };
  need("corpus", config.paths.corpus);
  need("hs", config.paths.hs);
  need("stance_data", config.paths.stance_data);
  need("semantic_data", config.paths.semantic_data);
  need("classifier_pairs", config.paths.classifier_pairs);
  if (config.judge.kind == "recorded") need("judge_responses", config.paths.judge_responses);
  return errors;
}

void ModelBundle::save(const fs::path& dir) const {
  fs::create_directories(dir);
  forward->save(dir / "lm_fwd.json");
  backward->save(dir / "lm_bwd.json");
  stance.save(dir / "stance.json");
  semantic.save(dir / "semantic.json");
  classifier.save(dir / "classifier.json");
}

ModelBundle ModelBundle::load(const fs::path& dir) {
  ModelBundle b;
  b.forward = lm::load_model(dir / "lm_fwd.json");
  b.backward = lm::load_model(dir / "lm_bwd.json");
  require(b.forward->vocab() == b.backward->vocab(), "forward and backward models use different vocabularies");
  b.vocab = b.forward->vocab();
  b.stance = embed::Encoder::load(dir / "stance.json");
  b.semantic = embed::Encoder::load(dir / "semantic.json");
  b.classifier = classifier::CNClassifier::load(dir / "classifier.json");
  return b;
}

std::vector<std::vector<std::string>> lm_corpus(const corpus::KnowledgeRepository& repo) {
  // Whole documents, so that sentence-final punctuation is usually followed by
  // another sentence rather than by <eos>.
  std::vector<std::vector<std::string>> out;
  auto add = [&](const std::string& text) {
    auto toks = tokenize(text);
    if (!toks.empty()) out.push_back(std::move(toks));
  };
  for (const auto& p : repo.posts()) add(p.title + " " + p.body);
  for (const auto& c : repo.comments()) add(c.body);
  return out;
}

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>>& corpus,
                            const std::vector<std::string>& extra_texts) {
  auto all = corpus;
  for (const auto& t : extra_texts) all.push_back(tokenize(t));
  return Vocabulary::build(all);
}

ModelBundle train_models(const corpus::KnowledgeRepository& repo, const std::vector<corpus::HateSpeechSample>& hs,
                         const PipelineConfig& config, std::ostream* log) {
  const auto& m = config.models;
  const auto seed = config.seed;
  ModelBundle b;

  std::vector<classifier::LabeledPair> pairs;
  if (!config.paths.classifier_pairs.empty()) pairs = classifier::read_pairs(config.paths.classifier_pairs);

  const auto corpus_tokens = lm_corpus(repo);
  std::vector<std::string> extra{config.retrieval.counter_prompt};
  for (const auto& x : hs) extra.push_back(x.text);
  std::vector<std::vector<std::string>> with_pairs = corpus_tokens;
  for (const auto& p : pairs) {
    with_pairs.push_back(p.hs);
    with_pairs.push_back(p.candidate);
  }
  b.vocab = build_vocabulary(with_pairs, extra);

  std::vector<TokenSeq> seqs;
  for (const auto& toks : corpus_tokens) {
    TokenSeq s;
    for (const auto& t : toks) s.push_back(b.vocab.id(t));
    seqs.push_back(std::move(s));
  }
  b.forward = lm::train_toy_lm(seqs, b.vocab, lm::Direction::forward, m.lm, derive_seed(seed, "lm/fwd"));
  b.backward = lm::train_toy_lm(seqs, b.vocab, lm::Direction::backward, m.lm, derive_seed(seed, "lm/bwd"));
  if (log) *log << "trained language models on " << seqs.size() << " documents, |V| = " << b.vocab.size() << "\n";

  auto stance_cfg = m.stance_encoder;
  stance_cfg.seed = derive_seed(seed, "stance/init");
  b.stance = embed::Encoder(embed::EncoderKind::stance, stance_cfg);
  if (!config.paths.stance_data.empty()) {
    const auto data = embed::read_stance_dataset(config.paths.stance_data);
    const auto pairs_set = embed::build_pairs(data);
    if (!pairs_set.pairs.empty()) {
      auto train = m.stance_training;
      train.seed = derive_seed(seed, "stance/train");
      auto report = embed::train_encoder(pairs_set.pairs, b.stance, train);
      b.stance = std::move(report.encoder);
      if (log)
        *log << "trained stance encoder on " << pairs_set.pairs.size() << " triples (" << pairs_set.skipped_anchors
             << " anchors skipped), margin " << embed::stance_margin(pairs_set.pairs, b.stance) << "\n";
    }
  }

  auto sem_cfg = m.semantic_encoder;
  sem_cfg.seed = derive_seed(seed, "semantic/init");
  b.semantic = embed::Encoder(embed::EncoderKind::semantic, sem_cfg);
  if (!config.paths.semantic_data.empty()) {
    const auto triples = embed::read_triples(config.paths.semantic_data);
    if (!triples.empty()) {
      auto train = m.semantic_training;
      train.seed = derive_seed(seed, "semantic/train");
      auto report = embed::train_encoder(triples, b.semantic, train);
      b.semantic = std::move(report.encoder);
      if (log) *log << "trained semantic encoder on " << triples.size() << " triples\n";
    }
  }

  auto clf_cfg = m.classifier;
  clf_cfg.seed = derive_seed(seed, "classifier/init");
  b.classifier = classifier::CNClassifier(clf_cfg);
  if (!pairs.empty()) {
    auto train = m.classifier_training;
    train.seed = derive_seed(seed, "classifier/train");
    auto report = classifier::train(pairs, b.classifier, train);
    b.classifier = std::move(report.model);
    if (log)
      *log << "trained classifier on " << pairs.size() << " pairs, accuracy "
           << classifier::accuracy(pairs, b.classifier) << "\n";
  }
  return b;
}

std::unique_ptr<eval::JudgeClient> make_judge(const PipelineConfig& config) {
  const auto& j = config.judge;
  if (j.kind == "recorded")
    return std::make_unique<eval::RecordedJudge>(eval::RecordedJudge::load(config.paths.judge_responses));
  if (j.kind == "http") {
    require(!config.offline, "http judge requested in offline mode");
    return std::make_unique<eval::HttpJudge>(j.http);
  }
  return std::make_unique<eval::ConstantJudge>(eval::JudgeScore{j.constant, j.constant});
}

std::unique_ptr<eval::ToxicityClient> make_toxicity(const PipelineConfig& config) {
  const auto& t = config.toxicity;
  if (t.kind == "constant") return std::make_unique<eval::ConstantToxicity>(t.constant);
  if (t.kind == "http") {
    require(!config.offline, "http toxicity client requested in offline mode");
    return std::make_unique<eval::HttpToxicity>(t.http);
  }
  return nullptr;
}

energy::Problem make_problem(const Vocabulary& vocab, std::string_view hs_text, std::string_view knowledge,
                             std::string_view counter_prompt) {
  energy::Problem p;
  p.x = vocab.encode(hs_text);
  p.x_left.push_back(vocab.bos());
  p.x_left.insert(p.x_left.end(), p.x.begin(), p.x.end());
  const auto prompt = vocab.encode(counter_prompt);
  p.x_left.insert(p.x_left.end(), prompt.begin(), prompt.end());
  p.y_star = vocab.encode(knowledge);
  return p;
}

SampleResult run_sample(const corpus::KnowledgeRepository& repo, const corpus::HateSpeechSample& hs,
                        const ModelBundle& models, const PipelineConfig& config, std::uint64_t seed) {
  SampleResult r;
  r.hs = hs;
  try {
    const retrieve::EncoderSource source(models.stance, models.semantic);
    r.knowledge = retrieve::ssf(repo, hs, config.retrieval, source, *models.forward);
    if (r.knowledge.empty()) throw retrieve::NoCounterKnowledge();
    const auto& best = r.knowledge.best();
    const auto problem = make_problem(models.vocab, hs.text, best.text, config.retrieval.counter_prompt);
    const energy::Components comps(*models.forward, *models.backward, models.classifier);
    auto dcfg = config.decoder;
    dcfg.seed = seed;
    auto result = decoder::decode(problem, comps, config.energy, dcfg, best.sentence_id);
    r.cn = result.text;
    r.initial = result.trace.steps.front();
    r.final = result.trace.steps.back();
    r.trace = std::move(result.trace);
    r.ok = true;
  } catch (const decoder::DecodeError& e) {
    r.error = e.what();
    r.trace = e.trace();
  } catch (const Error& e) {
    r.error = e.what();
  }
  return r;
}

namespace {

json knowledge_json(const retrieve::Knowledge& k) {
  return {{"sentence_id", k.sentence_id}, {"post_id", k.post_id}, {"comment_id", k.comment_id},
          {"text", k.text},               {"sta", k.sta},         {"chi", k.chi},
          {"fit", std::isfinite(k.fit) ? json(k.fit) : json("inf")}};
}

json breakdown_json(const energy::EnergyBreakdown& b) {
  return {{"f_sim", b.f_sim}, {"f_cc", b.f_cc}, {"f_lr", b.f_lr}, {"f_rl", b.f_rl}, {"total", b.total}};
}

energy::EnergyBreakdown breakdown_from_json(const json& j) {
  return {j.at("f_sim").get<double>(), j.at("f_cc").get<double>(), j.at("f_lr").get<double>(),
          j.at("f_rl").get<double>(), j.at("total").get<double>()};
}

retrieve::Knowledge knowledge_from_json(const json& j) {
  retrieve::Knowledge k;
  k.sentence_id = j.at("sentence_id").get<std::string>();
  k.post_id = j.at("post_id").get<std::string>();
  k.comment_id = j.at("comment_id").get<std::string>();
  k.text = j.at("text").get<std::string>();
  k.sta = j.at("sta").get<double>();
  k.chi = j.at("chi").get<double>();
  k.fit = j.at("fit").is_number() ? j.at("fit").get<double>() : retrieve::kInfiniteFit;
  return k;
}

}  // namespace

json sample_json(const SampleResult& r) {
  json row{{"id", r.hs.id}, {"target", r.hs.target}, {"hs", r.hs.text}, {"status", r.ok ? "ok" : "error"}};
  if (!r.ok) {
    row["error"] = r.error;
    return row;
  }
  json ranked = json::array();
  for (const auto& k : r.knowledge.ranked) ranked.push_back(knowledge_json(k));
  row["knowledge"] = ranked;
  row["cn"] = r.cn;
  row["energy_initial"] = breakdown_json(r.initial);
  row["energy_final"] = breakdown_json(r.final);
  return row;
}

SampleResult sample_from_json(const json& j) {
  SampleResult r;
  r.hs = {j.at("id").get<std::string>(), j.at("hs").get<std::string>(), j.value("target", std::string())};
  r.ok = j.value("status", std::string("error")) == "ok";
  if (!r.ok) {
    r.error = j.value("error", std::string("unknown error"));
    return r;
  }
  for (const auto& k : j.at("knowledge")) r.knowledge.ranked.push_back(knowledge_from_json(k));
  r.cn = j.at("cn").get<std::string>();
  r.initial = breakdown_from_json(j.at("energy_initial"));
  r.final = breakdown_from_json(j.at("energy_final"));
  return r;
}

json evaluate(const std::vector<SampleResult>& samples, const ModelBundle& models,
              const corpus::KnowledgeRepository& repo, eval::JudgeClient& judge, eval::ToxicityClient* toxicity) {
  std::vector<std::string> pool;
  std::vector<eval::Pair> pairs;
  for (const auto& s : samples)
    if (s.ok) {
      pool.push_back(s.cn);
      pairs.push_back({s.hs.text, s.cn});
    }
  const eval::Bm25Stats stats(pool);
  std::vector<std::string> training;
  for (const auto& s : repo.sentences()) training.push_back(s.text);

  eval::MetricReport report;
  json rows = json::array();
  double tox_sum = 0.0;
  std::size_t tox_n = 0;
  for (const auto& s : samples) {
    json row{{"id", s.hs.id}, {"target", s.hs.target}, {"hs", s.hs.text}, {"status", s.ok ? "ok" : "error"}};
    if (!s.ok) {
      row["error"] = s.error;
      rows.push_back(std::move(row));
      continue;
    }
    const auto& k = s.knowledge.best();
    row["knowledge"] = knowledge_json(k);
    json alternates = json::array();
    for (std::size_t i = 1; i < s.knowledge.ranked.size(); ++i) alternates.push_back(s.knowledge.ranked[i].sentence_id);
    row["alternates"] = alternates;
    row["cn"] = s.cn;
    row["energy_initial"] = breakdown_json(s.initial);
    row["energy_final"] = breakdown_json(s.final);
    const double p_counter = models.classifier.counter_probability(s.hs.text, s.cn);
    row["counter_probability"] = p_counter;
    row["countering"] = models.classifier.predict(s.hs.text, s.cn) == classifier::kCounter;
    const double rel = eval::bm25_relevance(s.cn, s.hs.text, stats);
    const double nov = eval::novelty(s.cn, training);
    double ret_ngram = 0.0, ret_sem = 0.0;
    if (!eval::words(s.cn).empty()) {
      ret_ngram = eval::ngram_retention(s.cn, k.text, 2);
      ret_sem = embed::cosine(models.semantic.encode(s.cn), models.semantic.encode(k.text));
    }
    row["relevance"] = rel;
    row["novelty"] = nov;
    row["retention_ngram"] = ret_ngram;
    row["retention_semantic"] = ret_sem;
    report.relevance += rel;
    report.novelty += nov;
    report.retention_ngram += ret_ngram;
    report.retention_semantic += ret_sem;
    if (toxicity) {
      try {
        const double t = toxicity->score(s.cn);
        row["toxicity"] = t;
        tox_sum += t;
        ++tox_n;
      } catch (const eval::ServiceTimeout& e) {
        row["toxicity_error"] = e.what();
      }
    }
    rows.push_back(std::move(row));
  }
  report.samples = pairs.size();
  if (!pairs.empty()) {
    const double n = double(pairs.size());
    report.relevance /= n;
    report.novelty /= n;
    report.retention_ngram /= n;
    report.retention_semantic /= n;
    report.sroc = eval::sroc(pairs, models.classifier);
    const auto valid = eval::valid_score(pairs, models.classifier, judge);
    report.per_valid = valid.per_valid;
    report.inf_valid = valid.inf_valid;
    report.judge_skipped = valid.skipped;
  }
  if (tox_n) report.toxicity = tox_sum / double(tox_n);

  json out;
  out["format"] = "cnkit-report";
  out["samples"] = rows;
  out["metrics"] = report.to_json();
  out["errors"] = samples.size() - pairs.size();
  return out;
}

RunSummary run_pipeline(const PipelineConfig& config, std::ostream* log) {
  RunSummary summary;
  summary.errors = missing_inputs(config);
  if (!summary.errors.empty()) {
    summary.exit_code = 1;
    return summary;
  }
  try {
    const auto& wd = config.paths.work_dir;
    fs::create_directories(wd);
    auto ingested = corpus::ingest_file(config.paths.corpus, {config.drop_dangling});
    if (log && !ingested.dangling.empty())
      *log << "dropped " << ingested.dangling.size() << " comments with unknown posts\n";
    const auto repo = config.filter_votes ? corpus::filter_comments(ingested.repo) : ingested.repo;
    corpus::save(repo, wd / "repo");
    if (log)
      *log << "repository: " << repo.posts().size() << " posts, " << repo.comments().size() << " comments, "
           << repo.sentences().size() << " sentences\n";
    const auto hs = corpus::read_hate_speech_file(config.paths.hs);

    json report;
    if (hs.empty()) {
      report = {{"format", "cnkit-report"},
                {"samples", json::array()},
                {"metrics", eval::MetricReport{}.to_json()},
                {"errors", 0}};
    } else {
      const auto models = train_models(repo, hs, config, log);
      models.save(wd / "models");
      const auto results = parallel_map(hs.size(), config.workers, [&](std::size_t i) {
        return run_sample(repo, hs[i], models, config, derive_seed(config.seed, "decode/" + std::to_string(i)));
      });
      if (config.write_traces) {
        fs::create_directories(wd / "traces");
        for (std::size_t i = 0; i < results.size(); ++i)
          if (!results[i].trace.steps.empty())
            decoder::write_trace(wd / "traces" / (std::to_string(i) + "-" + results[i].hs.id + ".jsonl"),
                                 results[i].trace);
      }
      auto judge = make_judge(config);
      auto tox = make_toxicity(config);
      report = evaluate(results, models, repo, *judge, tox.get());
      if (log)
        for (const auto& r : results)
          *log << r.hs.id << ": " << (r.ok ? r.cn : "error: " + r.error) << "\n";
    }
    json cfg = config.to_json();
    // Keep the report independent of where and how parallel the run was.
    cfg.erase("paths");
    cfg.erase("workers");
    report["seed"] = config.seed;
    report["config"] = cfg;
    const auto path = config.report_path();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write report " + path.string());
    out << report.dump(2) << "\n";
    summary.report = std::move(report);
  } catch (const std::exception& e) {
    summary.exit_code = 2;
    summary.errors.push_back(e.what());
  }
  return summary;
}

}  // namespace cnkit::pipeline
