// Command-line front end. Exit codes: 0 success, 1 validation error, 2 runtime error.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "cnkit/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cnkit;

namespace {

struct ValidationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
void override_with(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

// Pipeline configuration from an optional file, with CLI flags layered on top.
struct ConfigOptions {
  std::string file;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, k1, k2, k3, max_len;
  std::optional<double> alpha, beta, step, noise;
  std::optional<int> iters;
  std::optional<std::string> work_dir, report;
  bool conditional_fit = false;

  void add_retrieval(CLI::App* app) {
    app->add_option("--k1", k1, "posts kept by stance");
    app->add_option("--k2", k2, "comments kept by chi");
    app->add_option("--k3", k3, "sentences kept by fitness");
    app->add_option("--alpha", alpha, "semantic weight");
    app->add_option("--beta", beta, "stance weight");
    app->add_flag("--conditional-fit", conditional_fit, "score only the sentence in FIT");
  }
  void add_decoder(CLI::App* app) {
    app->add_option("--iters", iters, "Langevin iterations");
    app->add_option("--step", step, "step size");
    app->add_option("--max-len", max_len, "soft sequence length");
    app->add_option("--noise", noise, "initial noise scale");
    app->add_option("--seed", seed, "master seed");
  }

  pipeline::PipelineConfig resolve() const {
    pipeline::Validation v = file.empty() ? pipeline::validate_config_json(json(nullptr)) : pipeline::validate_config(file);
    for (const auto& w : v.warnings) std::cerr << "warning: " << w << "\n";
    auto& c = v.config;
    override_with(seed, c.seed);
    override_with(workers, c.workers);
    override_with(k1, c.retrieval.k1);
    override_with(k2, c.retrieval.k2);
    override_with(k3, c.retrieval.k3);
    override_with(alpha, c.retrieval.alpha);
    override_with(beta, c.retrieval.beta);
    if (conditional_fit) c.retrieval.conditional_fit = true;
    override_with(iters, c.decoder.iterations);
    override_with(step, c.decoder.step_size);
    override_with(max_len, c.decoder.max_length);
    override_with(noise, c.decoder.noise_initial);
    if (work_dir) c.paths.work_dir = *work_dir;
    if (report) c.paths.report = *report;
    // Re-validate so that overridden values obey the same invariants.
    auto again = pipeline::validate_config_json(c.to_json());
    again.errors.insert(again.errors.begin(), v.errors.begin(), v.errors.end());
    if (!again.errors.empty()) {
      std::string msg = "invalid configuration:";
      for (const auto& e : again.errors) msg += "\n  " + e;
      throw ValidationFailure(msg);
    }
    return c;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented counter-narrative generation toolkit"};
  app.require_subcommand(1);
  std::function<int()> action;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "ingest post/comment records into a repository directory");
  std::string corpus_file, repo_dir;
  bool drop_dangling = false, no_filter = false;
  ingest->add_option("--corpus", corpus_file, "line-delimited records")->required();
  ingest->add_option("--out", repo_dir, "repository directory")->required();
  ingest->add_flag("--drop-dangling", drop_dangling, "drop comments whose post is unknown");
  ingest->add_flag("--no-filter", no_filter, "keep down-voted comments");
  ingest->callback([&] {
    action = [&] {
      auto r = corpus::ingest_file(corpus_file, {drop_dangling});
      const auto repo = no_filter ? r.repo : corpus::filter_comments(r.repo);
      corpus::save(repo, repo_dir);
      std::cout << json{{"posts", repo.posts().size()},
                        {"comments", repo.comments().size()},
                        {"sentences", repo.sentences().size()},
                        {"dropped_dangling", r.dangling.size()},
                        {"filtered", r.repo.comments().size() - repo.comments().size()}}
                       .dump()
                << "\n";
      return 0;
    };
  });

  // train-stance
  auto* tstance = app.add_subcommand("train-stance", "train a stance (or semantic) encoder contrastively");
  std::string data_file, out_file, kind = "stance";
  std::optional<int> epochs;
  std::optional<double> lr, temperature;
  std::uint64_t seed = 2024;
  tstance->add_option("--data", data_file, "stance statements (or triples for --kind semantic)")->required();
  tstance->add_option("--out", out_file, "model file")->required();
  tstance->add_option("--kind", kind, "stance or semantic")->check(CLI::IsMember({"stance", "semantic"}));
  tstance->add_option("--epochs", epochs);
  tstance->add_option("--lr", lr);
  tstance->add_option("--temperature", temperature);
  tstance->add_option("--seed", seed, "master seed");
  tstance->callback([&] {
    action = [&] {
      const bool is_stance = kind == "stance";
      pipeline::PipelineConfig c;
      auto enc_cfg = is_stance ? c.models.stance_encoder : c.models.semantic_encoder;
      auto train = is_stance ? c.models.stance_training : c.models.semantic_training;
      enc_cfg.seed = derive_seed(seed, is_stance ? "stance/init" : "semantic/init");
      train.seed = derive_seed(seed, is_stance ? "stance/train" : "semantic/train");
      override_with(epochs, train.epochs);
      override_with(lr, train.learning_rate);
      override_with(temperature, train.temperature);
      std::vector<embed::TriplePair> pairs;
      std::size_t skipped = 0;
      if (is_stance) {
        const auto set = embed::build_pairs(embed::read_stance_dataset(data_file));
        pairs = set.pairs;
        skipped = set.skipped_anchors;
      } else {
        pairs = embed::read_triples(data_file);
      }
      if (pairs.empty()) throw ValidationFailure("no training triples in " + data_file);
      embed::Encoder enc(is_stance ? embed::EncoderKind::stance : embed::EncoderKind::semantic, enc_cfg);
      const double before = embed::stance_margin(pairs, enc);
      auto report = embed::train_encoder(pairs, enc, train);
      report.encoder.save(out_file);
      std::cout << json{{"triples", pairs.size()},
                        {"skipped_anchors", skipped},
                        {"epoch_loss", report.epoch_loss},
                        {"diverged", report.diverged},
                        {"margin_before", before},
                        {"margin_after", embed::stance_margin(pairs, report.encoder)}}
                       .dump()
                << "\n";
      return report.diverged ? 2 : 0;
    };
  });

  // embed-export
  auto* eexport = app.add_subcommand("embed-export", "write an embedding file for {id, text, target?} records");
  std::string model_file, input_file;
  eexport->add_option("--model", model_file, "encoder file")->required();
  eexport->add_option("--input", input_file, "line-delimited {id, text, target}")->required();
  eexport->add_option("--out", out_file, "embedding file")->required();
  eexport->callback([&] {
    action = [&] {
      const auto enc = embed::Encoder::load(model_file);
      embed::EmbeddingTable table(enc.dim());
      for (const auto& row : read_jsonl(input_file))
        table.set(row.at("id").get<std::string>(),
                  enc.encode(row.at("text").get<std::string>(), row.value("target", std::string())));
      table.save(out_file);
      return 0;
    };
  });

  // train-lm
  auto* tlm = app.add_subcommand("train-lm", "train a toy language model on a repository");
  std::string direction = "fwd", hs_file, pairs_file;
  std::optional<int> order;
  tlm->add_option("--repo", repo_dir, "repository directory")->required();
  tlm->add_option("--direction", direction, "fwd or bwd")->check(CLI::IsMember({"fwd", "bwd"}));
  tlm->add_option("--out", out_file, "model file")->required();
  tlm->add_option("--hs", hs_file, "hate speech file (adds its words to the vocabulary)");
  tlm->add_option("--pairs", pairs_file, "classifier pairs (adds their words to the vocabulary)");
  tlm->add_option("--order", order, "n-gram order");
  tlm->add_option("--epochs", epochs);
  tlm->add_option("--seed", seed, "master seed");
  tlm->callback([&] {
    action = [&] {
      pipeline::PipelineConfig c;
      c.seed = seed;
      override_with(order, c.models.lm.order);
      override_with(epochs, c.models.lm.epochs);
      const auto repo = corpus::load(repo_dir);
      const auto toks = pipeline::lm_corpus(repo);
      auto with_pairs = toks;
      if (!pairs_file.empty())
        for (const auto& p : classifier::read_pairs(pairs_file)) {
          with_pairs.push_back(p.hs);
          with_pairs.push_back(p.candidate);
        }
      std::vector<std::string> extra{c.retrieval.counter_prompt};
      if (!hs_file.empty())
        for (const auto& x : corpus::read_hate_speech_file(hs_file)) extra.push_back(x.text);
      const auto vocab = pipeline::build_vocabulary(with_pairs, extra);
      std::vector<TokenSeq> seqs;
      for (const auto& t : toks) {
        TokenSeq s;
        for (const auto& w : t) s.push_back(vocab.id(w));
        seqs.push_back(std::move(s));
      }
      const auto dir = lm::direction_from_string(direction);
      const auto model = lm::train_toy_lm(seqs, vocab, dir, c.models.lm,
                                          derive_seed(seed, dir == lm::Direction::forward ? "lm/fwd" : "lm/bwd"));
      model->save(out_file);
      std::cout << json{{"documents", seqs.size()}, {"vocab", vocab.size()}, {"direction", direction}}.dump() << "\n";
      return 0;
    };
  });

  // train-classifier
  auto* tclf = app.add_subcommand("train-classifier", "train the counter-narrative classifier");
  tclf->add_option("--pairs", pairs_file, "line-delimited {hs, cn, label}")->required();
  tclf->add_option("--out", out_file, "model file")->required();
  tclf->add_option("--epochs", epochs);
  tclf->add_option("--lr", lr);
  tclf->add_option("--seed", seed, "master seed");
  tclf->callback([&] {
    action = [&] {
      pipeline::PipelineConfig c;
      auto cfg = c.models.classifier;
      cfg.seed = derive_seed(seed, "classifier/init");
      auto train = c.models.classifier_training;
      train.seed = derive_seed(seed, "classifier/train");
      override_with(epochs, train.epochs);
      override_with(lr, train.learning_rate);
      const auto pairs = classifier::read_pairs(pairs_file);
      auto report = classifier::train(pairs, classifier::CNClassifier(cfg), train);
      report.model.save(out_file);
      std::cout << json{{"pairs", pairs.size()},
                        {"accuracy", classifier::accuracy(pairs, report.model)},
                        {"epochs", report.epoch_loss.size()}}
                       .dump()
                << "\n";
      return 0;
    };
  });

  // classify
  auto* classify = app.add_subcommand("classify", "score <hs, candidate> pairs");
  std::string hs_text, cn_text;
  classify->add_option("--model", model_file, "classifier file")->required();
  classify->add_option("--hs", hs_text, "hate speech text");
  classify->add_option("--cn", cn_text, "candidate text");
  classify->add_option("--input", input_file, "line-delimited {hs, cn}");
  classify->callback([&] {
    action = [&] {
      const auto clf = classifier::CNClassifier::load(model_file);
      std::vector<std::pair<std::string, std::string>> items;
      if (!input_file.empty())
        for (const auto& row : read_jsonl(input_file))
          items.emplace_back(row.at("hs").get<std::string>(), row.at("cn").get<std::string>());
      else if (!hs_text.empty() && !cn_text.empty())
        items.emplace_back(hs_text, cn_text);
      else
        throw ValidationFailure("classify needs --input or both --hs and --cn");
      for (const auto& [h, c] : items)
        std::cout << json{{"hs", h}, {"cn", c}, {"counter_probability", clf.counter_probability(h, c)},
                          {"label", clf.predict(h, c)}}
                         .dump()
                  << "\n";
      return 0;
    };
  });

  // retrieve
  auto* retr = app.add_subcommand("retrieve", "SSF counter-knowledge retrieval");
  ConfigOptions ropts;
  std::string models_dir;
  retr->add_option("--config", ropts.file, "pipeline config file");
  retr->add_option("--hs", hs_file, "hate speech file")->required();
  retr->add_option("--repo", repo_dir, "repository directory")->required();
  retr->add_option("--models", models_dir, "model directory")->required();
  ropts.add_retrieval(retr);
  retr->callback([&] {
    action = [&] {
      const auto c = ropts.resolve();
      const auto repo = corpus::load(repo_dir);
      const auto models = pipeline::ModelBundle::load(models_dir);
      const retrieve::EncoderSource source(models.stance, models.semantic);
      int status = 0;
      for (const auto& x : corpus::read_hate_speech_file(hs_file)) {
        try {
          const auto ck = retrieve::ssf(repo, x, c.retrieval, source, *models.forward);
          for (std::size_t rank = 0; rank < ck.ranked.size(); ++rank) {
            const auto& k = ck.ranked[rank];
            std::cout << json{{"hs_id", x.id},         {"rank", rank + 1},         {"sentence_id", k.sentence_id},
                              {"post_id", k.post_id},  {"comment_id", k.comment_id}, {"text", k.text},
                              {"sta", k.sta},          {"chi", k.chi},
                              {"fit", std::isfinite(k.fit) ? json(k.fit) : json("inf")}}
                             .dump()
                      << "\n";
          }
          if (ck.empty()) std::cout << json{{"hs_id", x.id}, {"error", "no counter-knowledge"}}.dump() << "\n";
        } catch (const retrieve::NoCounterKnowledge& e) {
          std::cout << json{{"hs_id", x.id}, {"error", e.what()}}.dump() << "\n";
          status = 2;
        }
      }
      return status;
    };
  });

  // generate
  auto* gen = app.add_subcommand("generate", "retrieve counter-knowledge and decode counter-narratives");
  ConfigOptions gopts;
  std::string trace_dir, gen_out;
  gen->add_option("--config", gopts.file, "pipeline config file");
  gen->add_option("--hs", hs_file, "hate speech file")->required();
  gen->add_option("--repo", repo_dir, "repository directory")->required();
  gen->add_option("--models", models_dir, "model directory")->required();
  gen->add_option("--trace", trace_dir, "directory for per-sample energy traces");
  gen->add_option("--out", gen_out, "output file (default stdout)");
  gen->add_option("--workers", gopts.workers, "parallel samples");
  gopts.add_retrieval(gen);
  gopts.add_decoder(gen);
  gen->callback([&] {
    action = [&] {
      const auto c = gopts.resolve();
      const auto repo = corpus::load(repo_dir);
      const auto models = pipeline::ModelBundle::load(models_dir);
      const auto hs = corpus::read_hate_speech_file(hs_file);
      const auto results = pipeline::parallel_map(hs.size(), c.workers, [&](std::size_t i) {
        return pipeline::run_sample(repo, hs[i], models, c, derive_seed(c.seed, "decode/" + std::to_string(i)));
      });
      std::ofstream file;
      if (!gen_out.empty()) file = open_out(gen_out);
      std::ostream& out = gen_out.empty() ? std::cout : file;
      for (std::size_t i = 0; i < results.size(); ++i) {
        out << pipeline::sample_json(results[i]).dump() << "\n";
        if (!trace_dir.empty() && !results[i].trace.steps.empty()) {
          fs::create_directories(trace_dir);
          decoder::write_trace(fs::path(trace_dir) / (std::to_string(i) + "-" + results[i].hs.id + ".jsonl"),
                               results[i].trace);
        }
      }
      return 0;
    };
  });

  // evaluate
  auto* evalc = app.add_subcommand("evaluate", "automatic metrics for generated counter-narratives");
  ConfigOptions eopts;
  evalc->add_option("--config", eopts.file, "pipeline config file (judge/toxicity settings)");
  evalc->add_option("--input", input_file, "output of generate")->required();
  evalc->add_option("--repo", repo_dir, "repository directory")->required();
  evalc->add_option("--models", models_dir, "model directory")->required();
  evalc->add_option("--out", out_file, "report file (default stdout)");
  evalc->callback([&] {
    action = [&] {
      const auto c = eopts.resolve();
      const auto repo = corpus::load(repo_dir);
      const auto models = pipeline::ModelBundle::load(models_dir);
      std::vector<pipeline::SampleResult> samples;
      for (const auto& row : read_jsonl(input_file)) samples.push_back(pipeline::sample_from_json(row));
      auto judge = pipeline::make_judge(c);
      auto tox = pipeline::make_toxicity(c);
      const auto report = pipeline::evaluate(samples, models, repo, *judge, tox.get());
      if (out_file.empty()) std::cout << report.dump(2) << "\n";
      else open_out(out_file) << report.dump(2) << "\n";
      return 0;
    };
  });

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "ingest, train, retrieve, decode and evaluate end to end");
  ConfigOptions popts;
  pipe->add_option("--config", popts.file, "pipeline config file")->required();
  pipe->add_option("--work-dir", popts.work_dir, "output directory");
  pipe->add_option("--report", popts.report, "report path");
  pipe->add_option("--workers", popts.workers, "parallel samples");
  popts.add_retrieval(pipe);
  popts.add_decoder(pipe);
  pipe->callback([&] {
    action = [&] {
      const auto c = popts.resolve();
      const auto summary = pipeline::run_pipeline(c, &std::cerr);
      for (const auto& e : summary.errors) std::cerr << "error: " << e << "\n";
      if (summary.exit_code == 0) std::cout << c.report_path().string() << "\n";
      return summary.exit_code;
    };
  });

  // validate-config
  auto* vcfg = app.add_subcommand("validate-config", "check a config file and print it with defaults filled");
  std::string cfg_file;
  vcfg->add_option("--config", cfg_file, "config file")->required();
  vcfg->callback([&] {
    action = [&] {
      const auto v = pipeline::validate_config(cfg_file);
      for (const auto& w : v.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& e : v.errors) std::cerr << "error: " << e << "\n";
      if (!v.ok()) return 1;
      std::cout << v.config.to_json().dump(2) << "\n";
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  try {
    return action ? action() : 0;
  } catch (const ValidationFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
