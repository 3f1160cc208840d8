#include "cnkit/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace cnkit::lm {

using nlohmann::json;

const char* to_string(Direction d) { return d == Direction::forward ? "fwd" : "bwd"; }

Direction direction_from_string(std::string_view s) {
  if (s == "fwd" || s == "forward") return Direction::forward;
  if (s == "bwd" || s == "backward") return Direction::backward;
  throw PreconditionError("unknown direction '" + std::string(s) + "' (expected fwd or bwd)");
}

SoftSequence::SoftSequence(Matrix m) : logits(std::move(m)) {
  require(logits.rows() >= 1, "soft sequence must have at least one row");
  if (!logits.allFinite()) throw NumericError("soft sequence has non-finite logits");
}

SoftSequence SoftSequence::one_hot(const TokenSeq& ids, std::size_t vocab_size, double margin) {
  Matrix m = Matrix::Zero(Eigen::Index(ids.size()), Eigen::Index(vocab_size));
  for (std::size_t t = 0; t < ids.size(); ++t) {
    require(ids[t] < vocab_size, "token id out of range for one-hot row");
    m(Eigen::Index(t), Eigen::Index(ids[t])) = margin;
  }
  return SoftSequence(std::move(m));
}

Matrix SoftSequence::probabilities(double temperature) const {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t)
    out.row(t) = softmax_temp(logits.row(t).transpose(), temperature).transpose();
  return out;
}

TokenSeq SoftSequence::argmax() const {
  TokenSeq out;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    Eigen::Index best = 0;
    logits.row(t).maxCoeff(&best);
    out.push_back(TokenId(best));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LanguageModel

Vector LanguageModel::predict_hard(const TokenSeq& context) const {
  Matrix rows = Matrix::Zero(Eigen::Index(context.size()), Eigen::Index(vocab_size()));
  for (std::size_t j = 0; j < context.size(); ++j) rows(Eigen::Index(j), Eigen::Index(context[j])) = 1.0;
  return predict(rows);
}

void LanguageModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << to_json().dump() << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

std::unique_ptr<LanguageModel> model_from_json(const json& j) {
  if (j.value("format", "") != "cnkit-lm") throw Error("not a language model file");
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "uniform")
    return std::make_unique<UniformLM>(Vocabulary::from_json(j.at("vocab")),
                                       direction_from_string(j.at("direction").get<std::string>()),
                                       j.value("context", 1));
  if (kind == "toy") return ToyLM::from_json(j);
  throw Error("unknown language model kind '" + kind + "'");
}

std::unique_ptr<LanguageModel> load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file " + path.string());
  return model_from_json(json::parse(in));
}

// ---------------------------------------------------------------------------
// UniformLM

Vector UniformLM::predict(const Matrix&) const {
  return Vector::Constant(Eigen::Index(vocab_.size()), 1.0 / double(vocab_.size()));
}

Matrix UniformLM::predict_backward(const Matrix& context, const Vector&) const {
  return Matrix::Zero(context.rows(), context.cols());
}

json UniformLM::to_json() const {
  return {{"format", "cnkit-lm"},
          {"kind", "uniform"},
          {"direction", lm::to_string(dir_)},
          {"context", context_},
          {"vocab", vocab_.to_json()}};
}

// ---------------------------------------------------------------------------
// ToyLM

ToyLM::ToyLM(Vocabulary vocab, Direction dir, const ToyLMConfig& config, std::uint64_t seed)
    : vocab_(std::move(vocab)), dir_(dir), config_(config) {
  require(config_.order >= 2, "toy LM order must be at least 2");
  require(config_.add_k >= 0.0, "add-k must be nonnegative");
  require(config_.neural_weight >= 0.0 && config_.neural_weight <= 1.0, "neural weight must lie in [0, 1]");
  const auto V = Eigen::Index(vocab_.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  embedding_ = Matrix(V, config_.embed_dim);
  for (Eigen::Index i = 0; i < embedding_.size(); ++i) embedding_.data()[i] = g(rng);
  net_ = nn::FeedForward(context_size() * config_.embed_dim, config_.hidden_dim, int(V), derive_seed(seed, "net"));
}

void ToyLM::rebuild_index() {
  table_index_.clear();
  for (std::size_t i = 0; i < table_.size(); ++i) table_index_.emplace(table_[i].context, i);
}

void ToyLM::fit_counts(const std::vector<TokenSeq>& sequences) {
  const std::size_t c = std::size_t(context_size());
  std::map<TokenSeq, std::map<TokenId, double>> counts;
  for (const auto& seq : sequences) {
    vocab_.check(seq);
    for (std::size_t i = c; i < seq.size(); ++i)
      counts[TokenSeq(seq.begin() + long(i - c), seq.begin() + long(i))][seq[i]] += 1.0;
  }
  table_.clear();
  for (auto& [ctx, nexts] : counts) {
    ContextStats s{ctx, 0.0, {}};
    for (auto& [tok, n] : nexts) {
      s.total += n;
      s.next.emplace_back(tok, n);
    }
    table_.push_back(std::move(s));
  }
  rebuild_index();
}

double ToyLM::table_prob(const TokenSeq& context, TokenId next) const {
  const double V = double(vocab_.size());
  auto it = table_index_.find(context);
  if (it == table_index_.end()) return 1.0 / V;
  const auto& s = table_[it->second];
  auto pos = std::lower_bound(s.next.begin(), s.next.end(), std::make_pair(next, 0.0),
                              [](const auto& a, const auto& b) { return a.first < b.first; });
  const double n = (pos != s.next.end() && pos->first == next) ? pos->second : 0.0;
  return (n + config_.add_k) / (s.total + config_.add_k * V);
}

Vector ToyLM::count_predict(const Matrix& context) const {
  const auto V = Eigen::Index(vocab_.size());
  const double inv_v = 1.0 / double(V);
  const double k = config_.add_k;
  Vector p = Vector::Zero(V);
  double constant = inv_v;
  for (const auto& s : table_) {
    double w = 1.0;
    for (std::size_t j = 0; j < s.context.size() && w != 0.0; ++j) w *= context(Eigen::Index(j), Eigen::Index(s.context[j]));
    if (w == 0.0) continue;
    const double denom = s.total + k * double(V);
    constant += w * (k / denom - inv_v);
    for (const auto& [tok, n] : s.next) p[Eigen::Index(tok)] += w * n / denom;
  }
  p.array() += constant;
  return p;
}

Vector ToyLM::neural_predict(const Matrix& context, nn::FeedForward::Cache* cache) const {
  const int e = config_.embed_dim;
  Vector input(context_size() * e);
  for (int j = 0; j < context_size(); ++j) input.segment(j * e, e) = embedding_.transpose() * context.row(j).transpose();
  return softmax_temp(net_.forward(input, cache));
}

Vector ToyLM::predict(const Matrix& context) const {
  require(context.rows() == context_size() && context.cols() == Eigen::Index(vocab_.size()),
          "context shape does not match the language model");
  const double mu = config_.neural_weight;
  Vector p = (1.0 - mu) * count_predict(context);
  if (mu > 0.0) p += mu * neural_predict(context, nullptr);
  return p;
}

Matrix ToyLM::predict_backward(const Matrix& context, const Vector& grad_probs) const {
  require(context.rows() == context_size() && context.cols() == Eigen::Index(vocab_.size()),
          "context shape does not match the language model");
  const auto V = Eigen::Index(vocab_.size());
  const double mu = config_.neural_weight;
  const double k = config_.add_k;
  const double inv_v = 1.0 / double(V);
  Matrix grad = Matrix::Zero(context.rows(), V);

  if (mu < 1.0) {
    const double g_sum = grad_probs.sum();
    const std::size_t c = std::size_t(context_size());
    for (const auto& s : table_) {
      const double denom = s.total + k * double(V);
      double sensitivity = (k / denom - inv_v) * g_sum;
      for (const auto& [tok, n] : s.next) sensitivity += grad_probs[Eigen::Index(tok)] * n / denom;
      sensitivity *= (1.0 - mu);
      for (std::size_t j = 0; j < c; ++j) {
        double w = sensitivity;
        for (std::size_t i = 0; i < c && w != 0.0; ++i)
          if (i != j) w *= context(Eigen::Index(i), Eigen::Index(s.context[i]));
        grad(Eigen::Index(j), Eigen::Index(s.context[j])) += w;
      }
    }
  }

  if (mu > 0.0) {
    nn::FeedForward::Cache cache;
    const Vector probs = neural_predict(context, &cache);
    const Vector grad_out = softmax_backward(probs, mu * grad_probs);
    const Vector grad_in = net_.backward(cache, grad_out, nullptr);
    const int e = config_.embed_dim;
    for (int j = 0; j < context_size(); ++j) grad.row(j) += (embedding_ * grad_in.segment(j * e, e)).transpose();
  }
  return grad;
}

Vector ToyLM::predict_hard(const TokenSeq& context) const {
  require(context.size() == std::size_t(context_size()), "context length does not match the language model");
  vocab_.check(context);
  const auto V = Eigen::Index(vocab_.size());
  const double mu = config_.neural_weight;
  Vector p(V);
  auto it = table_index_.find(context);
  if (it == table_index_.end()) {
    p.setConstant(1.0 / double(V));
  } else {
    const auto& s = table_[it->second];
    const double denom = s.total + config_.add_k * double(V);
    p.setConstant(config_.add_k / denom);
    for (const auto& [tok, n] : s.next) p[Eigen::Index(tok)] += n / denom;
  }
  p *= (1.0 - mu);
  if (mu > 0.0) {
    const int e = config_.embed_dim;
    Vector input(context_size() * e);
    for (int j = 0; j < context_size(); ++j)
      input.segment(j * e, e) = embedding_.row(Eigen::Index(context[std::size_t(j)])).transpose();
    p += mu * softmax_temp(net_.forward(input));
  }
  return p;
}

std::vector<double> ToyLM::fit_neural(const std::vector<TokenSeq>& sequences, std::uint64_t seed) {
  std::vector<double> losses;
  if (config_.neural_weight <= 0.0 || config_.epochs <= 0) return losses;
  const std::size_t c = std::size_t(context_size());
  const int e = config_.embed_dim;
  std::vector<std::pair<std::size_t, std::size_t>> examples;  // (sequence, position)
  for (std::size_t s = 0; s < sequences.size(); ++s)
    for (std::size_t i = c; i < sequences[s].size(); ++i) examples.emplace_back(s, i);
  if (examples.empty()) return losses;

  std::mt19937_64 rng(seed);
  nn::Adam net_opt(net_.num_params(), config_.learning_rate);
  nn::Adam emb_opt(embedding_.size(), config_.learning_rate);
  Vector net_grad = Vector::Zero(net_.num_params());
  Matrix emb_grad = Matrix::Zero(embedding_.rows(), embedding_.cols());
  nn::FeedForward::Cache cache;
  Vector input(Eigen::Index(c) * e);

  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::shuffle(examples.begin(), examples.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += config_.batch_size) {
      const std::size_t end = std::min(examples.size(), start + config_.batch_size);
      net_grad.setZero();
      emb_grad.setZero();
      for (std::size_t b = start; b < end; ++b) {
        const auto& seq = sequences[examples[b].first];
        const std::size_t i = examples[b].second;
        for (std::size_t j = 0; j < c; ++j)
          input.segment(Eigen::Index(j) * e, e) = embedding_.row(Eigen::Index(seq[i - c + j])).transpose();
        Vector probs = softmax_temp(net_.forward(input, &cache));
        const auto target = Eigen::Index(seq[i]);
        total -= std::log(std::max(probs[target], 1e-300));
        probs[target] -= 1.0;
        const Vector grad_in = net_.backward(cache, probs, &net_grad);
        for (std::size_t j = 0; j < c; ++j)
          emb_grad.row(Eigen::Index(seq[i - c + j])) += grad_in.segment(Eigen::Index(j) * e, e).transpose();
      }
      const double scale = 1.0 / double(end - start);
      net_grad *= scale;
      emb_grad *= scale;
      net_opt.step(net_.params(), net_grad);
      Eigen::Map<Vector> emb_flat(embedding_.data(), embedding_.size());
      Vector emb_g = Eigen::Map<const Vector>(emb_grad.data(), emb_grad.size());
      Vector emb_vals = emb_flat;
      emb_opt.step(emb_vals, emb_g);
      emb_flat = emb_vals;
    }
    losses.push_back(total / double(examples.size()));
  }
  return losses;
}

json ToyLM::to_json() const {
  json counts = json::array();
  for (const auto& s : table_)
    for (const auto& [tok, n] : s.next) {
      json row = s.context;
      row.push_back(tok);
      row.push_back(n);
      counts.push_back(std::move(row));
    }
  const Eigen::Map<const Vector> emb(embedding_.data(), embedding_.size());
  return {{"format", "cnkit-lm"},
          {"kind", "toy"},
          {"direction", lm::to_string(dir_)},
          {"order", config_.order},
          {"add_k", config_.add_k},
          {"neural_weight", config_.neural_weight},
          {"embed_dim", config_.embed_dim},
          {"hidden_dim", config_.hidden_dim},
          {"vocab", vocab_.to_json()},
          {"counts", std::move(counts)},
          {"embedding", nn::vector_to_json(emb)},
          {"net", net_.to_json()}};
}

std::unique_ptr<ToyLM> ToyLM::from_json(const json& j) {
  ToyLMConfig cfg;
  cfg.order = j.at("order").get<int>();
  cfg.add_k = j.at("add_k").get<double>();
  cfg.neural_weight = j.at("neural_weight").get<double>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  auto model = std::make_unique<ToyLM>(Vocabulary::from_json(j.at("vocab")),
                                       direction_from_string(j.at("direction").get<std::string>()), cfg, 0);
  const std::size_t c = std::size_t(model->context_size());
  std::map<TokenSeq, std::vector<std::pair<TokenId, double>>> grouped;
  for (const auto& row : j.at("counts")) {
    auto vals = row.get<std::vector<double>>();
    if (vals.size() != c + 2) throw Error("malformed count row in language model file");
    TokenSeq ctx;
    for (std::size_t i = 0; i < c; ++i) ctx.push_back(TokenId(vals[i]));
    model->vocab_.check(ctx);
    model->vocab_.check({TokenId(vals[c])});
    grouped[ctx].emplace_back(TokenId(vals[c]), vals[c + 1]);
  }
  for (auto& [ctx, nexts] : grouped) {
    std::sort(nexts.begin(), nexts.end());
    ContextStats s{ctx, 0.0, std::move(nexts)};
    for (const auto& [tok, n] : s.next) s.total += n;
    model->table_.push_back(std::move(s));
  }
  model->rebuild_index();
  const Vector emb = nn::vector_from_json(j.at("embedding"));
  if (emb.size() != model->embedding_.size()) throw Error("embedding size mismatch in language model file");
  Eigen::Map<Vector>(model->embedding_.data(), emb.size()) = emb;
  model->net_ = nn::FeedForward::from_json(j.at("net"));
  if (model->net_.input_dim() != int(c) * cfg.embed_dim || model->net_.output_dim() != int(model->vocab_.size()))
    throw Error("network shape mismatch in language model file");
  return model;
}

std::vector<TokenSeq> training_sequences(const std::vector<TokenSeq>& corpus, Direction dir, int context) {
  std::vector<TokenSeq> out;
  const Vocabulary specials;
  for (const auto& sentence : corpus) {
    TokenSeq seq(std::size_t(context), specials.bos());
    if (dir == Direction::forward)
      seq.insert(seq.end(), sentence.begin(), sentence.end());
    else
      seq.insert(seq.end(), sentence.rbegin(), sentence.rend());
    seq.push_back(specials.eos());
    out.push_back(std::move(seq));
  }
  return out;
}

std::unique_ptr<ToyLM> train_toy_lm(const std::vector<TokenSeq>& corpus, const Vocabulary& vocab, Direction dir,
                                    const ToyLMConfig& config, std::uint64_t seed) {
  require(!corpus.empty(), "cannot train a language model on an empty corpus");
  auto model = std::make_unique<ToyLM>(vocab, dir, config, derive_seed(seed, "init"));
  const auto seqs = training_sequences(corpus, dir, model->context_size());
  model->fit_counts(seqs);
  model->fit_neural(seqs, derive_seed(seed, "neural"));
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

ContextWindow context_window(const LanguageModel& lm, const TokenSeq& hard, const Matrix* soft_probs,
                             std::size_t soft_count) {
  const auto c = std::size_t(lm.context_size());
  const auto V = Eigen::Index(lm.vocab_size());
  const std::size_t n_soft = soft_probs ? soft_count : 0;
  require(!soft_probs || Eigen::Index(soft_count) <= soft_probs->rows(), "soft context longer than available rows");
  const std::size_t total = hard.size() + n_soft;
  ContextWindow out{Matrix::Zero(Eigen::Index(c), V), std::vector<long>(c, -1)};
  for (std::size_t j = 0; j < c; ++j) {
    const long pos = long(total) - long(c) + long(j);
    if (pos < 0) {
      out.rows(Eigen::Index(j), Eigen::Index(lm.vocab().bos())) = 1.0;
    } else if (std::size_t(pos) < hard.size()) {
      out.rows(Eigen::Index(j), Eigen::Index(hard[std::size_t(pos)])) = 1.0;
    } else {
      const long s = pos - long(hard.size());
      out.rows.row(Eigen::Index(j)) = soft_probs->row(s);
      out.source[j] = s;
    }
  }
  return out;
}

namespace {

ContextWindow gather_context(const LanguageModel& lm, const TokenSeq& hard, const Matrix* soft) {
  return context_window(lm, hard, soft, soft ? std::size_t(soft->rows()) : 0);
}

}  // namespace

Matrix hard_context(const LanguageModel& lm, const TokenSeq& prefix) {
  lm.vocab().check(prefix);
  return gather_context(lm, prefix, nullptr).rows;
}

Vector next_dist(const LanguageModel& lm, const TokenSeq& prefix) {
  require(!prefix.empty(), "next_dist requires a nonempty prefix");
  lm.vocab().check(prefix);
  const auto c = std::size_t(lm.context_size());
  TokenSeq ctx(c, lm.vocab().bos());
  for (std::size_t j = 0; j < c && j < prefix.size(); ++j) ctx[c - 1 - j] = prefix[prefix.size() - 1 - j];
  return lm.predict_hard(ctx);
}

Vector next_dist_soft(const LanguageModel& lm, const SoftSequence& soft_prefix, const TokenSeq& left_context,
                      double temperature) {
  lm.vocab().check(left_context);
  if (!soft_prefix.logits.allFinite()) throw NumericError("soft prefix has non-finite logits");
  const Matrix probs = soft_prefix.probabilities(temperature);
  return lm.predict(gather_context(lm, left_context, &probs).rows);
}

Matrix next_dist_soft_backward(const LanguageModel& lm, const SoftSequence& soft_prefix,
                               const TokenSeq& left_context, const Vector& grad_probs, double temperature) {
  const Matrix probs = soft_prefix.probabilities(temperature);
  const auto ctx = gather_context(lm, left_context, &probs);
  const Matrix grad_ctx = lm.predict_backward(ctx.rows, grad_probs);
  Matrix grad = Matrix::Zero(soft_prefix.logits.rows(), soft_prefix.logits.cols());
  for (std::size_t j = 0; j < ctx.source.size(); ++j) {
    const long s = ctx.source[j];
    if (s < 0) continue;
    grad.row(s) += softmax_backward(probs.row(s).transpose(), grad_ctx.row(Eigen::Index(j)).transpose(), temperature)
                       .transpose();
  }
  return grad;
}

double conditional_perplexity(const LanguageModel& lm, const TokenSeq& seq, std::size_t first_scored) {
  require(seq.size() >= 2, "perplexity requires at least two tokens");
  lm.vocab().check(seq);
  first_scored = std::max<std::size_t>(first_scored, 1);
  require(first_scored < seq.size(), "no positions to score");
  const auto c = std::size_t(lm.context_size());
  double nll = 0.0;
  TokenSeq ctx(c);
  for (std::size_t t = first_scored; t < seq.size(); ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      const long pos = long(t) - long(c) + long(j);
      ctx[j] = pos < 0 ? lm.vocab().bos() : seq[std::size_t(pos)];
    }
    const double p = lm.predict_hard(ctx)[Eigen::Index(seq[t])];
    if (!(p > 0.0)) throw NumericError("infinite perplexity");
    nll -= std::log(p);
  }
  return std::exp(nll / double(seq.size() - first_scored));
}

double perplexity(const LanguageModel& lm, const TokenSeq& seq) { return conditional_perplexity(lm, seq, 1); }

namespace {
constexpr double kLogFloor = -690.0;  // ~log(1e-300)

Vector safe_log(const Vector& p) {
  Vector out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) out[i] = p[i] > 0.0 ? std::max(std::log(p[i]), kLogFloor) : kLogFloor;
  return out;
}
}  // namespace

SoftSequence logits_of(const LanguageModel& lm, const TokenSeq& seq) {
  require(!seq.empty(), "logits_of requires a nonempty sequence");
  lm.vocab().check(seq);
  Matrix rows(Eigen::Index(seq.size()), Eigen::Index(lm.vocab_size()));
  TokenSeq prefix{lm.vocab().bos()};
  for (std::size_t t = 0; t < seq.size(); ++t) {
    rows.row(Eigen::Index(t)) = safe_log(next_dist(lm, prefix)).transpose();
    prefix.push_back(seq[t]);
  }
  return SoftSequence(std::move(rows));
}

std::pair<SoftSequence, TokenSeq> greedy_continuation(const LanguageModel& lm, const TokenSeq& prefix,
                                                      std::size_t count) {
  require(count >= 1, "greedy continuation of zero tokens");
  TokenSeq ctx = prefix.empty() ? TokenSeq{lm.vocab().bos()} : prefix;
  Matrix rows(Eigen::Index(count), Eigen::Index(lm.vocab_size()));
  TokenSeq tokens;
  for (std::size_t t = 0; t < count; ++t) {
    const Vector p = next_dist(lm, ctx);
    Eigen::Index best = 0;
    p.maxCoeff(&best);
    rows.row(Eigen::Index(t)) = safe_log(p).transpose();
    tokens.push_back(TokenId(best));
    ctx.push_back(TokenId(best));
  }
  return {SoftSequence(std::move(rows)), std::move(tokens)};
}

}  // namespace cnkit::lm
