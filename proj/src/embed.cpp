#include "cnkit/embed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "cnkit/text.hpp"

namespace cnkit::embed {

double cosine(const Vector& u, const Vector& v) {
  require(u.size() == v.size(), "cosine of vectors with different dimensions");
  require(u.size() > 0, "cosine of empty vectors");
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0) || !std::isfinite(nu) || !std::isfinite(nv)) throw DegenerateEmbedding();
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

Vector cosine_grad(const Vector& u, const Vector& v) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) throw DegenerateEmbedding();
  const double c = u.dot(v) / (nu * nv);
  return v / (nu * nv) - c * u / (nu * nu);
}

std::string format_stance_input(std::string_view target, std::string_view statement) {
  require(!target.empty(), "stance target must be nonempty");
  require(!statement.empty(), "stance statement must be nonempty");
  std::string out = "[CLS] ";
  out += target;
  out += " [SEP] ";
  out += statement;
  out += " [SEP]";
  return out;
}

std::pair<std::string, std::string> parse_stance_input(std::string_view formatted) {
  constexpr std::string_view kHead = "[CLS] ";
  constexpr std::string_view kMid = " [SEP] ";
  constexpr std::string_view kTail = " [SEP]";
  if (!formatted.starts_with(kHead) || !formatted.ends_with(kTail))
    throw PreconditionError("not a stance input: " + std::string(formatted));
  const auto body = formatted.substr(kHead.size(), formatted.size() - kHead.size() - kTail.size());
  const auto mid = body.find(kMid);
  if (mid == std::string_view::npos) throw PreconditionError("stance input lacks separator");
  return {std::string(body.substr(0, mid)), std::string(body.substr(mid + kMid.size()))};
}

PairSet build_pairs(std::span<const StanceStatement> dataset) {
  PairSet out;
  for (std::size_t a = 0; a < dataset.size(); ++a) {
    const auto& anchor = dataset[a];
    std::vector<std::size_t> pos, neg;
    for (std::size_t j = 0; j < dataset.size(); ++j) {
      if (j == a || dataset[j].target != anchor.target) continue;
      if (dataset[j].polarity == anchor.polarity) {
        if (dataset[j].text != anchor.text) pos.push_back(j);
      } else {
        neg.push_back(j);
      }
    }
    if (pos.empty() || neg.empty()) {
      ++out.skipped_anchors;
      continue;
    }
    for (auto p : pos)
      for (auto n : neg) out.pairs.push_back({anchor.text, dataset[p].text, dataset[n].text, anchor.target});
  }
  return out;
}

std::vector<StanceStatement> read_stance_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open stance dataset " + path.string());
  std::vector<StanceStatement> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.value("id", std::to_string(out.size())), j.at("text").get<std::string>(),
                   j.at("target").get<std::string>(), j.at("polarity").get<std::string>()});
  }
  return out;
}

std::vector<TriplePair> read_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open triple file " + path.string());
  std::vector<TriplePair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TriplePair t{j.at("anchor").get<std::string>(), j.at("positive").get<std::string>(),
                   j.at("negative").get<std::string>(), j.value("target", std::string())};
      require(!t.anchor.empty() && !t.positive.empty() && !t.hard_negative.empty(), "empty text in triple");
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

Encoder::Encoder(EncoderKind kind, const EncoderConfig& config)
    : kind_(kind),
      hasher_(config.feature_dim, config.seed ^ 0x5bd1e995ULL),
      net_(config.feature_dim, config.hidden_dim, config.output_dim, config.seed) {}

Vector Encoder::features(std::string_view input) const { return hasher_.bag_features(tokenize(input)); }

Vector Encoder::encode_raw(std::string_view input, nn::FeedForward::Cache* cache) const {
  return net_.forward(features(input), cache);
}

std::string Encoder::prepare(std::string_view text, std::string_view target) const {
  if (kind_ == EncoderKind::stance) return format_stance_input(target, text);
  require(!text.empty(), "cannot embed empty text");
  return std::string(text);
}

Vector Encoder::encode(std::string_view text, std::string_view target) const {
  return encode_raw(prepare(text, target));
}

nlohmann::json Encoder::to_json() const {
  return {{"format", "cnkit-encoder"},
          {"kind", kind_ == EncoderKind::stance ? "stance" : "semantic"},
          {"feature_dim", hasher_.dim()},
          {"hash_salt", hasher_.salt()},
          {"net", net_.to_json()}};
}

Encoder Encoder::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "cnkit-encoder") throw Error("not an encoder model file");
  Encoder e;
  e.kind_ = j.at("kind").get<std::string>() == "stance" ? EncoderKind::stance : EncoderKind::semantic;
  e.hasher_ = nn::FeatureHasher(j.at("feature_dim").get<int>(), j.at("hash_salt").get<std::uint64_t>());
  e.net_ = nn::FeedForward::from_json(j.at("net"));
  if (e.net_.input_dim() != e.hasher_.dim()) throw Error("encoder feature dimension mismatch");
  return e;
}

void Encoder::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << to_json().dump() << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

Encoder Encoder::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open encoder file " + path.string());
  return from_json(nlohmann::json::parse(in));
}

LossAndGrad contrastive_loss(std::span<const Vector> anchors, std::span<const Vector> positives,
                             std::span<const Vector> negatives, double temperature) {
  require(temperature > 0.0, "contrastive temperature must be positive");
  const std::size_t n = anchors.size();
  require(n >= 1, "contrastive batch must be nonempty");
  require(positives.size() == n && negatives.size() == n, "contrastive batch parts differ in size");

  LossAndGrad out;
  out.grad_anchor.assign(n, Vector::Zero(anchors[0].size()));
  out.grad_positive.assign(n, Vector::Zero(anchors[0].size()));
  out.grad_negative.assign(n, Vector::Zero(anchors[0].size()));

  Vector scores(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      scores[Eigen::Index(j)] = cosine(anchors[i], positives[j]) / temperature;
      scores[Eigen::Index(n + j)] = cosine(anchors[i], negatives[j]) / temperature;
    }
    if (!scores.allFinite()) throw NumericError("non-finite similarity in contrastive loss");
    out.loss += log_sum_exp(scores) - scores[Eigen::Index(i)];
    const Vector w = softmax_temp(scores);
    for (std::size_t j = 0; j < n; ++j) {
      const double gp = (w[Eigen::Index(j)] - (i == j ? 1.0 : 0.0)) / (temperature * double(n));
      const double gn = w[Eigen::Index(n + j)] / (temperature * double(n));
      out.grad_anchor[i] += gp * cosine_grad(anchors[i], positives[j]) + gn * cosine_grad(anchors[i], negatives[j]);
      out.grad_positive[j] += gp * cosine_grad(positives[j], anchors[i]);
      out.grad_negative[j] += gn * cosine_grad(negatives[j], anchors[i]);
    }
  }
  out.loss /= double(n);
  return out;
}

namespace {

struct EncodedBatch {
  std::vector<Vector> a, p, n;
  std::vector<nn::FeedForward::Cache> ca, cp, cn;
};

EncodedBatch encode_batch(std::span<const TriplePair> batch, const Encoder& enc, bool keep_cache) {
  EncodedBatch b;
  const std::size_t n = batch.size();
  b.ca.resize(keep_cache ? n : 0);
  b.cp.resize(keep_cache ? n : 0);
  b.cn.resize(keep_cache ? n : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = batch[i];
    b.a.push_back(enc.encode_raw(enc.prepare(t.anchor, t.target), keep_cache ? &b.ca[i] : nullptr));
    b.p.push_back(enc.encode_raw(enc.prepare(t.positive, t.target), keep_cache ? &b.cp[i] : nullptr));
    b.n.push_back(enc.encode_raw(enc.prepare(t.hard_negative, t.target), keep_cache ? &b.cn[i] : nullptr));
  }
  return b;
}

}  // namespace

double contrastive_loss(std::span<const TriplePair> batch, const Encoder& encoder, double temperature) {
  const auto b = encode_batch(batch, encoder, false);
  return contrastive_loss(b.a, b.p, b.n, temperature).loss;
}

double contrastive_loss_grad(std::span<const TriplePair> batch, const Encoder& encoder, double temperature,
                             Vector& param_grad) {
  const auto b = encode_batch(batch, encoder, true);
  const auto lg = contrastive_loss(b.a, b.p, b.n, temperature);
  param_grad = Vector::Zero(encoder.net().num_params());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    encoder.net().backward(b.ca[i], lg.grad_anchor[i], &param_grad);
    encoder.net().backward(b.cp[i], lg.grad_positive[i], &param_grad);
    encoder.net().backward(b.cn[i], lg.grad_negative[i], &param_grad);
  }
  return lg.loss;
}

TrainReport train_encoder(std::span<const TriplePair> pairs, Encoder encoder, const TrainConfig& config) {
  require(!pairs.empty(), "training requires at least one triple");
  require(config.learning_rate > 0.0, "learning rate must be positive");
  require(config.batch_size >= 1, "batch size must be at least 1");

  TrainReport report;
  std::mt19937_64 rng(config.seed);
  nn::Adam opt(encoder.net().num_params(), config.learning_rate);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TriplePair> batch;
  Vector grad;

  for (int epoch = 0; epoch < config.epochs && !report.diverged; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k)
        batch.push_back(pairs[order[k]]);
      const Vector last = encoder.net().params();
      double loss = 0.0;
      try {
        loss = contrastive_loss_grad(batch, encoder, config.temperature, grad);
      } catch (const NumericError&) {
        loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(loss) || !grad.allFinite()) {
        report.diverged = true;
        break;
      }
      opt.step(encoder.net().params(), grad);
      if (!encoder.net().params().allFinite()) {
        encoder.net().params() = last;
        report.diverged = true;
        break;
      }
      total += loss;
      ++batches;
    }
    if (batches > 0) report.epoch_loss.push_back(total / double(batches));
  }
  report.encoder = std::move(encoder);
  return report;
}

double stance_margin(std::span<const TriplePair> pairs, const Encoder& encoder) {
  require(!pairs.empty(), "margin of empty pair set");
  double pos = 0.0, neg = 0.0;
  for (const auto& t : pairs) {
    const Vector a = encoder.encode(t.anchor, t.target);
    pos += cosine(a, encoder.encode(t.positive, t.target));
    neg += cosine(a, encoder.encode(t.hard_negative, t.target));
  }
  return (pos - neg) / double(pairs.size());
}

void EmbeddingTable::set(const std::string& id, Vector v) {
  require(!id.empty() && std::none_of(id.begin(), id.end(), [](unsigned char c) { return std::isspace(c); }),
          "embedding ids must be nonempty and free of whitespace");
  if (dim_ == 0) dim_ = int(v.size());
  require(v.size() == dim_, "embedding dimension mismatch for id " + id);
  require(v.allFinite(), "embedding for id " + id + " is not finite");
  rows_[id] = std::move(v);
}

const Vector* EmbeddingTable::find(std::string_view id) const {
  auto it = rows_.find(std::string(id));
  return it == rows_.end() ? nullptr : &it->second;
}

void EmbeddingTable::write(std::ostream& out) const {
  out << "dim " << dim_ << '\n';
  out.precision(17);
  for (const auto& [id, v] : rows_) {
    out << id;
    for (Eigen::Index k = 0; k < v.size(); ++k) out << ' ' << v[k];
    out << '\n';
  }
}

EmbeddingTable EmbeddingTable::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("embedding file is empty");
  std::istringstream head(line);
  std::string tag;
  int dim = 0;
  if (!(head >> tag >> dim) || tag != "dim" || dim <= 0) throw Error("embedding file must start with 'dim <d>'");
  EmbeddingTable table(dim);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    std::string id;
    row >> id;
    Vector v(dim);
    for (int k = 0; k < dim; ++k)
      if (!(row >> v[k])) throw Error("embedding line " + std::to_string(lineno) + " has fewer than dim values");
    double extra;
    if (row >> extra) throw Error("embedding line " + std::to_string(lineno) + " has more than dim values");
    table.set(id, std::move(v));
  }
  return table;
}

void EmbeddingTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  write(out);
  if (!out) throw Error("failed writing " + path.string());
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embedding file " + path.string());
  return read(in);
}

}  // namespace cnkit::embed
