#include <doctest.h>

#include <cmath>

#include "cnkit/lm.hpp"
#include "support.hpp"

using namespace cnkit;
using namespace cnkit::lm;

namespace {

// Independent scalar replay of the toy mixture on probability-row contexts.
std::vector<double> scalar_predict(const ToyLM& m, const Matrix& ctx) {
  const std::size_t V = m.vocab().size();
  const int c = m.context_size();
  const auto& cfg = m.config();
  std::vector<double> count(V, 1.0 / double(V));
  for (const auto& s : m.table()) {
    double w = 1;
    for (int j = 0; j < c; ++j) w *= ctx(j, Eigen::Index(s.context[std::size_t(j)]));
    const double denom = s.total + cfg.add_k * double(V);
    for (std::size_t v = 0; v < V; ++v) {
      double n = 0;
      for (const auto& [tok, cnt] : s.next)
        if (tok == v) n = cnt;
      count[v] += w * ((n + cfg.add_k) / denom - 1.0 / double(V));
    }
  }
  // Neural part: W1 (hid x in, row-major), b1, W2 (V x hid), b2.
  const int e = cfg.embed_dim, in = c * e, hid = m.net().hidden_dim();
  std::vector<double> x(std::size_t(in), 0.0);
  for (int j = 0; j < c; ++j)
    for (int d = 0; d < e; ++d)
      for (std::size_t v = 0; v < V; ++v) x[std::size_t(j * e + d)] += ctx(j, Eigen::Index(v)) * m.embedding()(Eigen::Index(v), d);
  const Vector& P = m.net().params();
  std::vector<double> h(static_cast<std::size_t>(hid));
  for (int r = 0; r < hid; ++r) {
    double a = P[Eigen::Index(hid) * in + r];
    for (int k = 0; k < in; ++k) a += P[Eigen::Index(r) * in + k] * x[std::size_t(k)];
    h[std::size_t(r)] = std::tanh(a);
  }
  const Eigen::Index w2 = Eigen::Index(hid) * in + hid, b2 = w2 + Eigen::Index(V) * hid;
  std::vector<double> z(V);
  double zmax = -1e300;
  for (std::size_t v = 0; v < V; ++v) {
    double a = P[b2 + Eigen::Index(v)];
    for (int r = 0; r < hid; ++r) a += P[w2 + Eigen::Index(v) * hid + r] * h[std::size_t(r)];
    z[v] = a;
    zmax = std::max(zmax, a);
  }
  double sum = 0;
  for (auto& a : z) sum += (a = std::exp(a - zmax));
  std::vector<double> out(V);
  for (std::size_t v = 0; v < V; ++v) out[v] = (1 - cfg.neural_weight) * count[v] + cfg.neural_weight * z[v] / sum;
  return out;
}

Matrix one_hot_rows(const TokenSeq& ids, std::size_t V) {
  Matrix m = Matrix::Zero(Eigen::Index(ids.size()), Eigen::Index(V));
  for (std::size_t i = 0; i < ids.size(); ++i) m(Eigen::Index(i), Eigen::Index(ids[i])) = 1;
  return m;
}

}  // namespace

TEST_CASE("uniform model: next_dist, perplexity, logits_of") {
  const auto vocab = testing::small_vocab(7);
  const UniformLM u(vocab);
  const Vector p = next_dist(u, {vocab.bos(), 3, 4});
  for (Eigen::Index i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(1.0 / 7).epsilon(1e-15));
  CHECK(std::abs(perplexity(u, {3, 4, 5, 6, 3}) - 7.0) < 1e-9);
  const auto l = logits_of(u, {4});
  REQUIRE(l.length() == 1);
  CHECK(l.logits.maxCoeff() == l.logits.minCoeff());
  CHECK_THROWS_AS(next_dist(u, {99}), PreconditionError);
  CHECK_THROWS_AS(next_dist(u, {}), PreconditionError);
}

TEST_CASE("uniform soft rows into uniform model give uniform output") {
  const auto vocab = testing::small_vocab(6);
  const UniformLM u(vocab, Direction::forward, 2);
  const SoftSequence soft(Matrix::Zero(3, 6));
  const Vector p = next_dist_soft(u, soft, {vocab.bos()});
  for (Eigen::Index i = 0; i < 6; ++i) CHECK(p[i] == doctest::Approx(1.0 / 6));
}

TEST_CASE("bigram model on 'a b a b' matches a hand count") {
  const auto vocab = Vocabulary::from_tokens({"a", "b"});
  const TokenId a = vocab.id("a"), b = vocab.id("b");
  ToyLMConfig cfg;
  cfg.order = 2;
  cfg.add_k = 0.5;
  cfg.neural_weight = 0.0;
  const auto m = train_toy_lm({{a, b, a, b}}, vocab, Direction::forward, cfg, 1);
  // Sequence <bos> a b a b <eos>: after "a" we saw b twice and nothing else.
  const double V = 5;
  CHECK(std::abs(next_dist(*m, {vocab.bos(), a})[Eigen::Index(b)] - (2 + 0.5) / (2 + 0.5 * V)) < 1e-12);
  CHECK(std::abs(next_dist(*m, {a})[Eigen::Index(a)] - 0.5 / (2 + 0.5 * V)) < 1e-12);
  // After "b": a once, <eos> once.
  CHECK(std::abs(next_dist(*m, {b})[Eigen::Index(vocab.eos())] - 1.5 / (2 + 0.5 * V)) < 1e-12);
  CHECK(std::abs(m->table_prob({b}, a) - 1.5 / (2 + 0.5 * V)) < 1e-12);
  // Unseen context: uniform.
  CHECK(std::abs(next_dist(*m, {vocab.unk()})[0] - 1 / V) < 1e-12);
}

TEST_CASE("next_dist sums to one; soft one-hot equals hard") {
  const auto vocab = testing::small_vocab(12);
  std::mt19937_64 rng(4);
  for (auto dir : {Direction::forward, Direction::backward}) {
    const auto m = testing::small_lm(vocab, dir, 77, 3);
    for (int trial = 0; trial < 20; ++trial) {
      const auto seqs = testing::random_corpus(vocab, 1, 1 + std::size_t(trial % 5), rng);
      const TokenSeq prefix = seqs[0];
      const Vector hard = next_dist(*m, prefix);
      CHECK(std::abs(hard.sum() - 1.0) < 1e-9);
      CHECK(hard.minCoeff() >= 0.0);
      // Split prefix into a hard left context and a one-hot soft tail.
      const std::size_t cut = std::size_t(trial) % prefix.size();
      const TokenSeq left(prefix.begin(), prefix.begin() + long(cut));
      const TokenSeq tail(prefix.begin() + long(cut), prefix.end());
      const Vector soft = next_dist_soft(*m, SoftSequence::one_hot(tail, vocab.size()), left);
      CHECK((soft - hard).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("soft prefix: scalar mixture oracle") {
  const auto vocab = testing::small_vocab(10);
  std::mt19937_64 rng(8);
  const auto m = testing::small_lm(vocab, Direction::forward, 5, 3);
  const SoftSequence y(testing::random_matrix(3, 10, rng, 2.0));
  const Matrix probs = y.probabilities();
  const Vector got = next_dist_soft(*m, y, {vocab.bos(), 4});
  // Context is the last two soft rows.
  const auto want = scalar_predict(*m, probs.bottomRows(2));
  for (std::size_t v = 0; v < 10; ++v) CHECK(std::abs(got[Eigen::Index(v)] - want[v]) < 1e-12);
  CHECK(std::abs(got.sum() - 1) < 1e-9);
  // A one-token soft prefix mixes the hard left context in.
  const SoftSequence one(y.logits.topRows(1));
  Matrix ctx(2, 10);
  ctx.row(0) = one_hot_rows({4}, 10).row(0);
  ctx.row(1) = probs.row(0);
  const auto want1 = scalar_predict(*m, ctx);
  const Vector got1 = next_dist_soft(*m, one, {vocab.bos(), 4});
  for (std::size_t v = 0; v < 10; ++v) CHECK(std::abs(got1[Eigen::Index(v)] - want1[v]) < 1e-12);
  CHECK_THROWS_AS(next_dist_soft(*m, SoftSequence(Matrix::Constant(1, 10, NAN)), {}), NumericError);
}

TEST_CASE("hard predictions match the scalar oracle on one-hot rows") {
  const auto vocab = testing::small_vocab(9);
  const auto m = testing::small_lm(vocab, Direction::forward, 12, 3);
  const TokenSeq ctx{5, 6};
  const auto want = scalar_predict(*m, one_hot_rows(ctx, 9));
  const Vector got = m->predict_hard(ctx);
  for (std::size_t v = 0; v < 9; ++v) CHECK(std::abs(got[Eigen::Index(v)] - want[v]) < 1e-12);
}

TEST_CASE("perplexity: deterministic model, scalar oracle, infinite case") {
  const auto vocab = Vocabulary::from_tokens({"a", "b"});
  const TokenId a = vocab.id("a"), b = vocab.id("b");
  ToyLMConfig cfg;
  cfg.order = 2;
  cfg.add_k = 0.0;
  cfg.neural_weight = 0.0;
  const auto det = train_toy_lm({{a, b}}, vocab, Direction::forward, cfg, 1);
  CHECK(std::abs(perplexity(*det, {vocab.bos(), a, b, vocab.eos()}) - 1.0) < 1e-12);
  CHECK_THROWS_WITH_AS(perplexity(*det, {vocab.bos(), b}), "infinite perplexity", NumericError);

  const auto twelve = testing::small_vocab(12);
  const auto m = testing::small_lm(twelve, Direction::forward, 31, 3);
  const TokenSeq seq{twelve.bos(), 4, 7, 3, 9, 4, twelve.eos()};
  double nll = 0;
  for (std::size_t t = 1; t < seq.size(); ++t) {
    const TokenId c0 = t >= 2 ? seq[t - 2] : twelve.bos();
    const auto p = scalar_predict(*m, one_hot_rows({c0, seq[t - 1]}, 12));
    nll -= std::log(p[seq[t]]);
  }
  const double want = std::exp(nll / double(seq.size() - 1));
  CHECK(std::abs(perplexity(*m, seq) - want) < 1e-10 * want);
  CHECK(perplexity(*m, seq) >= 1.0);
  // Conditional form scores only the tail.
  double tail = 0;
  for (std::size_t t = 4; t < seq.size(); ++t) tail -= std::log(next_dist(*m, TokenSeq(seq.begin(), seq.begin() + long(t)))[Eigen::Index(seq[t])]);
  CHECK(std::abs(conditional_perplexity(*m, seq, 4) - std::exp(tail / 3.0)) < 1e-10);
  CHECK_THROWS_AS(perplexity(*m, {4}), PreconditionError);
}

TEST_CASE("logits_of replays the forward pass; greedy continuation") {
  const auto vocab = testing::small_vocab(11);
  const auto m = testing::small_lm(vocab, Direction::forward, 2, 3);
  const TokenSeq seq{5, 8, 3, 10};
  const auto l = logits_of(*m, seq);
  REQUIRE(l.length() == seq.size());
  TokenSeq prefix{vocab.bos()};
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const Vector p = next_dist(*m, prefix);
    for (Eigen::Index v = 0; v < 11; ++v) CHECK(std::abs(l.logits(Eigen::Index(t), v) - std::log(p[v])) < 1e-12);
    CHECK(std::abs(l.probabilities().row(Eigen::Index(t)).sum() - 1.0) < 1e-9);
    prefix.push_back(seq[t]);
  }
  const auto [rows, toks] = greedy_continuation(*m, {vocab.bos(), 5}, 4);
  REQUIRE(toks.size() == 4);
  TokenSeq ctx{vocab.bos(), 5};
  for (std::size_t t = 0; t < 4; ++t) {
    Eigen::Index best = 0;
    next_dist(*m, ctx).maxCoeff(&best);
    CHECK(toks[t] == TokenId(best));
    CHECK(rows.argmax()[t] == toks[t]);
    ctx.push_back(toks[t]);
  }
}

TEST_CASE("one repeated bigram: P(b|a) -> 1 as smoothing vanishes") {
  const auto vocab = Vocabulary::from_tokens({"a", "b"});
  const TokenId a = vocab.id("a"), b = vocab.id("b");
  std::vector<TokenSeq> corpus(20, TokenSeq{a, b});
  double prev = 0;
  for (double k : {1.0, 0.1, 0.01, 1e-4, 0.0}) {
    ToyLMConfig cfg;
    cfg.order = 2;
    cfg.add_k = k;
    cfg.neural_weight = 0;
    const double p = next_dist(*train_toy_lm(corpus, vocab, Direction::forward, cfg, 0), {a})[Eigen::Index(b)];
    CHECK(p > prev);
    prev = p;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("palindromic corpus: forward and backward tables agree") {
  const auto vocab = testing::small_vocab(8);
  const std::vector<TokenSeq> corpus{{3, 4, 5, 4, 3}, {6, 7, 6}, {5, 5}};
  ToyLMConfig cfg;
  cfg.epochs = 1;
  const auto f = train_toy_lm(corpus, vocab, Direction::forward, cfg, 1);
  const auto b = train_toy_lm(corpus, vocab, Direction::backward, cfg, 1);
  REQUIRE(f->table().size() == b->table().size());
  for (std::size_t i = 0; i < f->table().size(); ++i) {
    CHECK(f->table()[i].context == b->table()[i].context);
    CHECK(f->table()[i].next == b->table()[i].next);
    CHECK(f->table()[i].total == b->table()[i].total);
  }
  CHECK(b->direction() == Direction::backward);
}

TEST_CASE("backward model is trained on reversed sequences") {
  const auto vocab = Vocabulary::from_tokens({"a", "b", "c"});
  const TokenId a = vocab.id("a"), b = vocab.id("b"), c = vocab.id("c");
  ToyLMConfig cfg;
  cfg.order = 2;
  cfg.add_k = 0;
  cfg.neural_weight = 0;
  const auto bwd = train_toy_lm({{a, b, c}}, vocab, Direction::backward, cfg, 0);
  CHECK(bwd->table_prob({c}, b) == 1.0);
  CHECK(bwd->table_prob({vocab.bos()}, c) == 1.0);
  CHECK(bwd->table_prob({a}, vocab.eos()) == 1.0);
}

TEST_CASE("training is deterministic given the seed; save/load roundtrip") {
  const auto vocab = testing::small_vocab(10);
  const auto m1 = testing::small_lm(vocab, Direction::forward, 99);
  const auto m2 = testing::small_lm(vocab, Direction::forward, 99);
  const auto m3 = testing::small_lm(vocab, Direction::forward, 100);
  CHECK(m1->to_json() == m2->to_json());
  CHECK(m1->net().params() != m3->net().params());
  const auto path = testing::scratch_dir("lm") / "m.json";
  m1->save(path);
  const auto back = load_model(path);
  CHECK(back->to_json() == m1->to_json());
  CHECK(next_dist(*back, {4, 5}) == next_dist(*m1, {4, 5}));
  CHECK_THROWS_AS(train_toy_lm({}, vocab, Direction::forward, {}, 0), PreconditionError);
}

TEST_CASE("gradient of log next_dist_soft matches finite differences") {
  std::mt19937_64 rng(123);
  int checked = 0;
  for (std::size_t V : {6u, 11u, 16u})
    for (std::size_t T = 1; T <= 5; ++T)
      for (int order : {2, 3, 4}) {
        const auto vocab = testing::small_vocab(V);
        const auto m = testing::small_lm(vocab, order % 2 ? Direction::forward : Direction::backward, T * 31 + V, order);
        const SoftSequence y(testing::random_matrix(Eigen::Index(T), Eigen::Index(V), rng));
        const TokenSeq left{vocab.bos(), 3};
        const TokenId target = 3 + (T % (V - 3));
        for (double tau : {1.0, 0.7}) {
          const auto f = [&](const Matrix& x) { return std::log(next_dist_soft(*m, SoftSequence(x), left, tau)[Eigen::Index(target)]); };
          const Vector p = next_dist_soft(*m, y, left, tau);
          Vector up = Vector::Zero(Eigen::Index(V));
          up[Eigen::Index(target)] = 1.0 / p[Eigen::Index(target)];
          const Matrix ana = next_dist_soft_backward(*m, y, left, up, tau);
          const Matrix num = testing::numeric_grad(f, y.logits);
          CAPTURE(V);
          CAPTURE(T);
          CAPTURE(order);
          CHECK(testing::rel_error(ana, num) <= 1e-4);
          ++checked;
        }
      }
  CHECK(checked == 90);
}
