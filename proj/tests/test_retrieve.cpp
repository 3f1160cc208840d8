#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <tuple>

#include "cnkit/retrieve.hpp"
#include "support.hpp"

using namespace cnkit;
using namespace cnkit::retrieve;
using corpus::Comment;
using corpus::HateSpeechSample;
using corpus::KnowledgeRepository;
using corpus::Post;

namespace {

struct Fixture {
  KnowledgeRepository repo;
  embed::EmbeddingTable stance{4}, semantic{4};
  HateSpeechSample hs{"hs1", "they are a threat to us all.", "MIGRANTS"};
};

// Posts and comments draw their vectors from small pools so that exact score
// ties are common.
Fixture synthetic(std::size_t n_posts, std::size_t comments_per_post, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Matrix post_pool = testing::random_matrix(25, 4, rng), comment_pool = testing::random_matrix(15, 4, rng);
  std::uniform_int_distribution<int> pp(0, 24), cp(0, 14);
  Fixture f;
  std::vector<Post> posts;
  std::vector<Comment> comments;
  const char* words[] = {"Evidence matters here.", "Most people work hard. They pay taxes.", "Crime fell last year!",
                         "Talk to your neighbours. Listen first.", "Numbers do not lie."};
  for (std::size_t i = 0; i < n_posts; ++i) {
    Post p;
    p.id = "p" + std::to_string(1000 + (i * 7919) % n_posts);  // ids not in ingestion order
    p.title = "post " + p.id;
    p.body = "body";
    posts.push_back(p);
    f.stance.set(p.id, post_pool.row(pp(rng)).transpose());
    for (std::size_t k = 0; k < comments_per_post; ++k) {
      Comment c;
      c.id = p.id + "-c" + std::to_string(k);
      c.post_id = p.id;
      c.body = words[(i + k) % 5];
      comments.push_back(c);
      f.semantic.set(c.id, comment_pool.row(cp(rng)).transpose());
    }
  }
  f.stance.set("hs1", testing::random_matrix(4, 1, rng).col(0));
  f.semantic.set("hs1", testing::random_matrix(4, 1, rng).col(0));
  f.repo = KnowledgeRepository(std::move(posts), std::move(comments));
  return f;
}

using Ranked = std::vector<std::pair<std::string, double>>;

Ranked sort_cut(Ranked items, std::size_t k, bool ascending) {
  std::sort(items.begin(), items.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return ascending ? a.second < b.second : a.second > b.second;
    return a.first < b.first;
  });
  if (items.size() > k) items.resize(k);
  return items;
}

Ranked brute_posts(const Fixture& f, const RetrievalConfig& cfg) {
  Ranked all;
  for (const auto& [id, v] : f.stance.rows())
    if (f.repo.find_post(id)) all.emplace_back(id, embed::cosine(v, *f.stance.find("hs1")));
  return sort_cut(all, cfg.k1, false);
}

Ranked brute_comments(const Fixture& f, const RetrievalConfig& cfg, const Ranked& posts) {
  Ranked all;
  for (const auto& c : f.repo.comments())
    for (const auto& [pid, sta] : posts)
      if (pid == c.post_id) {
        double chi = 0;
        if (cfg.alpha != 0) chi += cfg.alpha * embed::cosine(*f.semantic.find(c.id), *f.semantic.find("hs1"));
        if (cfg.beta != 0) chi += cfg.beta * sta;
        all.emplace_back(c.id, chi);
      }
  return sort_cut(all, cfg.k2, false);
}

double brute_fit(const lm::LanguageModel& m, const std::string& sentence, const std::string& hs, const RetrievalConfig& cfg) {
  TokenSeq seq{m.vocab().bos()};
  for (const auto& t : tokenize(hs)) seq.push_back(m.vocab().id(t));
  for (const auto& t : tokenize(cfg.counter_prompt)) seq.push_back(m.vocab().id(t));
  for (const auto& t : tokenize(sentence)) seq.push_back(m.vocab().id(t));
  double nll = 0;
  for (std::size_t t = 1; t < seq.size(); ++t) nll -= std::log(lm::next_dist(m, TokenSeq(seq.begin(), seq.begin() + long(t)))[Eigen::Index(seq[t])]);
  return std::exp(nll / double(seq.size() - 1));
}

Ranked as_ranked(const std::vector<ScoredItem>& items) {
  Ranked out;
  for (const auto& i : items) out.emplace_back(i.id, i.score);
  return out;
}

std::unique_ptr<lm::ToyLM> repo_lm(const KnowledgeRepository& repo, const std::string& extra, Vocabulary& vocab) {
  std::vector<std::vector<std::string>> texts{tokenize(extra), tokenize(std::string(kCounterPrompt))};
  for (const auto& c : repo.comments()) texts.push_back(tokenize(c.body));
  vocab = Vocabulary::build(texts);
  std::vector<TokenSeq> corpus;
  for (const auto& t : texts) {
    TokenSeq s;
    for (const auto& w : t) s.push_back(vocab.id(w));
    corpus.push_back(s);
  }
  lm::ToyLMConfig cfg;
  cfg.embed_dim = 4;
  cfg.hidden_dim = 8;
  cfg.epochs = 2;
  return lm::train_toy_lm(corpus, vocab, lm::Direction::forward, cfg, 3);
}

}  // namespace

TEST_CASE("config invariants and defaults") {
  RetrievalConfig c;
  CHECK(c.k1 == 30);
  CHECK(c.k2 == 10);
  CHECK(c.k3 == 10);
  CHECK(c.counter_prompt == "However, I disagree.");
  CHECK(c.violations().empty());
  c.k2 = 31;
  CHECK(!c.violations().empty());
  RetrievalConfig w;
  w.alpha = w.beta = 0;
  CHECK_THROWS_AS(w.validate(), PreconditionError);
  RetrievalConfig k3;
  k3.k3 = 0;
  CHECK(!k3.violations().empty());
}

TEST_CASE("sta_score: identical and orthogonal inputs, vector-file oracle") {
  Fixture f = synthetic(3, 1, 1);
  const TableSource src(f.stance, f.semantic);
  const Post& p = f.repo.posts()[0];
  CHECK(sta_score(p, f.hs, src) == embed::cosine(*f.stance.find(p.id), *f.stance.find("hs1")));
  embed::EmbeddingTable same(2), sem(2);
  Vector a(2), b(2);
  a << 1, 0;
  b << 0, 2;
  same.set(p.id, a);
  same.set("hs1", a);
  CHECK(sta_score(p, f.hs, TableSource(same, sem)) == doctest::Approx(1.0));
  same.set("hs1", b);
  CHECK(sta_score(p, f.hs, TableSource(same, sem)) == 0.0);
  const embed::Encoder enc(embed::EncoderKind::stance, {});
  const EncoderSource es(enc, enc);
  Post q = p;
  q.title = f.hs.text;
  q.body = "";
  CHECK(sta_score(q, f.hs, es) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(TableSource(embed::EmbeddingTable(2), sem).hs_stance(f.hs), PreconditionError);
}

TEST_CASE("select_posts / select_comments / ssf equal brute force on a 200-post fixture") {
  const auto start = std::chrono::steady_clock::now();
  Fixture f = synthetic(200, 4, 7);
  const TableSource src(f.stance, f.semantic);
  Vocabulary vocab;
  const auto lm = repo_lm(f.repo, f.hs.text, vocab);
  for (auto [k1, k2, k3, alpha, beta] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t, double, double>>{
           {30, 10, 10, 0.5, 0.5}, {200, 200, 1000, 0.5, 0.5}, {5, 5, 3, 1.0, 0.0}, {40, 25, 7, 0.0, 1.0}, {12, 3, 2, 0.3, 0.9}}) {
    RetrievalConfig cfg;
    cfg.k1 = k1;
    cfg.k2 = k2;
    cfg.k3 = k3;
    cfg.alpha = alpha;
    cfg.beta = beta;
    const auto posts = select_posts(f.repo, f.hs, cfg, src);
    const Ranked want_posts = brute_posts(f, cfg);
    CHECK(as_ranked(posts) == want_posts);
    CHECK(posts.size() == std::min<std::size_t>(k1, 200));
    const auto comments = select_comments(f.repo, posts, f.hs, cfg, src);
    const Ranked want_comments = brute_comments(f, cfg, want_posts);
    CHECK(as_ranked(comments) == want_comments);
    Ranked all_sentences;
    for (const auto& [cid, chi] : want_comments)
      for (std::size_t si : f.repo.sentences_of(cid)) {
        const auto& s = f.repo.sentences()[si];
        all_sentences.emplace_back(s.id(), brute_fit(*lm, s.text, f.hs.text, cfg));
      }
    const Ranked want = sort_cut(all_sentences, k3, true);
    const auto got = ssf(f.repo, f.hs, cfg, src, *lm);
    REQUIRE(got.ranked.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(got.ranked[i].sentence_id == want[i].first);
      CHECK(std::abs(got.ranked[i].fit - want[i].second) < 1e-9 * want[i].second);
    }
  }
  // Ties are actually exercised.
  std::set<double> distinct;
  for (const auto& p : select_posts(f.repo, f.hs, RetrievalConfig{200, 10, 10}, src)) distinct.insert(p.score);
  CHECK(distinct.size() < 200);
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::minutes(1));
}

TEST_CASE("ties resolve by ascending id") {
  embed::EmbeddingTable st(2), sem(2);
  Vector v(2), h(2);
  v << 1, 1;
  h << 1, 0;
  std::vector<Post> posts;
  std::vector<Comment> comments;
  for (std::string id : {"pz", "pa", "pm"}) {
    posts.push_back({id, "t", "b", {}, 0});
    st.set(id, v);
    comments.push_back({"c" + id, id, "Same text.", 0, 0, false});
    sem.set("c" + id, v);
  }
  st.set("x", h);
  sem.set("x", h);
  const KnowledgeRepository repo(posts, comments);
  const TableSource src(st, sem);
  const HateSpeechSample x{"x", "text", "T"};
  RetrievalConfig cfg;
  const auto p = select_posts(repo, x, cfg, src);
  REQUIRE(p.size() == 3);
  CHECK(p[0].id == "pa");
  CHECK(p[1].id == "pm");
  CHECK(p[2].id == "pz");
  const auto c = select_comments(repo, p, x, cfg, src);
  CHECK(c[0].id == "cpa");
  CHECK(c[2].id == "cpz");
  const lm::UniformLM u(Vocabulary::from_tokens({"same", "text", "."}));
  const auto k = ssf(repo, x, cfg, src, u);
  REQUIRE(k.ranked.size() == 3);
  CHECK(k.ranked[0].sentence_id == "cpa#0");
}

TEST_CASE("chi_score weight degeneracies and scalar oracle") {
  Fixture f = synthetic(2, 2, 3);
  const TableSource src(f.stance, f.semantic);
  const Comment& c = f.repo.comments()[0];
  const Post& p = *f.repo.find_post(c.post_id);
  const double sem = embed::cosine(*f.semantic.find(c.id), *f.semantic.find("hs1"));
  const double sta = embed::cosine(*f.stance.find(p.id), *f.stance.find("hs1"));
  RetrievalConfig cfg;
  cfg.alpha = 1;
  cfg.beta = 0;
  CHECK(chi_score(c, p, f.hs, cfg, src) == sem);
  cfg.alpha = 0;
  cfg.beta = 1;
  CHECK(chi_score(c, p, f.hs, cfg, src) == sta);
  cfg.alpha = cfg.beta = 0.5;
  CHECK(std::abs(chi_score(c, p, f.hs, cfg, src) - (0.5 * sem + 0.5 * sta)) < 1e-15);
}

TEST_CASE("select_comments: single comment, nothing upstream") {
  Fixture f = synthetic(1, 1, 2);
  const TableSource src(f.stance, f.semantic);
  RetrievalConfig cfg;
  const auto posts = select_posts(f.repo, f.hs, cfg, src);
  const auto comments = select_comments(f.repo, posts, f.hs, cfg, src);
  REQUIRE(comments.size() == 1);
  CHECK(comments[0].id == f.repo.comments()[0].id);
  CHECK(select_comments(f.repo, {}, f.hs, cfg, src).empty());
  // Posts whose comments were all filtered out.
  const KnowledgeRepository bare(f.repo.posts(), {});
  CHECK(select_comments(bare, select_posts(bare, f.hs, cfg, src), f.hs, cfg, src).empty());
  CHECK(ssf(bare, f.hs, cfg, src, lm::UniformLM(Vocabulary())).empty());
}

TEST_CASE("fit_score examples") {
  const auto vocab = Vocabulary::from_tokens({"however", ",", "i", "disagree", ".", "they", "work", "hard"});
  const lm::UniformLM u(vocab);
  RetrievalConfig cfg;
  CHECK(std::abs(fit_score("They work hard.", "they work", cfg, u) - double(vocab.size())) < 1e-9);
  CHECK_THROWS_AS(fit_score("", "they work", cfg, u), PreconditionError);
  const auto [seq, first] = fit_sequence(vocab, "hard", "they", cfg);
  CHECK(seq.front() == vocab.bos());
  CHECK(first == 1 + 1 + 5);
  CHECK(seq[first] == vocab.id("hard"));
}

TEST_CASE("fit_score: greedy continuation beats a random sentence") {
  const auto repo = corpus::filter_comments(corpus::ingest_file(testing::data_dir() / "mini_corpus.jsonl").repo);
  const std::string hs = "Migrants steal our jobs and bring crime to our cities.";
  Vocabulary vocab;
  const auto lm = repo_lm(repo, hs, vocab);
  RetrievalConfig cfg;
  const auto [seq, first] = fit_sequence(vocab, "x", hs, cfg);
  const TokenSeq prefix(seq.begin(), seq.begin() + long(first));
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<TokenId> pick(3, vocab.size() - 1);
  for (std::size_t len : {3u, 5u}) {
    // Most probable word at each step, specials excluded since text cannot carry them.
    TokenSeq ctx = prefix;
    std::vector<std::string> g, r;
    for (std::size_t i = 0; i < len; ++i) {
      Vector p = lm::next_dist(*lm, ctx);
      p.head(3).setConstant(-1);
      Eigen::Index best = 0;
      p.maxCoeff(&best);
      ctx.push_back(TokenId(best));
      g.push_back(vocab.token(TokenId(best)));
      r.push_back(vocab.token(pick(rng)));
    }
    CHECK(fit_score(detokenize(g), hs, cfg, *lm) < fit_score(detokenize(r), hs, cfg, *lm));
  }
}

TEST_CASE("infinite FIT ranks last") {
  const auto vocab = Vocabulary::from_tokens({"a", "b"});
  lm::ToyLMConfig c;
  c.order = 2;
  c.add_k = 0;
  c.neural_weight = 0;
  const auto m = lm::train_toy_lm({{vocab.id("a"), vocab.id("b")}, {vocab.id("b"), vocab.id("a")}}, vocab, lm::Direction::forward, c, 0);
  RetrievalConfig cfg;
  cfg.counter_prompt = "a";
  CHECK(fit_score("a", "b", cfg, *m) == kInfiniteFit);  // a -> a never seen
  CHECK(std::isfinite(fit_score("b", "b", cfg, *m)));
}

TEST_CASE("ssf on the mini corpus: layer monotonicity, provenance, determinism") {
  const auto repo = corpus::filter_comments(corpus::ingest_file(testing::data_dir() / "mini_corpus.jsonl").repo);
  const auto hs = corpus::read_hate_speech_file(testing::data_dir() / "hs.jsonl");
  embed::EncoderConfig ec;
  const embed::Encoder stance(embed::EncoderKind::stance, ec), semantic(embed::EncoderKind::semantic, ec);
  const EncoderSource src(stance, semantic);
  Vocabulary vocab;
  const auto lm = repo_lm(repo, hs[0].text + " " + hs[1].text + " " + hs[2].text + " " + hs[3].text, vocab);
  RetrievalConfig cfg;
  cfg.k1 = 8;
  cfg.k2 = 5;
  cfg.k3 = 6;
  for (const auto& x : hs) {
    const auto posts = select_posts(repo, x, cfg, src);
    const auto comments = select_comments(repo, posts, x, cfg, src);
    const auto k = ssf(repo, x, cfg, src, *lm);
    CHECK(!k.empty());
    CHECK(k.ranked.size() <= cfg.k3);
    for (const auto& item : k.ranked) {
      const auto c = std::find_if(comments.begin(), comments.end(), [&](const ScoredItem& s) { return s.id == item.comment_id; });
      REQUIRE(c != comments.end());
      CHECK(c->score == item.chi);
      const auto p = std::find_if(posts.begin(), posts.end(), [&](const ScoredItem& s) { return s.id == item.post_id; });
      REQUIRE(p != posts.end());
      CHECK(p->score == item.sta);
      CHECK(repo.find_comment(item.comment_id)->post_id == item.post_id);
      CHECK(std::abs(item.fit - brute_fit(*lm, item.text, x.text, cfg)) < 1e-9 * item.fit);
    }
    for (std::size_t i = 1; i < k.ranked.size(); ++i) CHECK(k.ranked[i - 1].fit <= k.ranked[i].fit);
    const auto again = ssf(repo, x, cfg, src, *lm);
    REQUIRE(again.ranked.size() == k.ranked.size());
    for (std::size_t i = 0; i < k.ranked.size(); ++i) CHECK(again.ranked[i].sentence_id == k.ranked[i].sentence_id);
  }
}

TEST_CASE("ssf: one sentence repository and empty repository") {
  const KnowledgeRepository one({{"p", "Title", "body", {"T"}, 1}}, {{"c", "p", "Only sentence here.", 1, 0, false}});
  const embed::Encoder enc(embed::EncoderKind::semantic, {});
  const embed::Encoder st(embed::EncoderKind::stance, {});
  const EncoderSource src(st, enc);
  const HateSpeechSample x{"h", "some hate", "T"};
  const lm::UniformLM u(Vocabulary::from_tokens({"only", "sentence", "here", "."}));
  const auto k = ssf(one, x, {}, src, u);
  REQUIRE(k.ranked.size() == 1);
  CHECK(k.best().sentence_id == "c#0");
  CHECK(k.best().sta == doctest::Approx(sta_score(one.posts()[0], x, src)));
  CHECK(k.best().fit == doctest::Approx(double(u.vocab_size())));
  CHECK_THROWS_AS(ssf(KnowledgeRepository(), x, {}, src, u), NoCounterKnowledge);
  CHECK_THROWS_AS(CounterKnowledge{}.best(), NoCounterKnowledge);
}
