#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cnkit/classifier.hpp"
#include "cnkit/common.hpp"
#include "cnkit/energy.hpp"
#include "cnkit/lm.hpp"
#include "cnkit/text.hpp"

namespace testing {

using cnkit::Matrix;
using cnkit::Vector;

inline std::filesystem::path data_dir() { return CNKIT_DATA_DIR; }
inline std::filesystem::path fixture_dir() { return CNKIT_FIXTURE_DIR; }

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cnkit-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Central differences of a scalar function of a matrix.
inline Matrix numeric_grad(const std::function<double(const Matrix&)>& f, Matrix x, double h = 1e-5) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double saved = x(i, j);
      x(i, j) = saved + h;
      const double up = f(x);
      x(i, j) = saved - h;
      const double down = f(x);
      x(i, j) = saved;
      g(i, j) = (up - down) / (2 * h);
    }
  return g;
}

inline Vector numeric_grad(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f(x);
    x[i] = saved - h;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
template <typename A, typename B>
double rel_error(const A& a, const B& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale < 1e-12) return (a - b).norm();
  return (a - b).norm() / scale;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

/// Vocabulary with specials plus words w0..w{n-4}; size n.
inline cnkit::Vocabulary small_vocab(std::size_t n) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i + 3 < n; ++i) words.push_back("w" + std::to_string(i));
  return cnkit::Vocabulary::from_tokens(words);
}

/// Random token sequences over the non-special ids of `vocab`.
inline std::vector<cnkit::TokenSeq> random_corpus(const cnkit::Vocabulary& vocab, std::size_t sentences,
                                                  std::size_t length, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(3, vocab.size() - 1);
  std::vector<cnkit::TokenSeq> out(sentences);
  for (auto& s : out)
    for (std::size_t i = 0; i < length; ++i) s.push_back(pick(rng));
  return out;
}

/// A small trained toy LM (count table + neural part) for gradient tests.
inline std::unique_ptr<cnkit::lm::ToyLM> small_lm(const cnkit::Vocabulary& vocab, cnkit::lm::Direction dir,
                                                  std::uint64_t seed, int order = 3) {
  std::mt19937_64 rng(seed);
  cnkit::lm::ToyLMConfig cfg;
  cfg.order = order;
  cfg.embed_dim = 4;
  cfg.hidden_dim = 6;
  cfg.epochs = 2;
  return cnkit::lm::train_toy_lm(random_corpus(vocab, 12, 6, rng), vocab, dir, cfg, seed);
}

/// x of 3 random words, x_left = <bos> + x + one prompt word, random y*.
inline cnkit::energy::Problem random_problem(const cnkit::Vocabulary& vocab, std::mt19937_64& rng, std::size_t ystar_len) {
  std::uniform_int_distribution<cnkit::TokenId> pick(3, vocab.size() - 1);
  cnkit::energy::Problem p;
  for (int i = 0; i < 3; ++i) p.x.push_back(pick(rng));
  p.x_left = {vocab.bos()};
  p.x_left.insert(p.x_left.end(), p.x.begin(), p.x.end());
  p.x_left.push_back(pick(rng));
  for (std::size_t i = 0; i < ystar_len; ++i) p.y_star.push_back(pick(rng));
  return p;
}

/// Forward/backward toy LMs and an untrained classifier over one vocabulary.
struct ToyStack {
  cnkit::Vocabulary vocab;
  std::unique_ptr<cnkit::lm::ToyLM> fwd, bwd;
  cnkit::classifier::CNClassifier clf;
  std::unique_ptr<cnkit::energy::Components> comps;

  ToyStack(std::size_t vocab_size, std::uint64_t seed, int order = 3) : vocab(small_vocab(vocab_size)) {
    fwd = small_lm(vocab, cnkit::lm::Direction::forward, seed, order);
    bwd = small_lm(vocab, cnkit::lm::Direction::backward, seed + 1, order);
    cnkit::classifier::ClassifierConfig c;
    c.feature_dim = 24;
    c.hidden_dim = 6;
    c.rep_dim = 4;
    c.seed = seed + 2;
    clf = cnkit::classifier::CNClassifier(c);
    comps = std::make_unique<cnkit::energy::Components>(*fwd, *bwd, clf);
  }
};

}  // namespace testing
