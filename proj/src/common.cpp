#include "cnkit/common.hpp"

#include <cmath>

namespace cnkit {

void require(bool condition, std::string_view message) {
  if (!condition) throw PreconditionError(std::string(message));
}

double log_sum_exp(const Vector& logits) {
  const double m = logits.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((logits.array() - m).exp().sum());
}

Vector softmax_temp(const Vector& logits, double temperature) {
  require(temperature > 0.0, "softmax temperature must be positive");
  require(logits.size() > 0, "softmax of empty vector");
  Vector scaled = logits / temperature;
  scaled.array() -= scaled.maxCoeff();
  // std::exp underflows to exactly 0; Eigen's vectorized exp clamps near -709.
  Vector out = scaled.unaryExpr([](double v) { return std::exp(v); });
  out /= out.sum();
  return out;
}

Vector log_softmax(const Vector& logits) {
  Vector out = logits;
  out.array() -= log_sum_exp(logits);
  return out;
}

Vector softmax_backward(const Vector& probs, const Vector& grad_probs, double temperature) {
  const double dot = probs.dot(grad_probs);
  Vector out = probs.array() * (grad_probs.array() - dot);
  return out / temperature;
}

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  return splitmix64(master ^ splitmix64(fnv1a64(stream)));
}

}  // namespace cnkit
