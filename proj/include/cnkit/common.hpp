#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cnkit {

using Vector = Eigen::VectorXd;
// Row-major so that a row (one position of a soft sequence) is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// A value became NaN/inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

void require(bool condition, std::string_view message);

/// Softmax of `logits / temperature`, stabilized by max-subtraction.
Vector softmax_temp(const Vector& logits, double temperature = 1.0);

/// log(softmax(logits)) computed via log-sum-exp.
Vector log_softmax(const Vector& logits);

double log_sum_exp(const Vector& logits);

/// Vector-Jacobian product of softmax(y / temperature): given the probabilities
/// `probs` and an upstream gradient d/dprobs, returns d/dy.
Vector softmax_backward(const Vector& probs, const Vector& grad_probs, double temperature = 1.0);

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

/// Deterministic sub-seed derivation (splitmix64 over master seed and stream tag).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis = 14695981039346656037ULL);

}  // namespace cnkit
