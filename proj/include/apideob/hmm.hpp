#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "apideob/matrix.hpp"

namespace apideob {

using TokenSequence = std::vector<std::size_t>;

inline constexpr double kProbabilityFloor = 1e-8;

// Categorical-emission HMM lambda = (pi, A, B) in linear space.
// A(i, j) = P(s_t = j | s_{t-1} = i); B(k, w) = P(y_t = w | s_t = k).
struct HmmParams {
  std::size_t K = 0;
  std::size_t W_total = 0;
  std::vector<double> pi;
  Matrix A;
  Matrix B;
  std::vector<double> train_loglik_trace;

  // Throws ValidationError unless every distribution is non-negative and
  // sums to one within `tol`.
  void validate(double tol = 1e-9) const;
};

// Log-space copy of the parameters used by the recursions. Emission logs are
// stored token-major so a step reads one contiguous K-vector. Each step
// shifts by the running maximum and sums against the linear transitions,
// which needs K exponentials instead of K^2.
class LogHmm {
 public:
  explicit LogHmm(const HmmParams& p);

  std::size_t K() const { return K_; }
  std::size_t W() const { return W_; }
  double log_pi(std::size_t k) const { return log_pi_[k]; }
  double log_a(std::size_t i, std::size_t j) const { return log_a_(i, j); }
  double a(std::size_t i, std::size_t j) const { return a_(i, j); }
  std::span<const double> log_emit(std::size_t token) const { return log_b_t_.row(token); }

 private:
  std::size_t K_;
  std::size_t W_;
  std::vector<double> log_pi_;
  Matrix log_a_;
  Matrix a_;
  Matrix log_b_t_;  // W x K
};

double logsumexp(std::span<const double> xs);

struct PosteriorSummary {
  std::vector<double> log_filtered;  // log P(s_T | y_1:T)
  double loglik_full = 0.0;          // log P(y_1:T)
  double loglik_prefix = 0.0;        // log P(y_1:T-1); 0 when T = 1
};

PosteriorSummary forward(const HmmParams& p, std::span<const std::size_t> y);
// `inner_steps`, when given, accumulates the number of transition terms
// evaluated (K^2 per observation after the first).
PosteriorSummary forward(const LogHmm& h, std::span<const std::size_t> y,
                         std::size_t* inner_steps = nullptr);

// T x K matrix of posteriors gamma_t(k) = P(s_t = k | y_1:T).
Matrix forward_backward(const HmmParams& p, std::span<const std::size_t> y);

struct SequenceStats {
  Matrix gamma;  // T x K
  Matrix xi;     // K x K, summed over t
  double loglik = 0.0;
};

SequenceStats sequence_stats(const LogHmm& h, std::span<const std::size_t> y);

struct ExpectedCounts {
  std::vector<double> initial;  // K
  Matrix transitions;           // K x K
  Matrix emissions;             // K x W
  double loglik = 0.0;
};

namespace kernels {

// E-step over every sequence. Both variants reduce per-sequence statistics
// in sequence order, so their results are bit-identical.
ExpectedCounts estep_serial(const LogHmm& h, const std::vector<TokenSequence>& seqs);
ExpectedCounts estep_parallel(const LogHmm& h, const std::vector<TokenSequence>& seqs);

}  // namespace kernels

// Smoothed re-estimation: (count + eps) / (total + n * eps) per row, then every
// entry floored at eps with the excess taken from the row's largest entry.
HmmParams m_step(const ExpectedCounts& counts, double eps = kProbabilityFloor);

// Rows drawn from Dirichlet(1).
HmmParams random_hmm(std::size_t K, std::size_t W_total, std::uint64_t seed);

struct BaumWelchOptions {
  std::size_t max_iters = 200;
  double tol = 1e-6;
  double smoothing = kProbabilityFloor;
  bool parallel = true;
};

// Multi-sequence EM. Stops once the total log-likelihood improves by less
// than `tol` or after `max_iters` M-steps. The returned parameters are the
// ones whose log-likelihood is train_loglik_trace.back().
HmmParams baum_welch(const std::vector<TokenSequence>& seqs, std::size_t K, std::size_t W_total,
                     std::uint64_t seed, const BaumWelchOptions& opts = {});

std::vector<TokenSequence> sample_hmm(const HmmParams& p, std::size_t count, std::size_t length,
                                      std::uint64_t seed);

// Power iteration on A from the uniform distribution.
std::vector<double> stationary_distribution(const HmmParams& p);

}  // namespace apideob
