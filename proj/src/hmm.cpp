#include "apideob/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "apideob/listing.hpp"

namespace apideob {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_row(std::span<const double> row, double tol, const char* what) {
  double sum = 0.0;
  for (double v : row) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(std::string(what) + ": bad entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol)
    throw ValidationError(std::string(what) + ": row sums to " + std::to_string(sum));
}

double safe_log(double v) { return v > 0.0 ? std::log(v) : kNegInf; }

// Raises entries below eps to eps, taking the excess from the largest entry.
void floor_row(std::span<double> row, double eps) {
  if (eps <= 0.0 || row.empty()) return;
  auto top = std::max_element(row.begin(), row.end());
  double raised = 0.0;
  for (auto& v : row) {
    if (v < eps) {
      raised += eps - v;
      v = eps;
    }
  }
  *top -= raised;
}

void normalize_smoothed(std::span<const double> counts, std::span<double> out, double eps) {
  double total = 0.0;
  for (double c : counts) total += c;
  const double denom = total + static_cast<double>(counts.size()) * eps;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out[i] = denom > 0.0 ? (counts[i] + eps) / denom : 1.0 / static_cast<double>(counts.size());
  }
  floor_row(out, eps);
}

void check_sequence(std::span<const std::size_t> y, std::size_t W) {
  for (auto t : y)
    if (t >= W)
      throw std::invalid_argument("token index " + std::to_string(t) + " >= W_total " +
                                  std::to_string(W));
}

// out_j = log sum_i exp(alpha_i) a_ij + emit_j
void forward_step(const LogHmm& h, std::span<const double> alpha, std::span<const double> emit,
                  std::span<double> out, std::vector<double>& scratch) {
  const auto K = h.K();
  const double m = *std::max_element(alpha.begin(), alpha.end());
  if (m == kNegInf) {
    std::fill(out.begin(), out.end(), kNegInf);
    return;
  }
  scratch.resize(K);
  for (std::size_t i = 0; i < K; ++i) scratch[i] = std::exp(alpha[i] - m);
  for (std::size_t j = 0; j < K; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < K; ++i) s += scratch[i] * h.a(i, j);
    out[j] = m + safe_log(s) + emit[j];
  }
}

// out_i = log sum_j a_ij exp(emit_j + beta_j)
void backward_step(const LogHmm& h, std::span<const double> beta_next,
                   std::span<const double> emit, std::span<double> out,
                   std::vector<double>& scratch) {
  const auto K = h.K();
  scratch.resize(K);
  double m = kNegInf;
  for (std::size_t j = 0; j < K; ++j) m = std::max(m, emit[j] + beta_next[j]);
  if (m == kNegInf) {
    std::fill(out.begin(), out.end(), kNegInf);
    return;
  }
  for (std::size_t j = 0; j < K; ++j) scratch[j] = std::exp(emit[j] + beta_next[j] - m);
  for (std::size_t i = 0; i < K; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) s += h.a(i, j) * scratch[j];
    out[i] = m + safe_log(s);
  }
}

}  // namespace

void HmmParams::validate(double tol) const {
  if (K == 0 || W_total == 0) throw ValidationError("hmm: empty model");
  if (pi.size() != K || A.rows() != K || A.cols() != K || B.rows() != K || B.cols() != W_total)
    throw ValidationError("hmm: dimension mismatch");
  check_row(pi, tol, "hmm pi");
  for (std::size_t k = 0; k < K; ++k) {
    check_row(A.row(k), tol, "hmm A");
    check_row(B.row(k), tol, "hmm B");
  }
}

LogHmm::LogHmm(const HmmParams& p)
    : K_(p.K),
      W_(p.W_total),
      log_pi_(p.K),
      log_a_(p.K, p.K),
      a_(p.A),
      log_b_t_(p.W_total, p.K) {
  for (std::size_t i = 0; i < K_; ++i) {
    log_pi_[i] = safe_log(p.pi[i]);
    for (std::size_t j = 0; j < K_; ++j) log_a_(i, j) = safe_log(p.A(i, j));
    for (std::size_t w = 0; w < W_; ++w) log_b_t_(w, i) = safe_log(p.B(i, w));
  }
}

double logsumexp(std::span<const double> xs) {
  if (xs.empty()) return kNegInf;
  const double m = *std::max_element(xs.begin(), xs.end());
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

PosteriorSummary forward(const HmmParams& p, std::span<const std::size_t> y) {
  return forward(LogHmm(p), y);
}

PosteriorSummary forward(const LogHmm& h, std::span<const std::size_t> y,
                         std::size_t* inner_steps) {
  if (y.empty()) throw std::invalid_argument("forward: empty sequence");
  check_sequence(y, h.W());
  const auto K = h.K();
  std::vector<double> alpha(K), next(K), scratch(K);
  auto emit = h.log_emit(y[0]);
  for (std::size_t k = 0; k < K; ++k) alpha[k] = h.log_pi(k) + emit[k];

  PosteriorSummary out;
  for (std::size_t t = 1; t < y.size(); ++t) {
    if (t + 1 == y.size()) out.loglik_prefix = logsumexp(alpha);
    forward_step(h, alpha, h.log_emit(y[t]), next, scratch);
    if (inner_steps) *inner_steps += K * K;
    alpha.swap(next);
  }
  out.loglik_full = logsumexp(alpha);
  out.log_filtered.resize(K);
  for (std::size_t k = 0; k < K; ++k) out.log_filtered[k] = alpha[k] - out.loglik_full;
  return out;
}

SequenceStats sequence_stats(const LogHmm& h, std::span<const std::size_t> y) {
  if (y.empty()) throw std::invalid_argument("sequence_stats: empty sequence");
  check_sequence(y, h.W());
  const auto K = h.K();
  const auto T = y.size();
  Matrix alpha(T, K), beta(T, K, 0.0);
  std::vector<double> scratch(K), ea(K), eb(K);

  auto emit = h.log_emit(y[0]);
  for (std::size_t k = 0; k < K; ++k) alpha(0, k) = h.log_pi(k) + emit[k];
  for (std::size_t t = 1; t < T; ++t)
    forward_step(h, alpha.row(t - 1), h.log_emit(y[t]), alpha.row(t), scratch);
  for (std::size_t t = T - 1; t-- > 0;)
    backward_step(h, beta.row(t + 1), h.log_emit(y[t + 1]), beta.row(t), scratch);

  SequenceStats s;
  s.loglik = logsumexp(alpha.row(T - 1));
  s.gamma = Matrix(T, K);
  s.xi = Matrix(K, K, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) s.gamma(t, k) = std::exp(alpha(t, k) + beta(t, k) - s.loglik);
  }
  // xi_t(i, j) = exp(alpha_t(i) + log a_ij + log b_j(y_t+1) + beta_t+1(j) - loglik),
  // factored as ea_i * a_ij * eb_j * exp(c1 + c2 - loglik).
  for (std::size_t t = 0; t + 1 < T; ++t) {
    emit = h.log_emit(y[t + 1]);
    const auto at = alpha.row(t);
    const auto bt = beta.row(t + 1);
    const double c1 = *std::max_element(at.begin(), at.end());
    double c2 = kNegInf;
    for (std::size_t j = 0; j < K; ++j) c2 = std::max(c2, emit[j] + bt[j]);
    if (c1 == kNegInf || c2 == kNegInf) continue;
    const double scale = std::exp(c1 + c2 - s.loglik);
    for (std::size_t i = 0; i < K; ++i) ea[i] = std::exp(at[i] - c1) * scale;
    for (std::size_t j = 0; j < K; ++j) eb[j] = std::exp(emit[j] + bt[j] - c2);
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) s.xi(i, j) += ea[i] * h.a(i, j) * eb[j];
  }
  return s;
}

Matrix forward_backward(const HmmParams& p, std::span<const std::size_t> y) {
  return sequence_stats(LogHmm(p), y).gamma;
}

namespace kernels {

namespace {

ExpectedCounts reduce(const LogHmm& h, const std::vector<TokenSequence>& seqs,
                      const std::vector<SequenceStats>& stats) {
  const auto K = h.K();
  ExpectedCounts c{std::vector<double>(K, 0.0), Matrix(K, K, 0.0), Matrix(K, h.W(), 0.0), 0.0};
  for (std::size_t n = 0; n < seqs.size(); ++n) {
    const auto& s = stats[n];
    c.loglik += s.loglik;
    for (std::size_t k = 0; k < K; ++k) c.initial[k] += s.gamma(0, k);
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) c.transitions(i, j) += s.xi(i, j);
    const auto& y = seqs[n];
    for (std::size_t t = 0; t < y.size(); ++t)
      for (std::size_t k = 0; k < K; ++k) c.emissions(k, y[t]) += s.gamma(t, k);
  }
  return c;
}

}  // namespace

ExpectedCounts estep_serial(const LogHmm& h, const std::vector<TokenSequence>& seqs) {
  std::vector<SequenceStats> stats(seqs.size());
  for (std::size_t n = 0; n < seqs.size(); ++n) stats[n] = sequence_stats(h, seqs[n]);
  return reduce(h, seqs, stats);
}

ExpectedCounts estep_parallel(const LogHmm& h, const std::vector<TokenSequence>& seqs) {
  std::vector<SequenceStats> stats(seqs.size());
  const auto n = static_cast<std::ptrdiff_t>(seqs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    stats[u] = sequence_stats(h, seqs[u]);
  }
  return reduce(h, seqs, stats);
}

}  // namespace kernels

HmmParams m_step(const ExpectedCounts& c, double eps) {
  HmmParams p;
  p.K = c.initial.size();
  p.W_total = c.emissions.cols();
  p.pi.resize(p.K);
  p.A = Matrix(p.K, p.K);
  p.B = Matrix(p.K, p.W_total);
  normalize_smoothed(c.initial, p.pi, eps);
  for (std::size_t k = 0; k < p.K; ++k) {
    normalize_smoothed(c.transitions.row(k), p.A.row(k), eps);
    normalize_smoothed(c.emissions.row(k), p.B.row(k), eps);
  }
  return p;
}

HmmParams random_hmm(std::size_t K, std::size_t W_total, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gamma1(1.0);  // Gamma(1) == Exp(1)
  auto dirichlet = [&](std::span<double> row) {
    double s = 0.0;
    for (auto& v : row) s += (v = gamma1(rng));
    for (auto& v : row) v /= s;
    floor_row(row, kProbabilityFloor);
  };
  HmmParams p;
  p.K = K;
  p.W_total = W_total;
  p.pi.resize(K);
  p.A = Matrix(K, K);
  p.B = Matrix(K, W_total);
  dirichlet(p.pi);
  for (std::size_t k = 0; k < K; ++k) dirichlet(p.A.row(k));
  for (std::size_t k = 0; k < K; ++k) dirichlet(p.B.row(k));
  return p;
}

HmmParams baum_welch(const std::vector<TokenSequence>& seqs, std::size_t K, std::size_t W_total,
                     std::uint64_t seed, const BaumWelchOptions& opts) {
  if (seqs.empty()) throw std::invalid_argument("baum_welch: no sequences");
  if (K == 0) throw std::invalid_argument("baum_welch: K must be >= 1");
  for (const auto& y : seqs) {
    if (y.empty()) throw std::invalid_argument("baum_welch: empty sequence");
    check_sequence(y, W_total);
  }
  auto params = random_hmm(K, W_total, seed);
  std::vector<double> trace;
  for (std::size_t it = 0;; ++it) {
    const LogHmm h(params);
    const auto counts =
        opts.parallel ? kernels::estep_parallel(h, seqs) : kernels::estep_serial(h, seqs);
    trace.push_back(counts.loglik);
    if (it > 0 && trace[it] - trace[it - 1] < opts.tol) break;
    if (it == opts.max_iters) break;
    params = m_step(counts, opts.smoothing);
  }
  params.train_loglik_trace = std::move(trace);
  return params;
}

std::vector<TokenSequence> sample_hmm(const HmmParams& p, std::size_t count, std::size_t length,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&](std::span<const double> probs) {
    double u = unit(rng);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      u -= probs[i];
      if (u < 0.0) return i;
    }
    return probs.size() - 1;
  };
  std::vector<TokenSequence> out(count);
  for (auto& y : out) {
    y.resize(length);
    std::size_t s = draw(p.pi);
    for (std::size_t t = 0; t < length; ++t) {
      if (t > 0) s = draw(p.A.row(s));
      y[t] = draw(p.B.row(s));
    }
  }
  return out;
}

std::vector<double> stationary_distribution(const HmmParams& p) {
  std::vector<double> d(p.K, 1.0 / static_cast<double>(p.K)), next(p.K);
  for (int it = 0; it < 100000; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < p.K; ++i)
      for (std::size_t j = 0; j < p.K; ++j) next[j] += d[i] * p.A(i, j);
    double change = 0.0;
    for (std::size_t k = 0; k < p.K; ++k) change += std::abs(next[k] - d[k]);
    d.swap(next);
    if (change < 1e-15) break;
  }
  return d;
}

}  // namespace apideob
