#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "apideob/hmm.hpp"
#include "apideob/serialize.hpp"
#include "helpers.hpp"

using namespace apideob;

namespace {

std::vector<std::size_t> random_sequence(std::mt19937_64& rng, std::size_t T, std::size_t W) {
  std::uniform_int_distribution<std::size_t> tok(0, W - 1);
  std::vector<std::size_t> y(T);
  for (auto& v : y) v = tok(rng);
  return y;
}

HmmParams two_state_truth() {
  HmmParams p;
  p.K = 2;
  p.W_total = 4;
  p.pi = {0.5, 0.5};
  p.A = Matrix(2, 2);
  p.A(0, 0) = 0.9, p.A(0, 1) = 0.1, p.A(1, 0) = 0.2, p.A(1, 1) = 0.8;
  p.B = Matrix(2, 4);
  const double b0[] = {0.6, 0.3, 0.05, 0.05}, b1[] = {0.05, 0.05, 0.3, 0.6};
  for (std::size_t w = 0; w < 4; ++w) p.B(0, w) = b0[w], p.B(1, w) = b1[w];
  return p;
}

double row_l1(const Matrix& a, std::size_t ra, const Matrix& b, std::size_t rb) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += std::abs(a(ra, c) - b(rb, c));
  return s;
}

}  // namespace

TEST_SUITE("hmm") {
  TEST_CASE("forward matches enumeration") {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> K(1, 3), T(1, 6), W(1, 5);
    for (int trial = 0; trial < 200; ++trial) {
      const auto p = random_hmm(K(rng), W(rng), static_cast<std::uint64_t>(trial));
      const auto y = random_sequence(rng, T(rng), p.W_total);
      const auto f = forward(p, y);
      CHECK(std::abs(f.loglik_full - testing::enumerate_loglik(p, y)) < 1e-10);
      if (y.size() > 1) {
        const std::vector<std::size_t> prefix(y.begin(), y.end() - 1);
        CHECK(std::abs(f.loglik_prefix - testing::enumerate_loglik(p, prefix)) < 1e-10);
      }
      CHECK(std::abs(logsumexp(f.log_filtered)) < 1e-12);
    }
  }

  TEST_CASE("posterior rows normalize and xi marginalizes to gamma") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      const auto p = random_hmm(3, 4, 100 + static_cast<std::uint64_t>(trial));
      const auto y = random_sequence(rng, 5, 4);
      const auto st = sequence_stats(LogHmm(p), y);
      for (std::size_t t = 0; t < y.size(); ++t) {
        double row = 0.0;
        for (std::size_t k = 0; k < 3; ++k) row += st.gamma(t, k);
        CHECK(std::abs(row - 1.0) < 1e-12);
      }
      double xi_total = 0.0;
      for (std::size_t i = 0; i < 3; ++i) {
        double from_xi = 0.0, from_gamma = 0.0;
        for (std::size_t j = 0; j < 3; ++j) from_xi += st.xi(i, j);
        for (std::size_t t = 0; t + 1 < y.size(); ++t) from_gamma += st.gamma(t, i);
        CHECK(std::abs(from_xi - from_gamma) < 1e-12);
        xi_total += from_xi;
      }
      CHECK(std::abs(xi_total - static_cast<double>(y.size() - 1)) < 1e-12);
      CHECK(std::abs(st.loglik - testing::enumerate_loglik(p, y)) < 1e-10);
    }
  }

  TEST_CASE("first-step posterior matches brute force") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      const auto p = random_hmm(2, 3, 500 + static_cast<std::uint64_t>(trial));
      const auto y = random_sequence(rng, 4, 3);
      const auto gamma = forward_backward(p, y);
      auto q = p;
      q.pi = {p.pi[0], 0.0};
      const double num = std::exp(testing::enumerate_loglik(q, y));
      const double den = std::exp(testing::enumerate_loglik(p, y));
      CHECK(std::abs(gamma(0, 0) - num / den) < 1e-12);
    }
  }

  TEST_CASE("serial and parallel E-steps are bit-identical") {
    const auto p = random_hmm(4, 6, 9);
    const auto seqs = sample_hmm(p, 300, 7, 10);
    const LogHmm h(p);
    const auto a = kernels::estep_serial(h, seqs);
    const auto b = kernels::estep_parallel(h, seqs);
    CHECK(a.initial == b.initial);
    CHECK(a.transitions == b.transitions);
    CHECK(a.emissions == b.emissions);
    CHECK(a.loglik == b.loglik);
  }

  TEST_CASE("Baum-Welch never decreases the likelihood") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto truth = random_hmm(3, 5, seed);
      const auto seqs = sample_hmm(truth, 60, 6, seed + 1);
      BaumWelchOptions o;
      o.max_iters = 60;
      const auto fit = baum_welch(seqs, 2 + seed % 2, 5, seed + 2, o);
      fit.validate();
      for (std::size_t i = 1; i < fit.train_loglik_trace.size(); ++i)
        CHECK(fit.train_loglik_trace[i] - fit.train_loglik_trace[i - 1] >= -1e-9);
    }
  }

  TEST_CASE("single-state model reduces to token frequencies") {
    const std::vector<TokenSequence> seqs{{0, 1, 1}, {2, 1}, {1, 0, 3, 3}};
    const auto fit = baum_welch(seqs, 1, 5, 4);
    const double counts[] = {2, 4, 1, 2, 0};
    for (std::size_t w = 0; w < 5; ++w) CHECK(std::abs(fit.B(0, w) - counts[w] / 9.0) < 1e-6);
    CHECK(fit.pi[0] == doctest::Approx(1.0));
    CHECK(fit.A(0, 0) == doctest::Approx(1.0));
  }

  TEST_CASE("generator recovery up to permutation") {
    const auto truth = two_state_truth();
    const auto seqs = sample_hmm(truth, 2000, 10, 77);
    const auto fit = baum_welch(seqs, 2, 4, 78);
    const double direct = row_l1(fit.B, 0, truth.B, 0) + row_l1(fit.B, 1, truth.B, 1);
    const double swapped = row_l1(fit.B, 0, truth.B, 1) + row_l1(fit.B, 1, truth.B, 0);
    const bool same = direct <= swapped;
    for (std::size_t k = 0; k < 2; ++k)
      CHECK(row_l1(fit.B, k, truth.B, same ? k : 1 - k) < 0.05);
  }

  TEST_CASE("M-step floors every entry") {
    ExpectedCounts c;
    c.initial = {5.0, 0.0};
    c.transitions = Matrix(2, 2, 0.0);
    c.transitions(0, 0) = 3.0;
    c.emissions = Matrix(2, 3, 0.0);
    c.emissions(0, 1) = 4.0;
    const auto p = m_step(c);
    p.validate();
    for (double v : p.B.data()) CHECK(v >= kProbabilityFloor);
    for (double v : p.A.data()) CHECK(v >= kProbabilityFloor);
    CHECK(p.pi[1] >= kProbabilityFloor);
    CHECK(p.B(1, 0) == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("random HMMs are valid and seeded") {
    const auto a = random_hmm(3, 7, 12);
    a.validate();
    CHECK(random_hmm(3, 7, 12).B == a.B);
    CHECK_FALSE(random_hmm(3, 7, 13).B == a.B);
    auto bad = a;
    bad.A(0, 0) += 0.1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("stationary distribution is a fixed point") {
    const auto p = random_hmm(4, 3, 21);
    const auto s = stationary_distribution(p);
    for (std::size_t j = 0; j < 4; ++j) {
      double v = 0.0;
      for (std::size_t i = 0; i < 4; ++i) v += s[i] * p.A(i, j);
      CHECK(std::abs(v - s[j]) < 1e-12);
    }
  }

  TEST_CASE("rejects out-of-range tokens and empty sequences") {
    CHECK_THROWS(baum_welch({{0, 9}}, 2, 4, 1));
    CHECK_THROWS(baum_welch({{}}, 2, 4, 1));
  }

  TEST_CASE("JSON round-trip is exact") {
    auto p = baum_welch(sample_hmm(random_hmm(3, 4, 1), 40, 5, 2), 3, 4, 3);
    const auto back = hmm_from_json(hmm_to_json(p));
    CHECK(back.A == p.A);
    CHECK(back.B == p.B);
    CHECK(back.pi == p.pi);
    CHECK(back.train_loglik_trace == p.train_loglik_trace);
    CHECK_THROWS(hmm_from_json(R"({"K":1,"W_total":1,"pi":[0.5],"A":[[1]],"B":[[1]]})"));
  }
}
