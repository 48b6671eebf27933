#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <sstream>

#include "apideob/argrep.hpp"
#include "apideob/hmm.hpp"
#include "apideob/serialize.hpp"
#include "apideob/vectorize.hpp"
#include "helpers.hpp"

using namespace apideob;

namespace {

ApiCallRecord record_with(std::vector<ArgValue> args, int n_args = 0) {
  ApiCallRecord r;
  r.binary_id = "b";
  r.n_args = n_args;
  for (std::size_t i = 0; i < args.size(); ++i) r.raw_args[i] = args[i];
  return r;
}

ArgValue i(std::uint32_t v) { return {ArgTag::Int, v}; }
const ArgValue kVar{ArgTag::Var, 0};
const ArgValue kStar{ArgTag::Star, 0};
const ArgValue kMem{ArgTag::Mem, 0};

Vocabulary test_vocab() { return Vocabulary::build({{"1", "2", "3", "var", "mem", "*", "4"}}); }

HmmBank test_bank(std::size_t W_total) {
  HmmBank bank;
  bank.add("Zeta", 5, random_hmm(3, W_total, 1));
  bank.add("Alpha", 3, random_hmm(3, W_total, 2));
  bank.add("Mid", 12, random_hmm(3, W_total, 3));
  return bank;
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

}  // namespace

TEST_SUITE("vectorize") {
  TEST_CASE("sequential features are consistent with forward") {
    const auto p = random_hmm(4, 6, 5);
    const std::vector<std::size_t> y{0, 3, 5, 1};
    const auto f = hmm_features(p, y);
    const auto post = forward(p, y);
    REQUIRE(f.size() == 7);
    for (std::size_t k = 0; k < 4; ++k) CHECK(f[k] == post.log_filtered[k]);
    CHECK(f[4] == post.loglik_full);
    CHECK(f[5] == doctest::Approx(post.loglik_full / 4.0));
    CHECK(f[6] == doctest::Approx(post.loglik_full - post.loglik_prefix));

    const auto single = hmm_features(p, std::vector<std::size_t>{2});
    CHECK(single[6] == doctest::Approx(single[4]));
  }

  TEST_CASE("stationary last-observation mode") {
    const auto p = random_hmm(3, 4, 8);
    const std::vector<std::size_t> y{1, 2};
    const auto f = hmm_features(p, y, LastObsMode::StationaryMarginal);
    const auto s = stationary_distribution(p);
    double m = 0.0;
    for (std::size_t k = 0; k < 3; ++k) m += s[k] * p.B(k, 2);
    REQUIRE(f.size() == 6);
    CHECK(f[5] == doctest::Approx(std::log(m)).epsilon(1e-12));
    CHECK(last_obs_mode_from_string("stationary") == LastObsMode::StationaryMarginal);
    CHECK(std::string(to_string(LastObsMode::Predictive)) == "predictive");
  }

  TEST_CASE("impossible observations floor at the unlikely value") {
    HmmParams p;
    p.K = 1;
    p.W_total = 2;
    p.pi = {1.0};
    p.A = Matrix(1, 1, 1.0);
    p.B = Matrix(1, 2);
    p.B(0, 0) = 1.0;
    const auto f = hmm_features(p, std::vector<std::size_t>{1, 1});
    CHECK(f[1] == kUnlikely);
    CHECK(f[2] == kUnlikely);
    for (double v : f) CHECK(v >= kUnlikely);
  }

  TEST_CASE("encode_call counts trailing star padding") {
    const auto vocab = test_vocab();
    const auto c = encode_call(record_with({i(1), kStar, i(2)}), vocab, AbstractionConfig{});
    CHECK(c.available == 3);
    CHECK(c.star[1]);
    CHECK(c.tokens[0] == vocab.encode("1"));
    const auto unseen = encode_call(record_with({i(0x80000002)}), vocab, AbstractionConfig{});
    CHECK(unseen.tokens[0] == vocab.oov_index());
  }

  TEST_CASE("expt2 blocks follow sorted names and default correctly") {
    const auto vocab = test_vocab();
    const auto bank = test_bank(vocab.total_size());
    CHECK(bank.names() == std::vector<std::string>{"Alpha", "Mid", "Zeta"});
    const auto rec = record_with({kVar, i(1), i(2), kMem, i(3), i(4)});
    const auto call = encode_call(rec, vocab, AbstractionConfig{});
    const auto x = vectorize_expt2(bank, call);
    REQUIRE(x.size() == 3 * 6);

    const auto& alpha = bank.entries()[0];
    auto expect = hmm_features(alpha.scorer.params(), std::span(call.tokens).first(3));
    for (std::size_t k = 0; k < 6; ++k) CHECK(x[k] == expect[k]);
    for (std::size_t k = 6; k < 12; ++k) CHECK(x[k] == kUnlikely);  // Mid needs 12 > 6 available
    expect = hmm_features(bank.entries()[2].scorer.params(), std::span(call.tokens).first(5));
    for (std::size_t k = 0; k < 6; ++k) CHECK(x[12 + k] == expect[k]);
  }

  TEST_CASE("expt2 defaulting rules") {
    const auto vocab = test_vocab();
    const AbstractionConfig cfg;
    EncodedCall all_star = encode_call(record_with({kStar, kStar, kStar, i(1)}), vocab, cfg);
    CHECK(all_star.available == 4);
    CHECK(expt2_block_defaulted(all_star, 3));
    CHECK_FALSE(expt2_block_defaulted(all_star, 4));
    CHECK(expt2_block_defaulted(all_star, 5));
    CHECK(expt2_block_defaulted(all_star, 0));
    CHECK(expt2_block_defaulted(all_star, 13));
  }

  TEST_CASE("expt2 ignores the label and n_args") {
    const auto vocab = test_vocab();
    const auto bank = test_bank(vocab.total_size());
    auto a = record_with({kVar, i(1), i(2), kMem}, 4);
    a.api = "Alpha";
    auto b = a;
    b.api = "Zeta";
    b.n_args = 9;
    const AbstractionConfig cfg;
    CHECK(vectorize_expt2(bank, encode_call(a, vocab, cfg)) ==
          vectorize_expt2(bank, encode_call(b, vocab, cfg)));
  }

  TEST_CASE("serial and parallel expt2 vectorization are bit-identical") {
    const auto vocab = test_vocab();
    const auto bank = test_bank(vocab.total_size());
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> kind(0, 4), len(1, 12);
    std::vector<EncodedCall> calls;
    for (int n = 0; n < 400; ++n) {
      std::vector<ArgValue> args;
      const int L = len(rng);
      for (int t = 0; t < L; ++t) {
        const int k = kind(rng);
        args.push_back(k == 0 ? kStar : k == 1 ? kVar : k == 2 ? kMem : i(static_cast<std::uint32_t>(k)));
      }
      calls.push_back(encode_call(record_with(args), vocab, AbstractionConfig{}));
    }
    const auto a = kernels::vectorize_expt2_serial(bank, calls, LastObsMode::Predictive);
    const auto b = kernels::vectorize_expt2_parallel(bank, calls, LastObsMode::Predictive);
    CHECK(a == b);
  }

  TEST_CASE("feature names and CSV") {
    const auto vocab = test_vocab();
    const auto bank = test_bank(vocab.total_size());
    const auto names = expt2_feature_names(bank);
    REQUIRE(names.size() == 18);
    CHECK(names[0] == "hmmAlpha_0");
    CHECK(names[3] == "hmmAlpha_ll");
    CHECK(names[5] == "hmmAlpha_lastll");
    CHECK(svd_feature_names(2) == std::vector<std::string>{"svd_0", "svd_1"});
    std::ostringstream out;
    Matrix X(1, 2);
    X(0, 0) = 0.5, X(0, 1) = -200;
    const std::vector<std::string> labels{"Foo"};
    write_feature_csv(out, {"a", "b"}, X, &labels);
    CHECK(out.str() == "a,b,label\n0.5,-200,Foo\n");
  }
}

TEST_SUITE("svd") {
  TEST_CASE("reconstruction error matches a dense oracle") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
      Matrix X(20, 8);
      for (auto& v : X.data()) v = g(rng);
      const std::size_t r = 1 + static_cast<std::size_t>(trial) % 7;
      const auto svd = fit_svd(X, r);
      REQUIRE(svd.components() == r);

      const auto E = to_eigen(X);
      const auto V = to_eigen(svd.basis());
      CHECK((V.transpose() * V - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff() < 1e-8);
      const double err = (E - E * V * V.transpose()).norm();
      Eigen::JacobiSVD<Eigen::MatrixXd> oracle(E);
      const auto sv = oracle.singularValues();
      double tail = 0.0;
      for (Eigen::Index k = static_cast<Eigen::Index>(r); k < sv.size(); ++k) tail += sv(k) * sv(k);
      CHECK(std::abs(err - std::sqrt(tail)) < 1e-6);
      for (std::size_t k = 0; k < r; ++k)
        CHECK(std::abs(svd.singular_values()[k] - sv(static_cast<Eigen::Index>(k))) < 1e-8);
    }
  }

  TEST_CASE("jacobi eigenvalues match a dense oracle") {
    std::mt19937_64 rng(10);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix S(9, 9);
    for (std::size_t a = 0; a < 9; ++a)
      for (std::size_t b = 0; b <= a; ++b) S(a, b) = S(b, a) = g(rng);
    const auto mine = jacobi_eigen(S);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle(to_eigen(S));
    for (std::size_t k = 0; k < 9; ++k)
      CHECK(std::abs(mine.values[k] - oracle.eigenvalues()(8 - static_cast<Eigen::Index>(k))) < 1e-10);
    for (std::size_t c = 0; c < 9; ++c) {
      std::size_t arg = 0;
      for (std::size_t r = 1; r < 9; ++r)
        if (std::abs(mine.vectors(r, c)) > std::abs(mine.vectors(arg, c))) arg = r;
      CHECK(mine.vectors(arg, c) > 0.0);
    }
  }

  TEST_CASE("rank-deficient input pads with zeros") {
    Matrix X(6, 4);
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 4; ++c) X(r, c) = static_cast<double>((r + 1) * (c + 2));
    const auto svd = fit_svd(X, 3);
    CHECK(svd.components() == 1);
    const auto z = svd.project_row(std::vector<double>{1, 0, 0, 0});
    REQUIRE(z.size() == 3);
    CHECK(z[1] == 0.0);
    CHECK(z[2] == 0.0);
  }

  TEST_CASE("bag-of-words presence ignores repeats and OOV and matches the dense path") {
    const std::vector<TokenSequence> corpus{{0, 0, 1}, {2, 3}, {1, 2}};
    const auto svd = fit_bow_svd(corpus, 4, 2);
    CHECK(svd.presence(std::vector<std::size_t>{0, 0, 4}) == std::vector<double>{1, 0, 0, 0});
    const auto P = presence_matrix(corpus, 4);
    CHECK(P(0, 0) == 1.0);
    CHECK(P(0, 1) == 1.0);
    const auto dense = fit_svd(P, 2);
    for (std::size_t k = 0; k < 2; ++k)
      CHECK(std::abs(svd.singular_values()[k] - dense.singular_values()[k]) < 1e-12);
    for (std::size_t k = 0; k < svd.basis().data().size(); ++k)
      CHECK(std::abs(svd.basis().data()[k] - dense.basis().data()[k]) < 1e-12);
  }

  TEST_CASE("JSON round-trip of the basis") {
    const std::vector<TokenSequence> corpus{{0, 1}, {2, 3}, {1, 2}, {0, 3}};
    const auto svd = fit_bow_svd(corpus, 4, 3);
    const auto back = svd_from_json(svd_to_json(svd));
    CHECK(back.basis() == svd.basis());
    CHECK(back.singular_values() == svd.singular_values());
  }
}
