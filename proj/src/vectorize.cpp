#include "apideob/vectorize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "apideob/listing.hpp"

namespace apideob {

const char* to_string(LastObsMode m) {
  return m == LastObsMode::Predictive ? "predictive" : "stationary";
}

LastObsMode last_obs_mode_from_string(std::string_view s) {
  if (s == "predictive") return LastObsMode::Predictive;
  if (s == "stationary") return LastObsMode::StationaryMarginal;
  throw std::invalid_argument("unknown last-observation mode: " + std::string(s));
}

HmmScorer::HmmScorer(HmmParams params) : params_(std::move(params)), log_(params_) {
  const auto stat = stationary_distribution(params_);
  log_marginal_.resize(params_.W_total);
  for (std::size_t w = 0; w < params_.W_total; ++w) {
    double p = 0.0;
    for (std::size_t k = 0; k < params_.K; ++k) p += stat[k] * params_.B(k, w);
    log_marginal_[w] = p > 0.0 ? std::log(p) : kUnlikely;
  }
}

void HmmScorer::features(std::span<const std::size_t> y, LastObsMode mode,
                         std::span<double> out) const {
  if (out.size() != feature_count()) throw std::invalid_argument("features: output size");
  const auto post = forward(log_, y);
  const auto K = params_.K;
  const auto floor = [](double v) { return std::isnan(v) ? kUnlikely : std::max(v, kUnlikely); };
  for (std::size_t k = 0; k < K; ++k) out[k] = floor(post.log_filtered[k]);
  out[K] = floor(post.loglik_full);
  out[K + 1] = floor(post.loglik_full / static_cast<double>(y.size()));
  out[K + 2] = floor(mode == LastObsMode::Predictive ? post.loglik_full - post.loglik_prefix
                                                     : log_marginal_[y.back()]);
}

std::vector<double> hmm_features(const HmmParams& params, std::span<const std::size_t> y,
                                 LastObsMode mode) {
  const HmmScorer s(params);
  std::vector<double> out(s.feature_count());
  s.features(y, mode, out);
  return out;
}

EncodedCall encode_call(const ApiCallRecord& rec, const Vocabulary& vocab,
                        const AbstractionConfig& cfg) {
  EncodedCall c;
  const auto tokens = abstract_sequence(rec, kMaxArgs, cfg);
  for (std::size_t i = 0; i < kMaxArgs; ++i) {
    c.tokens[i] = vocab.encode(tokens[i]);
    c.star[i] = rec.raw_args[i].tag == ArgTag::Star;
  }
  c.available = kMaxArgs;
  while (c.available > 0 && c.star[c.available - 1]) --c.available;
  return c;
}

std::vector<double> vectorize_expt1(const HmmScorer& hmm, const EncodedCall& call,
                                    std::size_t n_args, LastObsMode mode) {
  if (n_args < 1 || n_args > kMaxArgs) throw std::invalid_argument("vectorize_expt1: n_args");
  std::vector<double> out(hmm.feature_count());
  hmm.features(std::span(call.tokens).first(n_args), mode, out);
  return out;
}

void HmmBank::add(std::string name, std::size_t n_args, HmmParams params) {
  if (!entries_.empty() && params.K != K()) throw std::invalid_argument("HmmBank: K mismatch");
  BankEntry e{std::move(name), n_args, HmmScorer(std::move(params))};
  auto pos = std::lower_bound(entries_.begin(), entries_.end(), e.name,
                              [](const BankEntry& a, const std::string& n) { return a.name < n; });
  if (pos != entries_.end() && pos->name == e.name)
    throw std::invalid_argument("HmmBank: duplicate " + e.name);
  entries_.insert(pos, std::move(e));
}

std::vector<std::string> HmmBank::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

bool expt2_block_defaulted(const EncodedCall& call, std::size_t n_args) {
  if (n_args < 1 || n_args > kMaxArgs || n_args > call.available) return true;
  return std::all_of(call.star.begin(), call.star.begin() + static_cast<std::ptrdiff_t>(n_args),
                     [](bool s) { return s; });
}

void vectorize_expt2(const HmmBank& bank, const EncodedCall& call, LastObsMode mode,
                     std::span<double> out) {
  if (out.size() != bank.feature_count()) throw std::invalid_argument("vectorize_expt2: size");
  const auto width = bank.K() + 3;
  for (std::size_t m = 0; m < bank.size(); ++m) {
    const auto& e = bank.entries()[m];
    auto block = out.subspan(m * width, width);
    if (expt2_block_defaulted(call, e.n_args)) {
      std::fill(block.begin(), block.end(), kUnlikely);
    } else {
      e.scorer.features(std::span(call.tokens).first(e.n_args), mode, block);
    }
  }
}

std::vector<double> vectorize_expt2(const HmmBank& bank, const EncodedCall& call,
                                    LastObsMode mode) {
  std::vector<double> out(bank.feature_count());
  vectorize_expt2(bank, call, mode, out);
  return out;
}

namespace kernels {

Matrix vectorize_expt2_serial(const HmmBank& bank, std::span<const EncodedCall> calls,
                              LastObsMode mode) {
  Matrix X(calls.size(), bank.feature_count());
  for (std::size_t i = 0; i < calls.size(); ++i) vectorize_expt2(bank, calls[i], mode, X.row(i));
  return X;
}

Matrix vectorize_expt2_parallel(const HmmBank& bank, std::span<const EncodedCall> calls,
                                LastObsMode mode) {
  Matrix X(calls.size(), bank.feature_count());
  const auto n = static_cast<std::ptrdiff_t>(calls.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    vectorize_expt2(bank, calls[u], mode, X.row(u));
  }
  return X;
}

}  // namespace kernels

std::vector<std::string> hmm_feature_names(const std::string& api, std::size_t K) {
  std::vector<std::string> out;
  const auto prefix = "hmm" + api + "_";
  for (std::size_t k = 0; k < K; ++k) out.push_back(prefix + std::to_string(k));
  out.push_back(prefix + "ll");
  out.push_back(prefix + "mll");
  out.push_back(prefix + "lastll");
  return out;
}

std::vector<std::string> expt2_feature_names(const HmmBank& bank) {
  std::vector<std::string> out;
  for (const auto& e : bank.entries()) {
    auto block = hmm_feature_names(e.name, bank.K());
    out.insert(out.end(), block.begin(), block.end());
  }
  return out;
}

std::vector<std::string> svd_feature_names(std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back("svd_" + std::to_string(i));
  return out;
}

void write_feature_csv(std::ostream& out, const std::vector<std::string>& names, const Matrix& X,
                       const std::vector<std::string>* labels) {
  if (names.size() != X.cols()) throw std::invalid_argument("write_feature_csv: header size");
  if (labels && labels->size() != X.rows()) throw std::invalid_argument("write_feature_csv: labels");
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  if (labels) out << ",label";
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t j = 0; j < X.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", X(i, j));
      out << (j ? "," : "") << buf;
    }
    if (labels) out << ',' << (*labels)[i];
    out << '\n';
  }
}

BowSvd::BowSvd(std::size_t vocab_size, std::size_t requested, Matrix basis,
               std::vector<double> singular_values)
    : vocab_size_(vocab_size),
      requested_(requested),
      basis_(std::move(basis)),
      singular_values_(std::move(singular_values)) {
  if (basis_.rows() != vocab_size_ || basis_.cols() > requested_ ||
      singular_values_.size() != basis_.cols())
    throw ValidationError("svd basis: dimension mismatch");
}

std::vector<double> BowSvd::presence(std::span<const std::size_t> seq) const {
  std::vector<double> row(vocab_size_, 0.0);
  for (auto t : seq)
    if (t < vocab_size_) row[t] = 1.0;
  return row;
}

std::vector<double> BowSvd::project_row(std::span<const double> row) const {
  if (row.size() != vocab_size_) throw std::invalid_argument("svd project: row size");
  std::vector<double> out(requested_, 0.0);
  for (std::size_t w = 0; w < vocab_size_; ++w) {
    if (row[w] == 0.0) continue;
    for (std::size_t c = 0; c < basis_.cols(); ++c) out[c] += row[w] * basis_(w, c);
  }
  return out;
}

std::vector<double> BowSvd::project(std::span<const std::size_t> seq) const {
  return project_row(presence(seq));
}

Matrix presence_matrix(const std::vector<TokenSequence>& corpus, std::size_t vocab_size) {
  Matrix X(corpus.size(), vocab_size, 0.0);
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (auto t : corpus[i])
      if (t < vocab_size) X(i, t) = 1.0;
  return X;
}

SymmetricEigen jacobi_eigen(const Matrix& S, double tol, std::size_t max_sweeps) {
  const auto n = S.rows();
  if (S.cols() != n) throw std::invalid_argument("jacobi_eigen: matrix not square");
  Matrix a = S;
  Matrix v(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double total = 0.0;
  for (double x : a.data()) total += x * x;
  const double threshold = tol * tol * std::max(total, 1e-300);

  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * a(p, q) * a(p, q);
    if (off <= threshold) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymmetricEigen out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t c = 0; c < n; ++c) {
    const auto src = order[c];
    out.values[c] = a(src, src);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v(k, src)) > std::abs(v(arg, src))) arg = k;
    const double sign = v(arg, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, c) = sign * v(k, src);
  }
  return out;
}

namespace {

BowSvd basis_from_gram(const Matrix& gram, std::size_t components) {
  const auto eig = jacobi_eigen(gram);
  const auto n = gram.rows();
  const double top = eig.values.empty() ? 0.0 : std::max(eig.values.front(), 0.0);
  std::size_t rank = 0;
  while (rank < n && eig.values[rank] > std::max(1e-10 * top, 1e-12)) ++rank;
  const auto keep = std::min(rank, components);
  Matrix basis(n, keep);
  std::vector<double> sv(keep);
  for (std::size_t c = 0; c < keep; ++c) {
    sv[c] = std::sqrt(eig.values[c]);
    for (std::size_t k = 0; k < n; ++k) basis(k, c) = eig.vectors(k, c);
  }
  return BowSvd(n, components, std::move(basis), std::move(sv));
}

}  // namespace

BowSvd fit_svd(const Matrix& X, std::size_t components) {
  const auto d = X.cols();
  Matrix gram(d, d, 0.0);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const auto r = X.row(i);
    for (std::size_t p = 0; p < d; ++p) {
      if (r[p] == 0.0) continue;
      for (std::size_t q = 0; q < d; ++q) gram(p, q) += r[p] * r[q];
    }
  }
  return basis_from_gram(gram, components);
}

BowSvd fit_bow_svd(const std::vector<TokenSequence>& corpus, std::size_t vocab_size,
                   std::size_t components) {
  if (corpus.empty()) throw std::invalid_argument("fit_bow_svd: empty corpus");
  Matrix gram(vocab_size, vocab_size, 0.0);
  std::vector<std::size_t> present;
  for (const auto& seq : corpus) {
    present.clear();
    for (auto t : seq)
      if (t < vocab_size) present.push_back(t);
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    for (auto p : present)
      for (auto q : present) gram(p, q) += 1.0;
  }
  return basis_from_gram(gram, components);
}

}  // namespace apideob
