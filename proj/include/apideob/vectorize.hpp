#pragma once

#include <array>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "apideob/argrep.hpp"
#include "apideob/hmm.hpp"
#include "apideob/matrix.hpp"

namespace apideob {

// Default "unlikely" value; also the floor for every feature.
inline constexpr double kUnlikely = -200.0;

// How the last likelihood feature reads "log P(y_T)".
enum class LastObsMode {
  Predictive,          // log P(y_1:T) - log P(y_1:T-1)
  StationaryMarginal,  // log sum_k pi_inf(k) B(k, y_T)
};

const char* to_string(LastObsMode m);
LastObsMode last_obs_mode_from_string(std::string_view s);

// An HMM prepared for repeated feature extraction.
class HmmScorer {
 public:
  explicit HmmScorer(HmmParams params);

  const HmmParams& params() const { return params_; }
  std::size_t K() const { return params_.K; }
  std::size_t feature_count() const { return params_.K + 3; }

  // Writes K log filtered posteriors, loglik, mean loglik and the last-token
  // loglik into `out`, each floored at kUnlikely.
  void features(std::span<const std::size_t> y, LastObsMode mode, std::span<double> out) const;

 private:
  HmmParams params_;
  LogHmm log_;
  std::vector<double> log_marginal_;  // per token, under the stationary distribution
};

std::vector<double> hmm_features(const HmmParams& params, std::span<const std::size_t> y,
                                 LastObsMode mode = LastObsMode::Predictive);

// A record's 12 stack slots abstracted and encoded against a vocabulary.
struct EncodedCall {
  std::array<std::size_t, kMaxArgs> tokens{};
  std::array<bool, kMaxArgs> star{};
  std::size_t available = 0;  // 12 minus the trailing run of Star padding
};

EncodedCall encode_call(const ApiCallRecord& rec, const Vocabulary& vocab,
                        const AbstractionConfig& cfg);

std::vector<double> vectorize_expt1(const HmmScorer& hmm, const EncodedCall& call,
                                    std::size_t n_args, LastObsMode mode = LastObsMode::Predictive);

struct BankEntry {
  std::string name;
  std::size_t n_args = 0;
  HmmScorer scorer;
};

// Per-API HMMs in sorted name order, all of the same K.
class HmmBank {
 public:
  HmmBank() = default;
  void add(std::string name, std::size_t n_args, HmmParams params);

  std::size_t size() const { return entries_.size(); }
  std::size_t K() const { return entries_.empty() ? 0 : entries_.front().scorer.K(); }
  std::size_t feature_count() const { return size() * (K() + 3); }
  const std::vector<BankEntry>& entries() const { return entries_; }
  std::vector<std::string> names() const;

 private:
  std::vector<BankEntry> entries_;
};

// True when block m cannot be built for this call and is set to kUnlikely.
bool expt2_block_defaulted(const EncodedCall& call, std::size_t n_args);

void vectorize_expt2(const HmmBank& bank, const EncodedCall& call, LastObsMode mode,
                     std::span<double> out);
std::vector<double> vectorize_expt2(const HmmBank& bank, const EncodedCall& call,
                                    LastObsMode mode = LastObsMode::Predictive);

namespace kernels {

// N x bank.feature_count() feature matrix; rows follow `calls`.
Matrix vectorize_expt2_serial(const HmmBank& bank, std::span<const EncodedCall> calls,
                              LastObsMode mode);
Matrix vectorize_expt2_parallel(const HmmBank& bank, std::span<const EncodedCall> calls,
                                LastObsMode mode);

}  // namespace kernels

std::vector<std::string> hmm_feature_names(const std::string& api, std::size_t K);
std::vector<std::string> expt2_feature_names(const HmmBank& bank);
std::vector<std::string> svd_feature_names(std::size_t count);

// Header line then one row per sample; an optional trailing label column.
void write_feature_csv(std::ostream& out, const std::vector<std::string>& names, const Matrix& X,
                       const std::vector<std::string>* labels = nullptr);

// Bag-of-words baseline: presence matrix projected onto its top right
// singular vectors.
class BowSvd {
 public:
  BowSvd() = default;
  BowSvd(std::size_t vocab_size, std::size_t requested, Matrix basis,
         std::vector<double> singular_values);

  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t requested() const { return requested_; }
  std::size_t components() const { return basis_.cols(); }  // min(requested, rank)
  const Matrix& basis() const { return basis_; }             // vocab_size x components
  const std::vector<double>& singular_values() const { return singular_values_; }

  // Tokens outside the training vocabulary (OOV) are ignored.
  std::vector<double> presence(std::span<const std::size_t> seq) const;
  // `requested` entries, zero beyond `components`.
  std::vector<double> project(std::span<const std::size_t> seq) const;
  std::vector<double> project_row(std::span<const double> presence_row) const;

 private:
  std::size_t vocab_size_ = 0;
  std::size_t requested_ = 0;
  Matrix basis_;
  std::vector<double> singular_values_;
};

// One-hot presence matrix for `corpus` over `vocab_size` columns.
Matrix presence_matrix(const std::vector<TokenSequence>& corpus, std::size_t vocab_size);

BowSvd fit_bow_svd(const std::vector<TokenSequence>& corpus, std::size_t vocab_size,
                   std::size_t components);
// Same decomposition applied to an arbitrary dense matrix.
BowSvd fit_svd(const Matrix& X, std::size_t components);

struct SymmetricEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // columns, matching `values`
};

// Cyclic Jacobi rotations on a symmetric matrix. Each eigenvector's largest
// magnitude entry is made positive.
SymmetricEigen jacobi_eigen(const Matrix& S, double tol = 1e-14, std::size_t max_sweeps = 100);

}  // namespace apideob
