#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apideob/argrep.hpp"
#include "apideob/hmm.hpp"
#include "apideob/listing.hpp"
#include "apideob/mlr.hpp"
#include "apideob/symexec.hpp"
#include "apideob/vectorize.hpp"

namespace apideob {

struct Dataset {
  std::vector<ApiCallRecord> records;
  std::vector<std::size_t> origin;  // position of each record in the assembled input
  std::vector<std::string> sources;
  std::string extraction_hash;

  std::map<std::string, std::size_t> class_counts() const;
};

// Keeps records labeled with one of `classes` whose n_args agrees with `sigs`.
Dataset assemble_dataset(std::vector<ApiCallRecord> records, const ApiSignatureDb& sigs,
                         const std::vector<std::string>& classes,
                         std::vector<std::string>* warnings = nullptr);

// At most `cap` records per class, sampled without replacement. Surviving
// records keep their input order.
Dataset balance(const Dataset& ds, std::size_t cap, std::uint64_t seed,
                std::vector<std::string>* warnings = nullptr);

struct SplitResult {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_indices;  // into the input dataset, ascending
  std::vector<std::size_t> test_indices;
};

// Stratified: ceil(train_frac * count) of each class go to train.
SplitResult split(const Dataset& ds, double train_frac, std::uint64_t seed, bool stratified = true,
                  std::vector<std::string>* warnings = nullptr);

// Sorted class names present in `ds`.
std::vector<std::string> present_classes(const Dataset& ds);
// Index of each record's label in `classes`; throws on unknown labels.
std::vector<std::size_t> label_indices(const Dataset& ds, const std::vector<std::string>& classes);

struct EvalReport {
  std::string name;
  std::vector<std::string> classes;
  std::size_t n_test = 0;
  std::vector<double> topk;           // topk[k - 1], k = 1..M
  std::vector<double> baserate_topk;  // same, ranking classes by training frequency
  std::vector<std::vector<std::size_t>> confusion;  // [predicted][true]
  std::vector<double> precision;
  std::vector<double> recall;

  double top(std::size_t k) const { return topk.at(k - 1); }
  std::string to_json() const;
  std::string confusion_csv() const;
};

// Classes ranked by descending frequency in `train_labels`; ties keep class order.
std::vector<std::size_t> baserate_ranking(const std::vector<std::size_t>& train_labels,
                                          std::size_t class_count);

EvalReport evaluate(std::string name, const std::vector<std::string>& classes,
                    const std::vector<std::vector<RankedClass>>& predictions,
                    const std::vector<std::size_t>& truth,
                    const std::vector<std::size_t>& baserate);

struct ExperimentConfig {
  std::size_t K = 10;
  std::uint64_t seed = 0;
  BaumWelchOptions hmm;
  MlrOptions mlr;
  LastObsMode last_obs = LastObsMode::Predictive;
  AbstractionConfig abstraction;
  ApiSignatureDb sigs = default_signature_db();
  bool parallel = true;
};

inline constexpr int kBundleSchemaVersion = 1;

struct NamedHmm {
  std::string name;
  std::size_t n_args = 0;  // 0 for the population model
  HmmParams params;
};

// A trained model with everything prediction needs.
struct ModelBundle {
  std::string experiment;  // "expt1" or "expt2"
  std::size_t K = 0;
  LastObsMode last_obs = LastObsMode::Predictive;
  std::uint64_t seed = 0;
  AbstractionConfig abstraction;
  Vocabulary vocab;
  std::vector<std::string> classes;
  std::vector<std::size_t> train_counts;  // per class, for the baserate model
  std::vector<NamedHmm> hmms;  // expt1: one population model; expt2: one per class
  MlrModel mlr;
  std::optional<BowSvd> svd;  // expt1 baseline
  std::optional<MlrModel> bow_mlr;
  std::string run_config = "{}";  // JSON object echoed into the bundle
};

std::string bundle_to_json(const ModelBundle& b);
ModelBundle bundle_from_json(std::string_view text);
void save_bundle(const ModelBundle& b, const std::string& path);
ModelBundle load_bundle(const std::string& path);

class Predictor {
 public:
  explicit Predictor(const ModelBundle& bundle);

  const ModelBundle& bundle() const { return bundle_; }
  // expt1 uses the record's n_args; expt2 never looks at the label or n_args.
  std::vector<double> features(const ApiCallRecord& rec) const;
  std::vector<RankedClass> predict(const ApiCallRecord& rec) const;
  // Bag-of-words baseline ranking; expt1 bundles only.
  std::vector<RankedClass> predict_bow(const ApiCallRecord& rec) const;

  Matrix feature_matrix(const std::vector<ApiCallRecord>& recs, bool parallel = true) const;
  std::vector<std::vector<RankedClass>> predict_all(const std::vector<ApiCallRecord>& recs,
                                                    bool parallel = true) const;

 private:
  ModelBundle bundle_;
  HmmBank bank_;
  std::optional<HmmScorer> population_;
};

struct Expt1Result {
  EvalReport sequential;
  EvalReport bow;
  ModelBundle bundle;
};

struct Expt2Result {
  EvalReport report;
  ModelBundle bundle;
};

Expt1Result run_experiment1(const Dataset& train, const Dataset& test,
                            const ExperimentConfig& cfg);
Expt2Result run_experiment2(const Dataset& train, const Dataset& test,
                            const ExperimentConfig& cfg);

// Evaluates a bundle's primary predictor on labeled records, with the
// baserate taken from the bundle's training counts.
EvalReport evaluate_bundle(const ModelBundle& bundle, const Dataset& test, std::string name,
                           bool parallel = true);

}  // namespace apideob
