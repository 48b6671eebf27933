#include "apideob/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "apideob/io.hpp"
#include "apideob/seed.hpp"
#include "json_io.hpp"

namespace apideob {

using nlohmann::json;

std::map<std::string, std::size_t> Dataset::class_counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& r : records) ++out[r.api];
  return out;
}

Dataset assemble_dataset(std::vector<ApiCallRecord> records, const ApiSignatureDb& sigs,
                         const std::vector<std::string>& classes,
                         std::vector<std::string>* warnings) {
  const std::set<std::string> wanted(classes.begin(), classes.end());
  Dataset ds;
  std::size_t dropped_label = 0, dropped_nargs = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    if (!wanted.count(r.api)) {
      ++dropped_label;
      continue;
    }
    const auto n = sigs.n_args(r.api);
    if (!n || *n != r.n_args) {
      ++dropped_nargs;
      continue;
    }
    ds.records.push_back(std::move(r));
    ds.origin.push_back(i);
  }
  if (warnings) {
    if (dropped_label)
      warnings->push_back(std::to_string(dropped_label) + " records with labels outside the class list dropped");
    if (dropped_nargs)
      warnings->push_back(std::to_string(dropped_nargs) + " records whose n_args disagrees with the signature db dropped");
  }
  return ds;
}

namespace {

// Per class, indices into ds.records in input order.
std::map<std::string, std::vector<std::size_t>> group_by_class(const Dataset& ds) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < ds.records.size(); ++i) out[ds.records[i].api].push_back(i);
  return out;
}

void seeded_shuffle(std::vector<std::size_t>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.sources = ds.sources;
  out.extraction_hash = ds.extraction_hash;
  out.records.reserve(idx.size());
  for (auto i : idx) {
    out.records.push_back(ds.records[i]);
    out.origin.push_back(i < ds.origin.size() ? ds.origin[i] : i);
  }
  return out;
}

std::size_t ceil_fraction(double frac, std::size_t n) {
  const double v = frac * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::ceil(v - 1e-9)));
}

}  // namespace

Dataset balance(const Dataset& ds, std::size_t cap, std::uint64_t seed,
                std::vector<std::string>* warnings) {
  std::vector<std::size_t> keep;
  for (auto& [name, idx] : group_by_class(ds)) {
    if (idx.size() > cap) {
      auto pool = idx;
      seeded_shuffle(pool, derive_seed(seed, "balance:" + name));
      pool.resize(cap);
      keep.insert(keep.end(), pool.begin(), pool.end());
    } else {
      keep.insert(keep.end(), idx.begin(), idx.end());
    }
  }
  std::sort(keep.begin(), keep.end());
  if (warnings && keep.empty()) warnings->push_back("balance: no records");
  return subset(ds, keep);
}

SplitResult split(const Dataset& ds, double train_frac, std::uint64_t seed, bool stratified,
                  std::vector<std::string>* warnings) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw std::invalid_argument("split: train_frac must be in (0, 1)");
  SplitResult out;
  auto take = [&](std::vector<std::size_t> pool, const std::string& label) {
    seeded_shuffle(pool, derive_seed(seed, "split:" + label));
    const auto n_train = ceil_fraction(train_frac, pool.size());
    out.train_indices.insert(out.train_indices.end(), pool.begin(), pool.begin() + n_train);
    out.test_indices.insert(out.test_indices.end(), pool.begin() + n_train, pool.end());
  };
  if (stratified) {
    for (auto& [name, idx] : group_by_class(ds)) {
      if (idx.size() == 1 && warnings)
        warnings->push_back("split: class " + name + " has one sample; kept in train");
      take(idx, name);
    }
  } else {
    std::vector<std::size_t> all(ds.records.size());
    std::iota(all.begin(), all.end(), 0);
    take(std::move(all), "all");
  }
  std::sort(out.train_indices.begin(), out.train_indices.end());
  std::sort(out.test_indices.begin(), out.test_indices.end());
  out.train = subset(ds, out.train_indices);
  out.test = subset(ds, out.test_indices);
  return out;
}

std::vector<std::string> present_classes(const Dataset& ds) {
  std::set<std::string> s;
  for (const auto& r : ds.records) s.insert(r.api);
  return {s.begin(), s.end()};
}

std::vector<std::size_t> label_indices(const Dataset& ds, const std::vector<std::string>& classes) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < classes.size(); ++i) index[classes[i]] = i;
  std::vector<std::size_t> out;
  out.reserve(ds.records.size());
  for (const auto& r : ds.records) {
    auto it = index.find(r.api);
    if (it == index.end()) throw std::invalid_argument("unknown class label: " + r.api);
    out.push_back(it->second);
  }
  return out;
}

namespace {

std::vector<std::size_t> ranking_from_counts(const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  return order;
}

std::vector<std::size_t> count_labels(const std::vector<std::size_t>& labels, std::size_t C) {
  std::vector<std::size_t> counts(C, 0);
  for (auto y : labels) ++counts.at(y);
  return counts;
}

}  // namespace

std::vector<std::size_t> baserate_ranking(const std::vector<std::size_t>& train_labels,
                                          std::size_t class_count) {
  return ranking_from_counts(count_labels(train_labels, class_count));
}

EvalReport evaluate(std::string name, const std::vector<std::string>& classes,
                    const std::vector<std::vector<RankedClass>>& predictions,
                    const std::vector<std::size_t>& truth,
                    const std::vector<std::size_t>& baserate) {
  if (predictions.size() != truth.size()) throw std::invalid_argument("evaluate: size mismatch");
  const auto M = classes.size();
  EvalReport r;
  r.name = std::move(name);
  r.classes = classes;
  r.n_test = truth.size();
  r.topk.assign(M, 0.0);
  r.baserate_topk.assign(M, 0.0);
  r.confusion.assign(M, std::vector<std::size_t>(M, 0));

  std::vector<std::size_t> hits(M + 1, 0), base_hits(M + 1, 0);
  std::vector<std::size_t> base_rank(M, M);
  for (std::size_t i = 0; i < baserate.size(); ++i) base_rank[baserate[i]] = i;
  for (std::size_t n = 0; n < truth.size(); ++n) {
    const auto& p = predictions[n];
    if (p.size() != M) throw std::invalid_argument("evaluate: ranking must cover every class");
    std::size_t rank = M;
    for (std::size_t i = 0; i < M; ++i)
      if (p[i].index == truth[n]) rank = i;
    ++hits[rank];
    ++base_hits[base_rank[truth[n]]];
    ++r.confusion[p[0].index][truth[n]];
  }
  const double denom = static_cast<double>(std::max<std::size_t>(truth.size(), 1));
  std::size_t acc = 0, base_acc = 0;
  for (std::size_t k = 0; k < M; ++k) {
    acc += hits[k];
    base_acc += base_hits[k];
    r.topk[k] = static_cast<double>(acc) / denom;
    r.baserate_topk[k] = static_cast<double>(base_acc) / denom;
  }
  r.precision.assign(M, 0.0);
  r.recall.assign(M, 0.0);
  for (std::size_t c = 0; c < M; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < M; ++j) {
      row += r.confusion[c][j];
      col += r.confusion[j][c];
    }
    if (row) r.precision[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
    if (col) r.recall[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(col);
  }
  return r;
}

std::string EvalReport::to_json() const {
  json j;
  j["name"] = name;
  j["classes"] = classes;
  j["n_test"] = n_test;
  json top = json::object(), base = json::object();
  for (std::size_t k = 1; k <= topk.size(); ++k) {
    if (k <= 5 || k == topk.size()) {
      top["top" + std::to_string(k)] = topk[k - 1];
      base["top" + std::to_string(k)] = baserate_topk[k - 1];
    }
  }
  j["topk_accuracy"] = top;
  j["baserate_accuracy"] = base;
  j["topk_all"] = topk;
  j["confusion"] = confusion;
  j["confusion_layout"] = "rows=predicted,cols=true";
  j["precision"] = precision;
  j["recall"] = recall;
  return j.dump(2);
}

std::string EvalReport::confusion_csv() const {
  std::ostringstream out;
  out << "predicted\\true";
  for (const auto& c : classes) out << ',' << c;
  out << '\n';
  for (std::size_t i = 0; i < classes.size(); ++i) {
    out << classes[i];
    for (auto v : confusion[i]) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- bundle

namespace {

json abstraction_to_json(const AbstractionConfig& a) {
  json wl = json::array();
  for (auto v : a.whitelist.values()) wl.push_back(hex_string(v));
  return {{"whitelist", wl}, {"pointer_low", a.pointer_low}, {"pointer_high", a.pointer_high}};
}

AbstractionConfig abstraction_from_json(const json& j) {
  AbstractionConfig a;
  a.whitelist = ConstantWhitelist::from_json(j.at("whitelist").dump());
  a.pointer_low = j.at("pointer_low").get<std::uint32_t>();
  a.pointer_high = j.at("pointer_high").get<std::uint32_t>();
  return a;
}

std::size_t expected_dim(const ModelBundle& b) {
  return b.experiment == "expt1" ? b.K + 3 : b.classes.size() * (b.K + 3);
}

void validate_bundle(const ModelBundle& b) {
  if (b.experiment != "expt1" && b.experiment != "expt2")
    throw ValidationError("bundle: unknown experiment '" + b.experiment + "'");
  if (b.classes.empty()) throw ValidationError("bundle: no classes");
  if (b.train_counts.size() != b.classes.size())
    throw ValidationError("bundle: train_counts does not match classes");
  if (!std::is_sorted(b.classes.begin(), b.classes.end()))
    throw ValidationError("bundle: classes must be sorted");
  for (const auto& h : b.hmms) {
    h.params.validate();
    if (h.params.K != b.K) throw ValidationError("bundle: HMM " + h.name + " has wrong K");
    if (h.params.W_total != b.vocab.total_size())
      throw ValidationError("bundle: HMM " + h.name + " alphabet does not match vocabulary");
  }
  if (b.experiment == "expt2") {
    if (b.hmms.size() != b.classes.size()) throw ValidationError("bundle: one HMM per class");
    for (std::size_t m = 0; m < b.hmms.size(); ++m)
      if (b.hmms[m].name != b.classes[m])
        throw ValidationError("bundle: HMM order must match class order");
  } else {
    if (b.hmms.size() != 1) throw ValidationError("bundle: expt1 needs one population HMM");
    if (!b.svd || !b.bow_mlr) throw ValidationError("bundle: expt1 needs the SVD baseline");
    if (b.svd->vocab_size() != b.vocab.size() || b.svd->requested() != b.K + 3)
      throw ValidationError("bundle: SVD basis does not match vocabulary");
    b.bow_mlr->validate();
    if (b.bow_mlr->classes != b.classes || b.bow_mlr->dim() != b.K + 3)
      throw ValidationError("bundle: baseline classifier does not match");
  }
  b.mlr.validate();
  if (b.mlr.classes != b.classes) throw ValidationError("bundle: classifier class order");
  if (b.mlr.dim() != expected_dim(b)) throw ValidationError("bundle: classifier dimension");
}

}  // namespace

std::string bundle_to_json(const ModelBundle& b) {
  json j;
  j["schema_version"] = kBundleSchemaVersion;
  j["experiment"] = b.experiment;
  j["K"] = b.K;
  j["last_obs"] = to_string(b.last_obs);
  j["seed"] = b.seed;
  j["abstraction"] = abstraction_to_json(b.abstraction);
  j["vocabulary"] = json::parse(b.vocab.to_json());
  j["classes"] = b.classes;
  j["train_counts"] = b.train_counts;
  json hmms = json::array();
  for (const auto& h : b.hmms)
    hmms.push_back({{"name", h.name}, {"n_args", h.n_args}, {"params", detail::to_json(h.params)}});
  j["hmms"] = hmms;
  j["mlr"] = detail::to_json(b.mlr);
  if (b.svd) j["svd"] = detail::to_json(*b.svd);
  if (b.bow_mlr) j["bow_mlr"] = detail::to_json(*b.bow_mlr);
  j["run_config"] = json::parse(b.run_config);
  return j.dump();
}

ModelBundle bundle_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("bundle: malformed or truncated JSON: ") + e.what());
  }
  try {
    const auto version = j.at("schema_version").get<int>();
    if (version != kBundleSchemaVersion)
      throw ValidationError("bundle: schema version " + std::to_string(version) +
                            " is not supported (expected " +
                            std::to_string(kBundleSchemaVersion) + ")");
    ModelBundle b;
    b.experiment = j.at("experiment").get<std::string>();
    b.K = j.at("K").get<std::size_t>();
    b.last_obs = last_obs_mode_from_string(j.at("last_obs").get<std::string>());
    b.seed = j.at("seed").get<std::uint64_t>();
    b.abstraction = abstraction_from_json(j.at("abstraction"));
    b.vocab = Vocabulary::from_json(j.at("vocabulary").dump());
    b.classes = j.at("classes").get<std::vector<std::string>>();
    b.train_counts = j.at("train_counts").get<std::vector<std::size_t>>();
    for (const auto& h : j.at("hmms"))
      b.hmms.push_back({h.at("name").get<std::string>(), h.at("n_args").get<std::size_t>(),
                        detail::hmm_from_json(h.at("params"))});
    b.mlr = detail::mlr_from_json(j.at("mlr"));
    if (j.contains("svd")) b.svd = detail::svd_from_json(j["svd"]);
    if (j.contains("bow_mlr")) b.bow_mlr = detail::mlr_from_json(j["bow_mlr"]);
    b.run_config = j.value("run_config", json::object()).dump();
    validate_bundle(b);
    return b;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bundle: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("bundle: ") + e.what());
  }
}

void save_bundle(const ModelBundle& b, const std::string& path) {
  validate_bundle(b);
  write_file_atomic(path, bundle_to_json(b) + "\n");
}

ModelBundle load_bundle(const std::string& path) { return bundle_from_json(read_file(path)); }

// ---------------------------------------------------------------- predictor

Predictor::Predictor(const ModelBundle& bundle) : bundle_(bundle) {
  validate_bundle(bundle_);
  if (bundle_.experiment == "expt2") {
    for (const auto& h : bundle_.hmms) bank_.add(h.name, h.n_args, h.params);
  } else {
    population_.emplace(bundle_.hmms.front().params);
  }
}

std::vector<double> Predictor::features(const ApiCallRecord& rec) const {
  const auto call = encode_call(rec, bundle_.vocab, bundle_.abstraction);
  if (population_) {
    if (rec.n_args < 1 || rec.n_args > static_cast<int>(kMaxArgs))
      throw std::invalid_argument("expt1 prediction needs the record's n_args");
    return vectorize_expt1(*population_, call, static_cast<std::size_t>(rec.n_args),
                           bundle_.last_obs);
  }
  return vectorize_expt2(bank_, call, bundle_.last_obs);
}

std::vector<RankedClass> Predictor::predict(const ApiCallRecord& rec) const {
  return bundle_.mlr.predict(features(rec));
}

namespace {

TokenSequence true_length_tokens(const ApiCallRecord& rec, const Vocabulary& vocab,
                                 const AbstractionConfig& cfg) {
  if (rec.n_args < 1 || rec.n_args > static_cast<int>(kMaxArgs))
    throw std::invalid_argument("record " + rec.binary_id + "@" + hex_string(rec.call_addr) +
                                " has no usable n_args");
  return vocab.encode(abstract_sequence(rec, static_cast<std::size_t>(rec.n_args), cfg));
}

}  // namespace

std::vector<RankedClass> Predictor::predict_bow(const ApiCallRecord& rec) const {
  if (!bundle_.svd) throw std::logic_error("bundle has no bag-of-words baseline");
  const auto y = true_length_tokens(rec, bundle_.vocab, bundle_.abstraction);
  return bundle_.bow_mlr->predict(bundle_.svd->project(y));
}

Matrix Predictor::feature_matrix(const std::vector<ApiCallRecord>& recs, bool parallel) const {
  const auto D = bundle_.mlr.dim();
  if (population_) {
    for (const auto& r : recs)
      if (r.n_args < 1 || r.n_args > static_cast<int>(kMaxArgs))
        throw std::invalid_argument("expt1 prediction needs n_args; record " + r.binary_id + "@" +
                                    hex_string(r.call_addr) + " has none");
  }
  Matrix X(recs.size(), D);
  const auto n = static_cast<std::ptrdiff_t>(recs.size());
#pragma omp parallel for schedule(dynamic, 64) if (parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const auto f = features(recs[u]);
    std::copy(f.begin(), f.end(), X.row(u).begin());
  }
  return X;
}

std::vector<std::vector<RankedClass>> Predictor::predict_all(
    const std::vector<ApiCallRecord>& recs, bool parallel) const {
  const auto X = feature_matrix(recs, parallel);
  std::vector<std::vector<RankedClass>> out(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) out[i] = bundle_.mlr.predict(X.row(i));
  return out;
}

EvalReport evaluate_bundle(const ModelBundle& bundle, const Dataset& test, std::string name,
                           bool parallel) {
  const Predictor pred(bundle);
  const auto truth = label_indices(test, bundle.classes);
  return evaluate(std::move(name), bundle.classes, pred.predict_all(test.records, parallel), truth,
                  ranking_from_counts(bundle.train_counts));
}

// ---------------------------------------------------------------- experiments

namespace {

struct PreparedTrain {
  std::vector<std::string> classes;
  std::vector<std::size_t> labels;
  Vocabulary vocab;
  std::vector<TokenSequence> sequences;  // true-length slices
};

PreparedTrain prepare(const Dataset& train, const ExperimentConfig& cfg) {
  PreparedTrain p;
  p.classes = present_classes(train);
  if (p.classes.size() < 2) throw std::invalid_argument("need at least two classes to train");
  p.labels = label_indices(train, p.classes);
  std::vector<std::vector<Token>> tokens;
  tokens.reserve(train.records.size());
  for (const auto& r : train.records) {
    if (r.n_args < 1 || r.n_args > static_cast<int>(kMaxArgs))
      throw std::invalid_argument("training record without a valid n_args");
    tokens.push_back(abstract_sequence(r, static_cast<std::size_t>(r.n_args), cfg.abstraction));
  }
  p.vocab = Vocabulary::build(tokens);
  p.sequences.reserve(tokens.size());
  for (const auto& t : tokens) p.sequences.push_back(p.vocab.encode(t));
  return p;
}

ModelBundle base_bundle(const PreparedTrain& p, const ExperimentConfig& cfg, std::string expt) {
  ModelBundle b;
  b.experiment = std::move(expt);
  b.K = cfg.K;
  b.last_obs = cfg.last_obs;
  b.seed = cfg.seed;
  b.abstraction = cfg.abstraction;
  b.vocab = p.vocab;
  b.classes = p.classes;
  b.train_counts = count_labels(p.labels, p.classes.size());
  return b;
}

MlrOptions mlr_options(const ExperimentConfig& cfg) {
  auto o = cfg.mlr;
  o.parallel = cfg.parallel;
  return o;
}

}  // namespace

Expt1Result run_experiment1(const Dataset& train, const Dataset& test,
                            const ExperimentConfig& cfg) {
  const auto p = prepare(train, cfg);
  auto bw = cfg.hmm;
  bw.parallel = cfg.parallel;
  auto population = baum_welch(p.sequences, cfg.K, p.vocab.total_size(),
                               derive_seed(cfg.seed, "hmm:population"), bw);

  const HmmScorer scorer(population);
  Matrix Xs(p.sequences.size(), cfg.K + 3);
  for (std::size_t i = 0; i < p.sequences.size(); ++i)
    scorer.features(p.sequences[i], cfg.last_obs, Xs.row(i));
  auto seq_mlr = train_mlr(Xs, p.labels, p.classes, mlr_options(cfg));

  auto svd = fit_bow_svd(p.sequences, p.vocab.size(), cfg.K + 3);
  Matrix Xb(p.sequences.size(), cfg.K + 3);
  for (std::size_t i = 0; i < p.sequences.size(); ++i) {
    const auto v = svd.project(p.sequences[i]);
    std::copy(v.begin(), v.end(), Xb.row(i).begin());
  }
  auto bow_mlr = train_mlr(Xb, p.labels, p.classes, mlr_options(cfg));

  Expt1Result r;
  r.bundle = base_bundle(p, cfg, "expt1");
  r.bundle.hmms.push_back({"population", 0, std::move(population)});
  r.bundle.mlr = std::move(seq_mlr);
  r.bundle.svd = std::move(svd);
  r.bundle.bow_mlr = std::move(bow_mlr);

  const Predictor pred(r.bundle);
  const auto truth = label_indices(test, p.classes);
  const auto base = ranking_from_counts(r.bundle.train_counts);
  std::vector<std::vector<RankedClass>> bow_pred(test.records.size());
  for (std::size_t i = 0; i < test.records.size(); ++i)
    bow_pred[i] = pred.predict_bow(test.records[i]);
  r.sequential = evaluate("expt1_sequential", p.classes,
                          pred.predict_all(test.records, cfg.parallel), truth, base);
  r.bow = evaluate("expt1_bow_svd", p.classes, bow_pred, truth, base);
  return r;
}

Expt2Result run_experiment2(const Dataset& train, const Dataset& test,
                            const ExperimentConfig& cfg) {
  const auto p = prepare(train, cfg);
  const auto M = p.classes.size();
  std::vector<std::vector<TokenSequence>> per_class(M);
  for (std::size_t i = 0; i < p.sequences.size(); ++i)
    per_class[p.labels[i]].push_back(p.sequences[i]);

  // The loop over classes carries the parallelism; each training runs a
  // serial E-step.
  std::vector<HmmParams> models(M);
  auto bw = cfg.hmm;
  bw.parallel = false;
  const auto m_count = static_cast<std::ptrdiff_t>(M);
#pragma omp parallel for schedule(dynamic, 1) if (cfg.parallel)
  for (std::ptrdiff_t m = 0; m < m_count; ++m) {
    const auto u = static_cast<std::size_t>(m);
    models[u] = baum_welch(per_class[u], cfg.K, p.vocab.total_size(),
                           derive_seed(cfg.seed, "hmm:" + p.classes[u]), bw);
  }

  Expt2Result r;
  r.bundle = base_bundle(p, cfg, "expt2");
  HmmBank bank;
  for (std::size_t m = 0; m < M; ++m) {
    const auto n = cfg.sigs.n_args(p.classes[m]);
    if (!n) throw std::invalid_argument("no signature for class " + p.classes[m]);
    bank.add(p.classes[m], static_cast<std::size_t>(*n), models[m]);
    r.bundle.hmms.push_back({p.classes[m], static_cast<std::size_t>(*n), std::move(models[m])});
  }

  std::vector<EncodedCall> calls;
  calls.reserve(train.records.size());
  for (const auto& rec : train.records) calls.push_back(encode_call(rec, p.vocab, cfg.abstraction));
  const auto X = cfg.parallel ? kernels::vectorize_expt2_parallel(bank, calls, cfg.last_obs)
                              : kernels::vectorize_expt2_serial(bank, calls, cfg.last_obs);
  r.bundle.mlr = train_mlr(X, p.labels, p.classes, mlr_options(cfg));

  r.report = evaluate_bundle(r.bundle, test, "expt2", cfg.parallel);
  return r;
}

}  // namespace apideob
