#include "apideob/cli.hpp"

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "CLI11.hpp"
#include "apideob/io.hpp"
#include "apideob/listing.hpp"
#include "apideob/pipeline.hpp"
#include "apideob/symexec.hpp"
#include "apideob/synth.hpp"
#include "json.hpp"

namespace apideob::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string RunConfig::to_json() const {
  json j;
  j["subcommand"] = subcommand;
  j["listings"] = listings;
  j["imports"] = imports;
  j["records"] = records;
  j["bundle"] = bundle;
  j["spec"] = spec;
  j["sigs"] = sigs_path;
  j["whitelist"] = whitelist_path;
  j["out"] = out;
  j["seed"] = seed;
  j["K"] = K;
  j["cap"] = cap;
  j["train_frac"] = train_frac;
  j["experiment"] = experiment;
  j["stratified"] = stratified;
  j["last_obs"] = last_obs;
  return j.dump();
}

std::string content_hash(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

[[noreturn]] void fail(int code, const std::string& msg) { throw CliError(code, msg); }

void require_input(const std::string& path, const std::string& flag) {
  if (path.empty()) fail(kInputError, flag + " is required");
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) fail(kInputError, flag + ": no such file " + path);
  if (::access(path.c_str(), R_OK) != 0) fail(kInputError, flag + ": cannot read " + path);
}

void require_output_file(const std::string& path) {
  if (path.empty()) fail(kInputError, "--out is required");
  std::error_code ec;
  if (fs::is_directory(path, ec)) fail(kInputError, "--out: " + path + " is a directory");
  auto parent = fs::path(path).parent_path();
  if (parent.empty()) parent = ".";
  if (!fs::is_directory(parent, ec) || ::access(parent.c_str(), W_OK) != 0)
    fail(kInputError, "--out: cannot write into " + parent.string());
}

void require_output_dir(const std::string& path) {
  if (path.empty()) fail(kInputError, "--out is required");
  std::error_code ec;
  if (fs::exists(path, ec) && !fs::is_directory(path, ec))
    fail(kInputError, "--out: " + path + " is not a directory");
  fs::create_directories(path, ec);
  if (ec || ::access(path.c_str(), W_OK) != 0)
    fail(kInputError, "--out: cannot write into " + path);
}

template <class F>
auto parse_input(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    fail(kInputError, what + ": " + e.what());
  }
}

ApiSignatureDb load_sigs(const RunConfig& cfg) {
  if (cfg.sigs_path.empty()) return default_signature_db();
  return parse_input("--sigs", [&] { return ApiSignatureDb::from_json(read_file(cfg.sigs_path)); });
}

ConstantWhitelist load_whitelist(const RunConfig& cfg) {
  if (cfg.whitelist_path.empty()) return default_whitelist();
  return parse_input("--whitelist",
                     [&] { return ConstantWhitelist::from_json(read_file(cfg.whitelist_path)); });
}

void require_optional_inputs(const RunConfig& cfg) {
  if (!cfg.sigs_path.empty()) require_input(cfg.sigs_path, "--sigs");
  if (!cfg.whitelist_path.empty()) require_input(cfg.whitelist_path, "--whitelist");
}

json run_header(const RunConfig& cfg) {
  json j;
  j["run_config"] = json::parse(cfg.to_json());
  return j;
}

void write_json(const std::string& path, const json& j) { write_file_atomic(path, j.dump(1) + "\n"); }

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::vector<ApiCallRecord> load_records(const RunConfig& cfg) {
  return parse_input("--records", [&] { return parse_records(read_file(cfg.records)); });
}

ModelBundle load_bundle_checked(const RunConfig& cfg) {
  return parse_input("--bundle", [&] { return load_bundle(cfg.bundle); });
}

void print_report(std::ostream& out, const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: n_test=%zu top1=%.4f top5=%.4f baserate_top1=%.4f\n",
                r.name.c_str(), r.n_test, r.top(1), r.top(std::min<std::size_t>(5, r.topk.size())),
                r.baserate_topk.at(0));
  out << buf;
}

void write_report(const RunConfig& cfg, const std::string& json_path,
                  const std::vector<const EvalReport*>& reports, const std::string& csv_prefix) {
  auto j = run_header(cfg);
  j["reports"] = json::array();
  for (const auto* r : reports) {
    j["reports"].push_back(json::parse(r->to_json()));
    write_file_atomic(csv_prefix + r->name + ".csv", r->confusion_csv());
  }
  write_json(json_path, j);
}

Dataset labeled_subset(const std::vector<ApiCallRecord>& records,
                       const std::vector<std::string>& classes, std::size_t* foreign) {
  const std::set<std::string> known(classes.begin(), classes.end());
  Dataset ds;
  *foreign = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].api.empty()) continue;
    if (!known.count(records[i].api)) {
      ++*foreign;
      continue;
    }
    ds.records.push_back(records[i]);
    ds.origin.push_back(i);
  }
  return ds;
}

}  // namespace

void cmd_extract(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_input(cfg.listings, "--listings");
  require_input(cfg.imports, "--imports");
  require_optional_inputs(cfg);
  require_output_file(cfg.out);

  const auto sigs = load_sigs(cfg);
  const auto functions = parse_input("--listings", [&] { return parse_listing(read_file(cfg.listings)); });
  const auto imports = parse_input("--imports", [&] { return parse_import_table(read_file(cfg.imports)); });

  ExtractionDiagnostics diag;
  const auto records = cfg.parallel ? extract_corpus(functions, imports, sigs, cfg.seed, &diag)
                                    : extract_corpus_serial(functions, imports, sigs, cfg.seed, &diag);

  std::map<std::string, std::pair<std::size_t, std::size_t>> per_binary;  // functions, calls
  for (const auto& f : functions) ++per_binary[f.binary_id].first;
  std::map<std::string, std::size_t> per_api;
  for (const auto& r : records) {
    ++per_binary[r.binary_id].second;
    ++per_api[r.api];
  }
  for (const auto& [id, fc] : per_binary)
    out << "binary " << id << " functions=" << fc.first << " calls=" << fc.second << "\n";
  for (const auto& [api, n] : per_api) out << "api " << api << " calls=" << n << "\n";
  out << "total functions=" << diag.functions << " calls=" << records.size()
      << " degraded_paths=" << diag.degraded_paths << " invalid_functions=" << diag.invalid_functions
      << " unresolved_indirect=" << diag.unresolved_indirect << "\n";
  for (const auto& [name, n] : diag.unknown_signature)
    err << "warning: " << n << " calls to " << name << " have no signature entry\n";

  if (records.empty()) fail(kEmptyResult, "no API call records extracted");

  write_file_atomic(cfg.out, serialize_records(records));
  auto side = run_header(cfg);
  side["config_hash"] = content_hash(cfg.to_json());
  side["records"] = records.size();
  side["per_api"] = per_api;
  json pb = json::object();
  for (const auto& [id, fc] : per_binary) pb[id] = {{"functions", fc.first}, {"calls", fc.second}};
  side["per_binary"] = pb;
  side["diagnostics"] = {{"functions", diag.functions},
                         {"degraded_paths", diag.degraded_paths},
                         {"api_calls", diag.api_calls},
                         {"non_api_calls", diag.non_api_calls},
                         {"unresolved_indirect", diag.unresolved_indirect},
                         {"invalid_functions", diag.invalid_functions},
                         {"unknown_signature", diag.unknown_signature}};
  write_json(cfg.out + ".run.json", side);
}

void cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_input(cfg.records, "--records");
  require_optional_inputs(cfg);
  if (cfg.experiment != 1 && cfg.experiment != 2) fail(kInputError, "--experiment must be 1 or 2");
  if (cfg.K < 1) fail(kInputError, "-K must be positive");
  if (cfg.cap < 1) fail(kInputError, "--cap must be positive");
  if (!(cfg.train_frac > 0.0 && cfg.train_frac < 1.0))
    fail(kInputError, "--train-frac must be in (0, 1)");
  const auto last_obs = parse_input("--last-obs", [&] { return last_obs_mode_from_string(cfg.last_obs); });
  require_output_dir(cfg.out);

  const auto sigs = load_sigs(cfg);
  const auto whitelist = load_whitelist(cfg);
  const auto text = parse_input("--records", [&] { return read_file(cfg.records); });
  auto records = parse_input("--records", [&] { return parse_records(text); });

  std::vector<std::string> warnings;
  auto ds = assemble_dataset(std::move(records), sigs, sigs.names(), &warnings);
  ds.sources = {cfg.records};
  ds.extraction_hash = content_hash(text);
  const auto sidecar = cfg.records + ".run.json";
  if (fs::is_regular_file(sidecar)) {
    try {
      ds.extraction_hash = json::parse(read_file(sidecar)).at("config_hash").get<std::string>();
    } catch (const std::exception& e) {
      warnings.push_back("ignoring unreadable sidecar " + sidecar + ": " + e.what());
    }
  }
  const auto balanced = balance(ds, cfg.cap, cfg.seed, &warnings);
  const auto sp = split(balanced, cfg.train_frac, cfg.seed, cfg.stratified, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  const auto classes = present_classes(sp.train);
  if (classes.size() < 2)
    fail(kInsufficientData, "need at least two classes, found " + std::to_string(classes.size()));

  ExperimentConfig ec;
  ec.K = cfg.K;
  ec.seed = cfg.seed;
  ec.last_obs = last_obs;
  ec.abstraction.whitelist = whitelist;
  ec.sigs = sigs;
  ec.parallel = cfg.parallel;

  json provenance = run_header(cfg);
  provenance["sources"] = ds.sources;
  provenance["extraction_hash"] = ds.extraction_hash;
  provenance["class_counts"] = balanced.class_counts();

  ModelBundle bundle;
  std::vector<EvalReport> reports;
  if (cfg.experiment == 1) {
    auto r = run_experiment1(sp.train, sp.test, ec);
    bundle = std::move(r.bundle);
    reports = {std::move(r.sequential), std::move(r.bow)};
  } else {
    auto r = run_experiment2(sp.train, sp.test, ec);
    bundle = std::move(r.bundle);
    reports = {std::move(r.report)};
  }
  bundle.run_config = provenance.dump();
  for (const auto& r : reports) print_report(out, r);

  save_bundle(bundle, join(cfg.out, "bundle.json"));
  std::vector<const EvalReport*> ptrs;
  for (const auto& r : reports) ptrs.push_back(&r);
  write_report(cfg, join(cfg.out, "report.json"), ptrs, join(cfg.out, "confusion_"));

  auto split_json = provenance;
  split_json["train"] = sp.train.origin;
  split_json["test"] = sp.test.origin;
  write_json(join(cfg.out, "split.json"), split_json);
  const auto test_path = join(cfg.out, "test.jsonl");
  write_file_atomic(test_path, serialize_records(sp.test.records));
  write_json(test_path + ".run.json", provenance);
}

void cmd_predict(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_input(cfg.bundle, "--bundle");
  require_input(cfg.records, "--records");
  require_output_file(cfg.out);

  const auto bundle = load_bundle_checked(cfg);
  const auto records = load_records(cfg);
  if (records.empty()) fail(kEmptyResult, "no records to predict");

  const Predictor pred(bundle);
  const auto ranked =
      parse_input("--records", [&] { return pred.predict_all(records, cfg.parallel); });
  std::string lines;
  for (std::size_t i = 0; i < records.size(); ++i) {
    json j;
    j["index"] = i;
    j["binary_id"] = records[i].binary_id;
    j["call_addr"] = hex_string(records[i].call_addr);
    if (!records[i].api.empty()) j["label"] = records[i].api;
    json top = json::array();
    for (std::size_t k = 0; k < std::min<std::size_t>(5, ranked[i].size()); ++k)
      top.push_back({{"api", ranked[i][k].name}, {"p", ranked[i][k].probability}});
    j["top5"] = std::move(top);
    lines += j.dump() + "\n";
  }
  write_file_atomic(cfg.out, lines);

  std::size_t foreign = 0;
  const auto labeled = labeled_subset(records, bundle.classes, &foreign);
  if (foreign) err << "warning: " << foreign << " records have labels outside the bundle's classes\n";
  auto side = run_header(cfg);
  side["bundle_hash"] = content_hash(read_file(cfg.bundle));
  side["records"] = records.size();
  side["labeled"] = labeled.records.size();
  write_json(cfg.out + ".run.json", side);
  out << "predicted " << records.size() << " records\n";

  if (!labeled.records.empty()) {
    const auto report = evaluate_bundle(bundle, labeled, "predict", cfg.parallel);
    print_report(out, report);
    write_report(cfg, cfg.out + ".report.json", {&report}, cfg.out + ".confusion_");
  }
}

void cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require_input(cfg.bundle, "--bundle");
  require_input(cfg.records, "--records");
  require_output_file(cfg.out);

  const auto bundle = load_bundle_checked(cfg);
  const auto records = load_records(cfg);
  std::size_t foreign = 0;
  const auto labeled = labeled_subset(records, bundle.classes, &foreign);
  if (foreign) err << "warning: " << foreign << " records have labels outside the bundle's classes\n";
  if (labeled.records.empty()) fail(kEmptyResult, "no labeled records for the bundle's classes");

  const auto report = parse_input(
      "--records", [&] { return evaluate_bundle(bundle, labeled, "eval", cfg.parallel); });
  print_report(out, report);
  write_report(cfg, cfg.out, {&report}, cfg.out + ".confusion_");
}

void cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  if (!cfg.spec.empty()) require_input(cfg.spec, "--spec");
  require_optional_inputs(cfg);
  require_output_dir(cfg.out);

  const auto sigs = load_sigs(cfg);
  auto spec = cfg.spec.empty() ? default_synth_spec(cfg.seed)
                               : parse_input("--spec", [&] { return SynthSpec::from_json(read_file(cfg.spec)); });
  spec.seed = cfg.seed;
  parse_input("--spec", [&] {
    spec.validate(sigs);
    return 0;
  });

  const auto corpus = generate(spec);
  std::set<std::string> binaries;
  for (const auto& f : corpus.functions) binaries.insert(f.binary_id);
  std::map<std::string, std::size_t> per_api;
  for (const auto& t : corpus.truth) ++per_api[t.api];
  for (const auto& [api, n] : per_api) out << "api " << api << " planted=" << n << "\n";
  out << "total binaries=" << binaries.size() << " functions=" << corpus.functions.size()
      << " planted=" << corpus.truth.size() << "\n";

  write_file_atomic(join(cfg.out, "listings.jsonl"), serialize_listing(corpus.functions));
  write_file_atomic(join(cfg.out, "imports.json"), serialize_import_table(corpus.imports) + "\n");
  write_file_atomic(join(cfg.out, "signatures.json"), corpus.sigs.to_json() + "\n");
  write_file_atomic(join(cfg.out, "truth.jsonl"), truth_to_jsonl(corpus.truth));
  write_file_atomic(join(cfg.out, "spec.json"), spec.to_json() + "\n");
  auto side = run_header(cfg);
  side["planted"] = corpus.truth.size();
  side["per_api"] = per_api;
  side["files"] = {"listings.jsonl", "imports.json", "signatures.json", "truth.jsonl", "spec.json"};
  write_json(join(cfg.out, "run.json"), side);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Windows API call deobfuscation from call-site arguments"};
  app.require_subcommand(1);
  RunConfig cfg;
  bool serial = false;
  bool non_stratified = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--sigs", cfg.sigs_path, "API signature db (JSON object name -> n_args)");
    sub->add_option("--seed", cfg.seed, "Master seed");
    sub->add_flag("--serial", serial, "Run every kernel single-threaded");
  };

  auto* extract = app.add_subcommand("extract", "Extract call-site records from listings");
  extract->add_option("--listings", cfg.listings, "Function listings (JSONL)")->required();
  extract->add_option("--imports", cfg.imports, "Import table (JSON)")->required();
  extract->add_option("--out", cfg.out, "Output records (JSONL)")->required();
  add_common(extract);

  auto* train = app.add_subcommand("train", "Balance, split, train and evaluate");
  train->add_option("--records", cfg.records, "Labeled records (JSONL)")->required();
  train->add_option("--out", cfg.out, "Output directory")->required();
  train->add_option("--experiment", cfg.experiment, "1 (known n_args) or 2 (HMM bank)");
  train->add_option("-K,--states", cfg.K, "Hidden states per HMM");
  train->add_option("--cap", cfg.cap, "Records kept per class");
  train->add_option("--train-frac", cfg.train_frac, "Training fraction per class");
  train->add_option("--last-obs", cfg.last_obs, "predictive or stationary");
  train->add_option("--whitelist", cfg.whitelist_path, "Constant whitelist (JSON array)");
  train->add_flag("--non-stratified", non_stratified, "Split without stratifying by class");
  add_common(train);

  auto* predict = app.add_subcommand("predict", "Rank candidate APIs for each record");
  predict->add_option("--bundle", cfg.bundle, "Model bundle")->required();
  predict->add_option("--records", cfg.records, "Records, labels optional (JSONL)")->required();
  predict->add_option("--out", cfg.out, "Output predictions (JSONL)")->required();
  add_common(predict);

  auto* eval = app.add_subcommand("eval", "Evaluate a bundle on labeled records");
  eval->add_option("--bundle", cfg.bundle, "Model bundle")->required();
  eval->add_option("--records", cfg.records, "Labeled records (JSONL)")->required();
  eval->add_option("--out", cfg.out, "Output report (JSON)")->required();
  add_common(eval);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--spec", cfg.spec, "SynthSpec JSON; defaults are used without it");
  synth->add_option("--out", cfg.out, "Output directory")->required();
  add_common(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputError;
  }
  cfg.parallel = !serial;
  cfg.stratified = !non_stratified;

  try {
    if (extract->parsed()) {
      cfg.subcommand = "extract";
      cmd_extract(cfg, out, err);
    } else if (train->parsed()) {
      cfg.subcommand = "train";
      cmd_train(cfg, out, err);
    } else if (predict->parsed()) {
      cfg.subcommand = "predict";
      cmd_predict(cfg, out, err);
    } else if (eval->parsed()) {
      cfg.subcommand = "eval";
      cmd_eval(cfg, out, err);
    } else {
      cfg.subcommand = "synth";
      cmd_synth(cfg, out, err);
    }
  } catch (const CliError& e) {
    err << "error: " << e.what() << "\n";
    return e.code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInputError;
  }
  return kOk;
}

}  // namespace apideob::cli
