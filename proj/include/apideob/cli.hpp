#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace apideob::cli {

enum ExitCode : int {
  kOk = 0,
  kInputError = 2,
  kEmptyResult = 3,
  kInsufficientData = 4,
};

class CliError : public std::runtime_error {
 public:
  CliError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

struct RunConfig {
  std::string subcommand;

  std::string listings;
  std::string imports;
  std::string records;
  std::string bundle;
  std::string spec;
  std::string sigs_path;       // empty: built-in signature db
  std::string whitelist_path;  // empty: built-in whitelist
  std::string out;             // file for extract/predict/eval, directory for train/synth

  std::uint64_t seed = 1;
  std::size_t K = 10;
  std::size_t cap = 400;
  double train_frac = 0.8;
  int experiment = 2;
  bool stratified = true;
  std::string last_obs = "predictive";
  bool parallel = true;

  std::string to_json() const;
};

// FNV-1a over `text`, as 16 hex digits.
std::string content_hash(std::string_view text);

// Each command validates its paths before doing any work and throws CliError
// with the exit code on failure.
void cmd_extract(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_predict(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_eval(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// Parses argv and dispatches; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace apideob::cli
