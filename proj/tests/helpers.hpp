#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "apideob/cli.hpp"
#include "apideob/hmm.hpp"
#include "apideob/listing.hpp"
#include "apideob/synth.hpp"

namespace testing {

using namespace apideob;

inline Operand reg(const char* name) { return *parse_register(name); }
inline Operand imm(std::uint32_t v) { return Immediate{v}; }

inline Operand mem(std::optional<Register> base, std::int32_t disp, std::uint8_t size = 4) {
  MemoryRef m;
  m.base = base;
  m.disp = disp;
  m.size = size;
  return m;
}
inline Operand ebp(std::int32_t disp, std::uint8_t size = 4) { return mem(Register::ebp, disp, size); }
inline Operand abs_mem(std::uint32_t addr, std::uint8_t size = 4) {
  return mem(std::nullopt, static_cast<std::int32_t>(addr), size);
}

struct Asm {
  std::uint32_t addr = 0x401000;
  std::vector<Instruction> out;

  Asm& operator()(std::string mn, std::vector<Operand> ops = {}) {
    out.push_back(make_instruction(addr, std::move(mn), std::move(ops)));
    addr += 4;
    return *this;
  }
  // Address the next instruction will get.
  std::uint32_t here() const { return addr; }

  FunctionListing function(std::string binary = "bin") const {
    FunctionListing f;
    f.binary_id = std::move(binary);
    f.entry_addr = out.empty() ? 0 : out.front().addr;
    f.instructions = out;
    f.image_range = {0x400000, 0x500000};
    return f;
  }
};

// Brute-force log P(y) by summing the complete-data likelihood over all K^T
// state paths.
inline double enumerate_loglik(const HmmParams& p, const std::vector<std::size_t>& y) {
  const auto K = p.K;
  const auto T = y.size();
  std::vector<std::size_t> s(T, 0);
  double total = 0.0;
  while (true) {
    double pr = p.pi[s[0]] * p.B(s[0], y[0]);
    for (std::size_t t = 1; t < T; ++t) pr *= p.A(s[t - 1], s[t]) * p.B(s[t], y[t]);
    total += pr;
    std::size_t t = 0;
    while (t < T && ++s[t] == K) s[t++] = 0;
    if (t == T) break;
  }
  return std::log(total);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() /
           ("apideob_" + name + "_" + std::to_string(std::random_device{}()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Smaller corpus for fast end-to-end checks.
inline SynthSpec small_synth_spec(std::uint64_t seed, std::size_t lo = 24, std::size_t hi = 28) {
  auto s = default_synth_spec(seed);
  s.calls_per_api_min = lo;
  s.calls_per_api_max = hi;
  s.functions_per_binary = 20;
  return s;
}

struct CliResult {
  int code = 0;
  std::string out, err;
};

inline CliResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "apideob");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace testing
