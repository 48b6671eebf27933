#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "apideob/argrep.hpp"
#include "apideob/listing.hpp"

namespace apideob {

enum class SlotKind : std::uint8_t { Small, Const, Scale, Ptr, Reg, Var, Mem, Ret, Expr };

// One outcome of an argument slot. Small/Const carry `value`, Scale carries
// the hex digit count in `digits`.
struct SlotChoice {
  SlotKind kind = SlotKind::Small;
  std::uint32_t value = 0;
  int digits = 0;
  double p = 0.0;
};

// Parses "var:.5 mem:.3 0x146:.2" style slot descriptions. Outcomes are
// decimal small constants, hex constants, d2..d4 (arbitrary integers of that
// many hex digits), ptr, reg, var, mem, ret and expr.
std::vector<SlotChoice> parse_slot(std::string_view text);
std::string format_slot(const std::vector<SlotChoice>& slot);

struct ApiProfile {
  std::string name;
  std::vector<std::vector<SlotChoice>> slots;  // one per argument
};

struct SynthSpec {
  std::vector<ApiProfile> profiles;
  std::size_t calls_per_api_min = 420;
  std::size_t calls_per_api_max = 460;
  std::size_t calls_per_function_min = 1;
  std::size_t calls_per_function_max = 4;
  std::size_t functions_per_binary = 40;
  double junk_rate = 0.35;       // chance of a junk instruction before each push
  double branch_density = 0.25;  // chance of a junk diamond or loop before each call
  double thunk_rate = 0.2;
  double register_call_rate = 0.15;
  double noise_call_rate = 0.1;  // calls to imports without a signature entry
  double tail_jump_rate = 0.1;
  std::uint64_t seed = 1;

  // Throws ValidationError unless every profile matches `sigs` and every
  // slot distribution sums to one.
  void validate(const ApiSignatureDb& sigs) const;
  std::string to_json() const;
  static SynthSpec from_json(std::string_view text);
};

// Profiles for the 25 default APIs.
std::vector<ApiProfile> default_profiles();
SynthSpec default_synth_spec(std::uint64_t seed = 1);

struct PlantedCall {
  std::string binary_id;
  std::uint32_t call_addr = 0;
  std::string api;
  std::string import_name;
  int n_args = 0;
  std::vector<Token> tokens;  // expected abstraction of the n_args arguments
};

struct SynthCorpus {
  std::vector<FunctionListing> functions;
  ImportTable imports;
  ApiSignatureDb sigs;
  std::vector<PlantedCall> truth;
};

SynthCorpus generate(const SynthSpec& spec);

std::string truth_to_jsonl(const std::vector<PlantedCall>& truth);
std::vector<PlantedCall> truth_from_jsonl(std::string_view text);

}  // namespace apideob
