#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace apideob {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The eight general-purpose 32-bit registers, in x86 encoding order.
enum class Register : std::uint8_t { eax, ecx, edx, ebx, esp, ebp, esi, edi };
inline constexpr std::size_t kRegisterCount = 8;

// A register operand: the canonical 32-bit register plus the accessed width.
// `high_byte` distinguishes ah/ch/dh/bh from al/cl/dl/bl.
struct RegisterRef {
  Register reg = Register::eax;
  std::uint8_t size = 4;
  bool high_byte = false;

  bool operator==(const RegisterRef&) const = default;
};

std::optional<RegisterRef> parse_register(std::string_view name);
std::string_view register_name(Register reg);
std::string_view register_name(const RegisterRef& ref);
std::optional<Register> parse_register32(std::string_view name);

struct Immediate {
  std::uint32_t value = 0;

  bool operator==(const Immediate&) const = default;
};

struct MemoryRef {
  std::optional<Register> base;
  std::optional<Register> index;
  std::uint8_t scale = 1;
  std::int32_t disp = 0;
  std::uint8_t size = 4;

  bool operator==(const MemoryRef&) const = default;
};

using Operand = std::variant<RegisterRef, Immediate, MemoryRef>;

enum class OpClass : std::uint8_t { Supported, Call, Branch, Return, Other };

OpClass classify_mnemonic(std::string_view mnemonic);
bool is_conditional_branch(std::string_view mnemonic);

struct Instruction {
  std::uint32_t addr = 0;
  std::string mnemonic;
  std::vector<Operand> operands;
  OpClass op_class = OpClass::Other;

  bool operator==(const Instruction&) const = default;
};

// Builds an instruction, classifying the mnemonic and checking arity.
// Throws ValidationError on an arity mismatch for a classified mnemonic.
Instruction make_instruction(std::uint32_t addr, std::string mnemonic,
                             std::vector<Operand> operands);

struct ImageRange {
  std::uint32_t low = 0;
  std::uint32_t high = 0;  // exclusive

  bool contains(std::uint32_t v) const { return v >= low && v < high; }
  bool operator==(const ImageRange&) const = default;
};

struct FunctionListing {
  std::string binary_id;
  std::uint32_t entry_addr = 0;
  std::vector<Instruction> instructions;
  ImageRange image_range;

  bool operator==(const FunctionListing&) const = default;
};

// Checks addresses strictly increase and entry matches the first instruction.
void validate_listing(const FunctionListing& f);

// JSONL: one function per line, blank lines ignored.
std::vector<FunctionListing> parse_listing(std::string_view text);
std::string serialize_listing(const std::vector<FunctionListing>& functions);
std::string serialize_function(const FunctionListing& f);

// Call-target address -> imported API name.
using ImportTable = std::map<std::uint32_t, std::string>;

ImportTable parse_import_table(std::string_view json_text);
std::string serialize_import_table(const ImportTable& table);

// API name -> argument count, restricted to 3..12.
class ApiSignatureDb {
 public:
  ApiSignatureDb() = default;
  explicit ApiSignatureDb(std::map<std::string, int> entries);

  static ApiSignatureDb from_json(std::string_view json_text);
  std::string to_json() const;

  std::optional<int> n_args(std::string_view name) const;

  // Maps an import name to its signature entry. Exact match first, then the
  // name with a trailing ANSI/wide 'A'/'W' suffix stripped.
  std::optional<std::pair<std::string, int>> resolve(std::string_view import_name) const;

  const std::map<std::string, int>& entries() const { return entries_; }
  std::vector<std::string> names() const;

 private:
  std::map<std::string, int> entries_;
};

// The 25 API functions the models are trained on, sorted by name.
const std::vector<std::string>& default_api_names();
ApiSignatureDb default_signature_db();

std::uint32_t parse_address(std::string_view text);
std::string hex_string(std::uint32_t value);  // "0x1068EEC"

}  // namespace apideob
