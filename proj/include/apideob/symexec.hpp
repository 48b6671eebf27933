#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "apideob/cfg.hpp"
#include "apideob/listing.hpp"

namespace apideob {

inline constexpr std::size_t kMaxArgs = 12;
inline constexpr int kMaxExprDepth = 16;

struct SymValue;
using SymPtr = std::shared_ptr<const SymValue>;

enum class ExprOp : char { Add = '+', Sub = '-', Xor = '^' };

struct Concrete {
  std::uint32_t value = 0;
  bool operator==(const Concrete&) const = default;
};
struct RegAtom {
  Register reg = Register::eax;
  bool operator==(const RegAtom&) const = default;
};
// Unknown value read from [ebp+offset]: a function argument, "arg_<off>h".
struct ArgAtom {
  std::uint32_t offset = 0;
  bool operator==(const ArgAtom&) const = default;
};
// Unknown value read from [ebp-offset]: a local variable, "var_<off>h".
struct VarAtom {
  std::uint32_t offset = 0;
  bool operator==(const VarAtom&) const = default;
};
// Fresh unknown m_i for any other address (and for partial-register writes).
struct MemAtom {
  std::uint32_t index = 0;
  bool operator==(const MemAtom&) const = default;
};
struct RetAtom {
  bool operator==(const RetAtom&) const = default;
};
struct StarAtom {
  bool operator==(const StarAtom&) const = default;
};
struct ExprNode {
  ExprOp op = ExprOp::Add;
  SymPtr lhs;
  SymPtr rhs;
  int depth = 1;
};

struct SymValue {
  std::variant<Concrete, RegAtom, ArgAtom, VarAtom, MemAtom, RetAtom, StarAtom, ExprNode> v;

  SymValue() : v(StarAtom{}) {}
  template <class T>
    requires(!std::is_same_v<std::decay_t<T>, SymValue>)
  SymValue(T atom) : v(std::move(atom)) {}  // NOLINT(google-explicit-constructor)

  bool is_concrete() const { return std::holds_alternative<Concrete>(v); }
  std::uint32_t concrete() const { return std::get<Concrete>(v).value; }
  int depth() const;
  std::string to_string() const;
};

bool operator==(const SymValue& a, const SymValue& b);

// Leaves of depth 0; combining two concrete values folds mod 2^32.
SymValue make_expr(ExprOp op, const SymValue& lhs, const SymValue& rhs);

struct MachineState {
  std::array<SymValue, kRegisterCount> registers;
  std::vector<SymValue> stack;  // back() is the top slot
  std::map<std::string, SymValue> memory;
  std::uint32_t mem_counter = 0;

  static MachineState initial();
  SymValue& reg(Register r) { return registers[static_cast<std::size_t>(r)]; }
  const SymValue& reg(Register r) const { return registers[static_cast<std::size_t>(r)]; }
  SymValue fresh_mem() { return MemAtom{mem_counter++}; }
};

// "ebp-0xC", "eax+ecx*4+0x10", "0x1068EEC".
std::string address_string(const MemoryRef& m);
// "<size>:<address string>", e.g. "4:ebp-0xC".
std::string memory_key(const MemoryRef& m);

SymValue read_mem(MachineState& state, const MemoryRef& m);
void write_mem(MachineState& state, const MemoryRef& m, SymValue value);

// Applies push, pop, mov, lea, xor, add, sub, inc or dec; anything else leaves
// the state unchanged. Calls are handled by execute_path.
void step(MachineState& state, const Instruction& ins);

// Abstraction-ready projection of a SymValue, as stored in call records.
enum class ArgTag : std::uint8_t { Int, Reg, Arg, Var, Mem, Ret, Star, Expr };

struct ArgValue {
  ArgTag tag = ArgTag::Star;
  std::uint32_t value = 0;  // meaningful for Int only
  bool operator==(const ArgValue&) const = default;
};

ArgValue project(const SymValue& v);

struct ApiCallRecord {
  std::string binary_id;
  std::uint32_t call_addr = 0;
  std::string api;
  int n_args = 0;
  std::array<ArgValue, kMaxArgs> raw_args{};  // top of stack first
  ImageRange image_range;

  bool operator==(const ApiCallRecord&) const = default;
};

std::string record_to_json(const ApiCallRecord& rec);
ApiCallRecord record_from_json(std::string_view line);
std::vector<ApiCallRecord> parse_records(std::string_view jsonl);
std::string serialize_records(const std::vector<ApiCallRecord>& records);

// Resolves call targets to import names, either directly or through one-hop
// thunks (functions whose first instruction jumps to an import).
class CallResolver {
 public:
  CallResolver() = default;
  explicit CallResolver(const ImportTable* imports) : imports_(imports) {}

  void add_thunk(std::uint32_t addr, std::string name) { thunks_[addr] = std::move(name); }
  // Registers every function in `functions` whose first instruction is a
  // jump to an import (immediate target or absolute IAT slot).
  void add_thunks_from(std::span<const FunctionListing> functions);

  const std::string* resolve(std::uint32_t target) const;

 private:
  const ImportTable* imports_ = nullptr;
  std::map<std::uint32_t, std::string> thunks_;
};

struct ExtractionDiagnostics {
  std::size_t functions = 0;
  std::size_t degraded_paths = 0;
  std::size_t api_calls = 0;
  std::size_t non_api_calls = 0;
  std::size_t unresolved_indirect = 0;
  std::size_t invalid_functions = 0;
  std::map<std::string, std::size_t> unknown_signature;  // import name -> count

  void merge(const ExtractionDiagnostics& other);
};

std::vector<ApiCallRecord> execute_path(const FunctionListing& f, const Cfg& g,
                                        std::span<const std::size_t> path,
                                        const CallResolver& resolver, const ApiSignatureDb& sigs,
                                        ExtractionDiagnostics* diag = nullptr);

// build_cfg -> select_path -> execute_path for one function. The path seed is
// derived from `seed`, the binary id and the entry address.
std::vector<ApiCallRecord> extract_function(const FunctionListing& f, const CallResolver& resolver,
                                            const ApiSignatureDb& sigs, std::uint64_t seed,
                                            ExtractionDiagnostics* diag = nullptr);

// Runs extraction over a corpus. Thunks are resolved per binary. Output order
// follows input order for both variants.
std::vector<ApiCallRecord> extract_corpus_serial(std::span<const FunctionListing> functions,
                                                 const ImportTable& imports,
                                                 const ApiSignatureDb& sigs, std::uint64_t seed,
                                                 ExtractionDiagnostics* diag = nullptr);
std::vector<ApiCallRecord> extract_corpus(std::span<const FunctionListing> functions,
                                          const ImportTable& imports, const ApiSignatureDb& sigs,
                                          std::uint64_t seed,
                                          ExtractionDiagnostics* diag = nullptr);

}  // namespace apideob
