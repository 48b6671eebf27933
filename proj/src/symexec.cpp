#include "apideob/symexec.hpp"

#include <algorithm>
#include <cstdio>

#include "apideob/seed.hpp"
#include "json.hpp"

namespace apideob {

using nlohmann::json;

namespace {

std::string hex_digits(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%X", v);
  return buf;
}

std::uint32_t width_mask(std::uint8_t size) {
  switch (size) {
    case 1:
      return 0xFFu;
    case 2:
      return 0xFFFFu;
    default:
      return 0xFFFFFFFFu;
  }
}

std::uint32_t fold(ExprOp op, std::uint32_t a, std::uint32_t b) {
  switch (op) {
    case ExprOp::Add:
      return a + b;
    case ExprOp::Sub:
      return a - b;
    case ExprOp::Xor:
      return a ^ b;
  }
  return 0;
}

}  // namespace

int SymValue::depth() const {
  if (const auto* e = std::get_if<ExprNode>(&v)) return e->depth;
  return 0;
}

std::string SymValue::to_string() const {
  struct Visitor {
    std::string operator()(const Concrete& c) const { return hex_string(c.value); }
    std::string operator()(const RegAtom& r) const { return std::string(register_name(r.reg)); }
    std::string operator()(const ArgAtom& a) const { return "arg_" + hex_digits(a.offset) + "h"; }
    std::string operator()(const VarAtom& a) const { return "var_" + hex_digits(a.offset) + "h"; }
    std::string operator()(const MemAtom& m) const { return "m_" + std::to_string(m.index); }
    std::string operator()(const RetAtom&) const { return "ret"; }
    std::string operator()(const StarAtom&) const { return "*"; }
    std::string operator()(const ExprNode& e) const {
      return "(" + e.lhs->to_string() + " " + static_cast<char>(e.op) + " " + e.rhs->to_string() +
             ")";
    }
  };
  return std::visit(Visitor{}, v);
}

bool operator==(const SymValue& a, const SymValue& b) {
  if (a.v.index() != b.v.index()) return false;
  if (const auto* ea = std::get_if<ExprNode>(&a.v)) {
    const auto& eb = std::get<ExprNode>(b.v);
    return ea->op == eb.op && *ea->lhs == *eb.lhs && *ea->rhs == *eb.rhs;
  }
  return std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, ExprNode>) {
          return false;
        } else {
          return x == std::get<T>(b.v);
        }
      },
      a.v);
}

SymValue make_expr(ExprOp op, const SymValue& lhs, const SymValue& rhs) {
  if (lhs.is_concrete() && rhs.is_concrete()) return Concrete{fold(op, lhs.concrete(), rhs.concrete())};
  ExprNode e;
  e.op = op;
  e.lhs = std::make_shared<const SymValue>(lhs);
  e.rhs = std::make_shared<const SymValue>(rhs);
  e.depth = 1 + std::max(lhs.depth(), rhs.depth());
  return e;
}

MachineState MachineState::initial() {
  MachineState s;
  for (std::size_t i = 0; i < kRegisterCount; ++i) s.registers[i] = RegAtom{static_cast<Register>(i)};
  return s;
}

std::string address_string(const MemoryRef& m) {
  if (!m.base && !m.index) return hex_string(static_cast<std::uint32_t>(m.disp));
  std::string s;
  if (m.base) s += register_name(*m.base);
  if (m.index) {
    if (!s.empty()) s += '+';
    s += register_name(*m.index);
    s += '*';
    s += std::to_string(m.scale);
  }
  if (m.disp > 0) {
    s += "+" + hex_string(static_cast<std::uint32_t>(m.disp));
  } else if (m.disp < 0) {
    const auto magnitude = static_cast<std::uint32_t>(-static_cast<std::int64_t>(m.disp));
    s += "-" + hex_string(magnitude);
  }
  return s;
}

std::string memory_key(const MemoryRef& m) {
  return std::to_string(m.size) + ":" + address_string(m);
}

namespace {

// [esp+k] maps onto the slot k/4 below the top when that slot exists.
std::optional<std::size_t> stack_slot(const MachineState& s, const MemoryRef& m) {
  if (m.base != Register::esp || m.index || m.size != 4 || m.disp < 0 || m.disp % 4 != 0)
    return std::nullopt;
  const auto k = static_cast<std::size_t>(m.disp / 4);
  if (k >= s.stack.size()) return std::nullopt;
  return s.stack.size() - 1 - k;
}

SymValue combine(MachineState& s, ExprOp op, const SymValue& l, const SymValue& r,
                 std::uint8_t size) {
  if (l.is_concrete() && r.is_concrete())
    return Concrete{fold(op, l.concrete(), r.concrete()) & width_mask(size)};
  auto e = make_expr(op, l, r);
  if (e.depth() > kMaxExprDepth) return s.fresh_mem();
  return e;
}

SymValue read_reg(const MachineState& s, const RegisterRef& r) {
  const auto& v = s.reg(r.reg);
  if (r.size == 4 || !v.is_concrete()) return v;
  const auto c = v.concrete();
  if (r.size == 2) return Concrete{c & 0xFFFFu};
  return Concrete{r.high_byte ? (c >> 8) & 0xFFu : c & 0xFFu};
}

void write_reg(MachineState& s, const RegisterRef& r, SymValue v) {
  if (r.size == 4) {
    s.reg(r.reg) = std::move(v);
    return;
  }
  if (v.is_concrete()) {
    auto c = v.concrete() & width_mask(r.size);
    if (r.high_byte) c <<= 8;
    s.reg(r.reg) = Concrete{c};
  } else {
    s.reg(r.reg) = s.fresh_mem();
  }
}

std::uint8_t operand_size(const Operand& op) {
  if (const auto* r = std::get_if<RegisterRef>(&op)) return r->size;
  if (const auto* m = std::get_if<MemoryRef>(&op)) return m->size;
  return 4;
}

SymValue eval(MachineState& s, const Operand& op) {
  if (const auto* r = std::get_if<RegisterRef>(&op)) return read_reg(s, *r);
  if (const auto* i = std::get_if<Immediate>(&op)) return Concrete{i->value};
  return read_mem(s, std::get<MemoryRef>(op));
}

void write(MachineState& s, const Operand& op, SymValue v) {
  if (const auto* r = std::get_if<RegisterRef>(&op)) {
    write_reg(s, *r, std::move(v));
  } else if (const auto* m = std::get_if<MemoryRef>(&op)) {
    write_mem(s, *m, std::move(v));
  }
}

SymValue address_value(MachineState& s, const MemoryRef& m) {
  std::optional<SymValue> acc;
  if (m.base) acc = s.reg(*m.base);
  if (m.index) {
    SymValue scaled = s.reg(*m.index);
    for (unsigned f = 1; f < m.scale; f *= 2) scaled = combine(s, ExprOp::Add, scaled, scaled, 4);
    acc = acc ? combine(s, ExprOp::Add, *acc, scaled, 4) : scaled;
  }
  if (!acc) return Concrete{static_cast<std::uint32_t>(m.disp)};
  if (m.disp > 0) return combine(s, ExprOp::Add, *acc, Concrete{static_cast<std::uint32_t>(m.disp)}, 4);
  if (m.disp < 0) {
    const auto magnitude = static_cast<std::uint32_t>(-static_cast<std::int64_t>(m.disp));
    return combine(s, ExprOp::Sub, *acc, Concrete{magnitude}, 4);
  }
  return *acc;
}

bool is_esp(const Operand& op) {
  const auto* r = std::get_if<RegisterRef>(&op);
  return r && r->reg == Register::esp && r->size == 4;
}

// add/sub esp, k with concrete k moves the slot stack by k/4 slots.
void adjust_stack(MachineState& s, bool release, std::uint32_t amount) {
  auto slots = static_cast<std::int64_t>(static_cast<std::int32_t>(amount)) / 4;
  if (!release) slots = -slots;
  if (slots > 0) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(slots), s.stack.size());
    s.stack.resize(s.stack.size() - n);
  } else if (slots < 0) {
    s.stack.insert(s.stack.end(), static_cast<std::size_t>(-slots), SymValue{StarAtom{}});
  }
}

}  // namespace

SymValue read_mem(MachineState& state, const MemoryRef& m) {
  if (auto slot = stack_slot(state, m)) return state.stack[*slot];
  auto key = memory_key(m);
  if (auto it = state.memory.find(key); it != state.memory.end()) return it->second;
  SymValue v;
  if (m.base == Register::ebp && !m.index && m.disp > 0) {
    v = ArgAtom{static_cast<std::uint32_t>(m.disp)};
  } else if (m.base == Register::ebp && !m.index && m.disp < 0) {
    v = VarAtom{static_cast<std::uint32_t>(-static_cast<std::int64_t>(m.disp))};
  } else {
    v = state.fresh_mem();
  }
  state.memory.emplace(std::move(key), v);
  return v;
}

void write_mem(MachineState& state, const MemoryRef& m, SymValue value) {
  if (value.is_concrete()) value = Concrete{value.concrete() & width_mask(m.size)};
  if (auto slot = stack_slot(state, m)) {
    state.stack[*slot] = std::move(value);
    return;
  }
  state.memory[memory_key(m)] = std::move(value);
}

void step(MachineState& s, const Instruction& ins) {
  if (ins.op_class != OpClass::Supported) return;
  const auto& mn = ins.mnemonic;
  const auto& ops = ins.operands;
  if (mn == "push") {
    s.stack.push_back(eval(s, ops[0]));
  } else if (mn == "pop") {
    SymValue top;
    if (!s.stack.empty()) {
      top = std::move(s.stack.back());
      s.stack.pop_back();
    }
    write(s, ops[0], std::move(top));
  } else if (mn == "mov") {
    write(s, ops[0], eval(s, ops[1]));
  } else if (mn == "lea") {
    if (const auto* m = std::get_if<MemoryRef>(&ops[1])) write(s, ops[0], address_value(s, *m));
  } else if (mn == "xor" && ops[0] == ops[1]) {
    write(s, ops[0], Concrete{0});
  } else if (mn == "xor" || mn == "add" || mn == "sub") {
    const auto op = mn == "xor" ? ExprOp::Xor : (mn == "add" ? ExprOp::Add : ExprOp::Sub);
    auto rhs = eval(s, ops[1]);
    if (op != ExprOp::Xor && is_esp(ops[0]) && rhs.is_concrete()) {
      adjust_stack(s, op == ExprOp::Add, rhs.concrete());
      return;
    }
    auto lhs = eval(s, ops[0]);
    write(s, ops[0], combine(s, op, lhs, rhs, operand_size(ops[0])));
  } else if (mn == "inc" || mn == "dec") {
    auto lhs = eval(s, ops[0]);
    write(s, ops[0], combine(s, mn == "inc" ? ExprOp::Add : ExprOp::Sub, lhs, Concrete{1},
                             operand_size(ops[0])));
  }
}

ArgValue project(const SymValue& v) {
  struct Visitor {
    ArgValue operator()(const Concrete& c) const { return {ArgTag::Int, c.value}; }
    ArgValue operator()(const RegAtom&) const { return {ArgTag::Reg, 0}; }
    ArgValue operator()(const ArgAtom&) const { return {ArgTag::Arg, 0}; }
    ArgValue operator()(const VarAtom&) const { return {ArgTag::Var, 0}; }
    ArgValue operator()(const MemAtom&) const { return {ArgTag::Mem, 0}; }
    ArgValue operator()(const RetAtom&) const { return {ArgTag::Ret, 0}; }
    ArgValue operator()(const StarAtom&) const { return {ArgTag::Star, 0}; }
    ArgValue operator()(const ExprNode&) const { return {ArgTag::Expr, 0}; }
  };
  return std::visit(Visitor{}, v.v);
}

namespace {

constexpr std::array<std::string_view, 8> kTagNames = {"int", "reg", "arg", "var",
                                                       "mem", "ret", "star", "expr"};

json arg_to_json(const ArgValue& a) {
  json j = {{"t", kTagNames[static_cast<std::size_t>(a.tag)]}};
  if (a.tag == ArgTag::Int) j["v"] = a.value;
  return j;
}

ArgValue arg_from_json(const json& j) {
  const auto t = j.at("t").get<std::string>();
  for (std::size_t i = 0; i < kTagNames.size(); ++i) {
    if (t == kTagNames[i]) {
      ArgValue a{static_cast<ArgTag>(i), 0};
      if (a.tag == ArgTag::Int) a.value = j.at("v").get<std::uint32_t>();
      return a;
    }
  }
  throw ParseError("unknown symvalue tag '" + t + "'");
}

}  // namespace

std::string record_to_json(const ApiCallRecord& rec) {
  json args = json::array();
  for (const auto& a : rec.raw_args) args.push_back(arg_to_json(a));
  json j = {{"binary_id", rec.binary_id},
            {"call_addr", rec.call_addr},
            {"api", rec.api},
            {"n_args", rec.n_args},
            {"raw_args", std::move(args)},
            {"image_range", {rec.image_range.low, rec.image_range.high}}};
  return j.dump();
}

ApiCallRecord record_from_json(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  try {
    ApiCallRecord r;
    r.binary_id = j.value("binary_id", std::string{});
    r.call_addr = j.value("call_addr", std::uint32_t{0});
    r.api = j.value("api", std::string{});
    r.n_args = j.value("n_args", 0);
    const auto& args = j.at("raw_args");
    if (args.size() > kMaxArgs) throw ParseError("raw_args holds more than 12 values");
    std::size_t i = 0;
    for (const auto& a : args) r.raw_args[i++] = arg_from_json(a);
    for (; i < kMaxArgs; ++i) r.raw_args[i] = ArgValue{};
    if (j.contains("image_range")) {
      r.image_range = {j["image_range"].at(0).get<std::uint32_t>(),
                       j["image_range"].at(1).get<std::uint32_t>()};
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(e.what());
  }
}

std::vector<ApiCallRecord> parse_records(std::string_view jsonl) {
  std::vector<ApiCallRecord> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < jsonl.size()) {
    auto nl = jsonl.find('\n', pos);
    if (nl == std::string_view::npos) nl = jsonl.size();
    const auto line = jsonl.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(record_from_json(line));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string serialize_records(const std::vector<ApiCallRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json(r);
    out += '\n';
  }
  return out;
}

void CallResolver::add_thunks_from(std::span<const FunctionListing> functions) {
  if (!imports_) return;
  for (const auto& f : functions) {
    if (f.instructions.empty()) continue;
    const auto& first = f.instructions.front();
    if (first.mnemonic != "jmp" || first.operands.size() != 1) continue;
    std::optional<std::uint32_t> target;
    if (const auto* imm = std::get_if<Immediate>(&first.operands[0])) {
      target = imm->value;
    } else if (const auto* m = std::get_if<MemoryRef>(&first.operands[0]);
               m && !m->base && !m->index) {
      target = static_cast<std::uint32_t>(m->disp);
    }
    if (!target) continue;
    if (auto it = imports_->find(*target); it != imports_->end()) add_thunk(f.entry_addr, it->second);
  }
}

const std::string* CallResolver::resolve(std::uint32_t target) const {
  if (imports_) {
    if (auto it = imports_->find(target); it != imports_->end()) return &it->second;
  }
  if (auto it = thunks_.find(target); it != thunks_.end()) return &it->second;
  return nullptr;
}

void ExtractionDiagnostics::merge(const ExtractionDiagnostics& o) {
  functions += o.functions;
  degraded_paths += o.degraded_paths;
  api_calls += o.api_calls;
  non_api_calls += o.non_api_calls;
  unresolved_indirect += o.unresolved_indirect;
  invalid_functions += o.invalid_functions;
  for (const auto& [name, n] : o.unknown_signature) unknown_signature[name] += n;
}

namespace {

// Static call target: an immediate, a register holding a concrete address
// (`mov esi, <import>; call esi`), or an absolute IAT slot `call [addr]`.
std::optional<std::uint32_t> call_target(const MachineState& s, const Operand& op) {
  if (const auto* imm = std::get_if<Immediate>(&op)) return imm->value;
  if (const auto* r = std::get_if<RegisterRef>(&op)) {
    const auto& v = s.reg(r->reg);
    if (r->size == 4 && v.is_concrete()) return v.concrete();
    return std::nullopt;
  }
  const auto& m = std::get<MemoryRef>(op);
  if (!m.base && !m.index) return static_cast<std::uint32_t>(m.disp);
  return std::nullopt;
}

}  // namespace

std::vector<ApiCallRecord> execute_path(const FunctionListing& f, const Cfg& g,
                                        std::span<const std::size_t> path,
                                        const CallResolver& resolver, const ApiSignatureDb& sigs,
                                        ExtractionDiagnostics* diag) {
  ExtractionDiagnostics local;
  std::vector<ApiCallRecord> records;
  auto state = MachineState::initial();
  for (const auto node : path) {
    const auto& block = g.nodes.at(node);
    for (std::size_t i = block.first; i < block.last; ++i) {
      const auto& ins = f.instructions[i];
      if (ins.op_class == OpClass::Supported) {
        step(state, ins);
        continue;
      }
      if (ins.op_class != OpClass::Call) continue;

      const auto target = call_target(state, ins.operands.front());
      const std::string* name = target ? resolver.resolve(*target) : nullptr;
      if (!target) ++local.unresolved_indirect;
      if (!name) {
        ++local.non_api_calls;
      } else if (auto sig = sigs.resolve(*name)) {
        ApiCallRecord rec;
        rec.binary_id = f.binary_id;
        rec.call_addr = ins.addr;
        rec.api = sig->first;
        rec.n_args = sig->second;
        rec.image_range = f.image_range;
        const auto depth = state.stack.size();
        for (std::size_t k = 0; k < kMaxArgs; ++k)
          rec.raw_args[k] = k < depth ? project(state.stack[depth - 1 - k]) : ArgValue{};
        const auto removed = std::min<std::size_t>(static_cast<std::size_t>(sig->second), depth);
        state.stack.resize(depth - removed);
        records.push_back(std::move(rec));
        ++local.api_calls;
      } else {
        ++local.unknown_signature[*name];
      }
      state.reg(Register::eax) = RetAtom{};
    }
  }
  if (diag) diag->merge(local);
  return records;
}

std::vector<ApiCallRecord> extract_function(const FunctionListing& f, const CallResolver& resolver,
                                            const ApiSignatureDb& sigs, std::uint64_t seed,
                                            ExtractionDiagnostics* diag) {
  ExtractionDiagnostics local;
  local.functions = 1;
  std::vector<ApiCallRecord> out;
  if (!f.instructions.empty()) {
    try {
      const auto g = build_cfg(f);
      const auto path_seed = derive_seed(seed, f.binary_id, f.entry_addr);
      const auto path = select_path(g, path_seed);
      if (path.degraded) ++local.degraded_paths;
      out = execute_path(f, g, path.nodes, resolver, sigs, &local);
    } catch (const ValidationError&) {
      ++local.invalid_functions;
    }
  }
  if (diag) diag->merge(local);
  return out;
}

namespace {

std::map<std::string, CallResolver> resolvers_by_binary(std::span<const FunctionListing> functions,
                                                        const ImportTable& imports) {
  std::map<std::string, std::vector<FunctionListing>> by_binary;
  std::map<std::string, CallResolver> out;
  for (const auto& f : functions) {
    if (f.instructions.empty() || f.instructions.front().mnemonic != "jmp") continue;
    by_binary[f.binary_id].push_back(f);
  }
  for (const auto& f : functions) out.try_emplace(f.binary_id, &imports);
  for (auto& [id, fs] : by_binary) out.at(id).add_thunks_from(fs);
  return out;
}

template <bool Parallel>
std::vector<ApiCallRecord> extract_impl(std::span<const FunctionListing> functions,
                                        const ImportTable& imports, const ApiSignatureDb& sigs,
                                        std::uint64_t seed, ExtractionDiagnostics* diag) {
  const auto resolvers = resolvers_by_binary(functions, imports);
  const auto n = static_cast<std::ptrdiff_t>(functions.size());
  std::vector<std::vector<ApiCallRecord>> per_function(functions.size());
  std::vector<ExtractionDiagnostics> per_diag(functions.size());
#pragma omp parallel for schedule(dynamic, 16) if (Parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& f = functions[static_cast<std::size_t>(i)];
    per_function[static_cast<std::size_t>(i)] =
        extract_function(f, resolvers.at(f.binary_id), sigs, seed, &per_diag[static_cast<std::size_t>(i)]);
  }
  std::vector<ApiCallRecord> out;
  for (std::size_t i = 0; i < functions.size(); ++i) {
    for (auto& r : per_function[i]) out.push_back(std::move(r));
    if (diag) diag->merge(per_diag[i]);
  }
  return out;
}

}  // namespace

std::vector<ApiCallRecord> extract_corpus_serial(std::span<const FunctionListing> functions,
                                                 const ImportTable& imports,
                                                 const ApiSignatureDb& sigs, std::uint64_t seed,
                                                 ExtractionDiagnostics* diag) {
  return extract_impl<false>(functions, imports, sigs, seed, diag);
}

std::vector<ApiCallRecord> extract_corpus(std::span<const FunctionListing> functions,
                                          const ImportTable& imports, const ApiSignatureDb& sigs,
                                          std::uint64_t seed, ExtractionDiagnostics* diag) {
  return extract_impl<true>(functions, imports, sigs, seed, diag);
}

}  // namespace apideob
