#include "apideob/listing.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>

#include "json.hpp"

namespace apideob {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kRegisterCount> kNames32 = {
    "eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi"};
constexpr std::array<std::string_view, kRegisterCount> kNames16 = {
    "ax", "cx", "dx", "bx", "sp", "bp", "si", "di"};
constexpr std::array<std::string_view, 4> kNamesLow8 = {"al", "cl", "dl", "bl"};
constexpr std::array<std::string_view, 4> kNamesHigh8 = {"ah", "ch", "dh", "bh"};

constexpr std::array<std::string_view, 9> kSupported = {
    "push", "pop", "mov", "lea", "xor", "add", "sub", "inc", "dec"};

int arity(std::string_view mn) {
  if (mn == "push" || mn == "pop" || mn == "inc" || mn == "dec") return 1;
  return 2;
}

}  // namespace

std::optional<RegisterRef> parse_register(std::string_view name) {
  for (std::size_t i = 0; i < kRegisterCount; ++i) {
    if (name == kNames32[i]) return RegisterRef{static_cast<Register>(i), 4, false};
    if (name == kNames16[i]) return RegisterRef{static_cast<Register>(i), 2, false};
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (name == kNamesLow8[i]) return RegisterRef{static_cast<Register>(i), 1, false};
    if (name == kNamesHigh8[i]) return RegisterRef{static_cast<Register>(i), 1, true};
  }
  return std::nullopt;
}

std::optional<Register> parse_register32(std::string_view name) {
  for (std::size_t i = 0; i < kRegisterCount; ++i)
    if (name == kNames32[i]) return static_cast<Register>(i);
  return std::nullopt;
}

std::string_view register_name(Register reg) { return kNames32[static_cast<std::size_t>(reg)]; }

std::string_view register_name(const RegisterRef& ref) {
  const auto i = static_cast<std::size_t>(ref.reg);
  switch (ref.size) {
    case 2:
      return kNames16[i];
    case 1:
      return ref.high_byte ? kNamesHigh8.at(i) : kNamesLow8.at(i);
    default:
      return kNames32[i];
  }
}

bool is_conditional_branch(std::string_view mn) {
  if (mn == "loop" || mn == "loope" || mn == "loopne" || mn == "loopz" || mn == "loopnz")
    return true;
  return mn.size() > 1 && mn.front() == 'j' && mn != "jmp";
}

OpClass classify_mnemonic(std::string_view mn) {
  if (std::find(kSupported.begin(), kSupported.end(), mn) != kSupported.end())
    return OpClass::Supported;
  if (mn == "call") return OpClass::Call;
  if (mn == "ret" || mn == "retn") return OpClass::Return;
  if (mn == "jmp" || is_conditional_branch(mn)) return OpClass::Branch;
  return OpClass::Other;
}

Instruction make_instruction(std::uint32_t addr, std::string mnemonic,
                             std::vector<Operand> operands) {
  Instruction ins{addr, std::move(mnemonic), std::move(operands), OpClass::Other};
  ins.op_class = classify_mnemonic(ins.mnemonic);
  const auto n = ins.operands.size();
  bool ok = true;
  switch (ins.op_class) {
    case OpClass::Supported:
      ok = static_cast<int>(n) == arity(ins.mnemonic);
      break;
    case OpClass::Call:
    case OpClass::Branch:
      ok = n == 1;
      break;
    case OpClass::Return:
      // `ret imm16` is the stdcall callee-cleanup form.
      ok = n == 0 || (n == 1 && std::holds_alternative<Immediate>(ins.operands[0]));
      break;
    case OpClass::Other:
      break;
  }
  if (!ok) {
    throw ValidationError("instruction at " + hex_string(addr) + ": '" + ins.mnemonic +
                          "' has wrong operand count " + std::to_string(n));
  }
  return ins;
}

std::string hex_string(std::uint32_t value) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", value);
  return buf;
}

std::uint32_t parse_address(std::string_view text) {
  std::string_view digits = text;
  int base = 10;
  if (digits.size() > 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X')) {
    digits.remove_prefix(2);
    base = 16;
  }
  std::uint32_t value = 0;
  const auto* end = digits.data() + digits.size();
  auto [ptr, ec] = std::from_chars(digits.data(), end, value, base);
  if (digits.empty() || ec != std::errc{} || ptr != end)
    throw ParseError("bad address '" + std::string(text) + "'");
  return value;
}

void validate_listing(const FunctionListing& f) {
  if (f.instructions.empty()) return;
  if (f.entry_addr != f.instructions.front().addr) {
    throw ValidationError(f.binary_id + ": entry " + hex_string(f.entry_addr) +
                          " is not the first instruction address");
  }
  for (std::size_t i = 1; i < f.instructions.size(); ++i) {
    if (f.instructions[i].addr <= f.instructions[i - 1].addr) {
      throw ValidationError(f.binary_id + ": overlapping instruction addresses at " +
                            hex_string(f.instructions[i].addr));
    }
  }
}

namespace {

Register reg32_or_throw(const std::string& name) {
  auto r = parse_register32(name);
  if (!r) throw ParseError("unknown register name '" + name + "'");
  return *r;
}

std::uint8_t access_size(const json& j, const char* key) {
  const int size = j.at(key).get<int>();
  if (size != 1 && size != 2 && size != 4)
    throw ParseError("access size must be 1, 2 or 4, got " + std::to_string(size));
  return static_cast<std::uint8_t>(size);
}

Operand operand_from_json(const json& j) {
  const auto kind = j.at("k").get<std::string>();
  if (kind == "reg") {
    const auto name = j.at("name").get<std::string>();
    auto ref = parse_register(name);
    if (!ref) throw ParseError("unknown register name '" + name + "'");
    if (j.contains("size") && access_size(j, "size") != ref->size)
      throw ParseError("register '" + name + "' size mismatch");
    return *ref;
  }
  if (kind == "imm") return Immediate{j.at("val").get<std::uint32_t>()};
  if (kind == "mem") {
    MemoryRef m;
    if (!j.at("base").is_null()) m.base = reg32_or_throw(j["base"].get<std::string>());
    if (!j.at("index").is_null()) m.index = reg32_or_throw(j["index"].get<std::string>());
    const int scale = j.value("scale", 1);
    if (scale != 1 && scale != 2 && scale != 4 && scale != 8)
      throw ParseError("scale must be 1, 2, 4 or 8");
    m.scale = static_cast<std::uint8_t>(scale);
    m.disp = j.value("disp", std::int32_t{0});
    m.size = access_size(j, "size");
    return m;
  }
  throw ParseError("unknown operand kind '" + kind + "'");
}

json operand_to_json(const Operand& op) {
  if (const auto* r = std::get_if<RegisterRef>(&op))
    return {{"k", "reg"}, {"name", register_name(*r)}, {"size", r->size}};
  if (const auto* i = std::get_if<Immediate>(&op)) return {{"k", "imm"}, {"val", i->value}};
  const auto& m = std::get<MemoryRef>(op);
  json j = {{"k", "mem"}};
  j["base"] = m.base ? json(register_name(*m.base)) : json(nullptr);
  j["index"] = m.index ? json(register_name(*m.index)) : json(nullptr);
  j["scale"] = m.scale;
  j["disp"] = m.disp;
  j["size"] = m.size;
  return j;
}

FunctionListing function_from_json(const json& j) {
  FunctionListing f;
  f.binary_id = j.at("binary_id").get<std::string>();
  f.entry_addr = j.at("entry").get<std::uint32_t>();
  const auto& range = j.at("image_range");
  f.image_range = {range.at(0).get<std::uint32_t>(), range.at(1).get<std::uint32_t>()};
  for (const auto& ji : j.at("instructions")) {
    std::vector<Operand> ops;
    for (const auto& jo : ji.at("ops")) ops.push_back(operand_from_json(jo));
    f.instructions.push_back(
        make_instruction(ji.at("addr").get<std::uint32_t>(), ji.at("mn").get<std::string>(),
                         std::move(ops)));
  }
  return f;
}

}  // namespace

std::vector<FunctionListing> parse_listing(std::string_view text) {
  std::vector<FunctionListing> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto where = "line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(where + "malformed JSON: " + e.what());
    }
    FunctionListing f;
    try {
      f = function_from_json(j);
    } catch (const json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    try {
      validate_listing(f);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    out.push_back(std::move(f));
  }
  return out;
}

std::string serialize_function(const FunctionListing& f) {
  json ins = json::array();
  for (const auto& i : f.instructions) {
    json ops = json::array();
    for (const auto& op : i.operands) ops.push_back(operand_to_json(op));
    ins.push_back({{"addr", i.addr}, {"mn", i.mnemonic}, {"ops", std::move(ops)}});
  }
  json j = {{"binary_id", f.binary_id},
            {"entry", f.entry_addr},
            {"image_range", {f.image_range.low, f.image_range.high}},
            {"instructions", std::move(ins)}};
  return j.dump();
}

std::string serialize_listing(const std::vector<FunctionListing>& functions) {
  std::string out;
  for (const auto& f : functions) {
    out += serialize_function(f);
    out += '\n';
  }
  return out;
}

ImportTable parse_import_table(std::string_view json_text) {
  ImportTable table;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("import table: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("import table must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_string() || value.get<std::string>().empty())
      throw ParseError("import table: empty name for " + key);
    table.emplace(parse_address(key), value.get<std::string>());
  }
  return table;
}

std::string serialize_import_table(const ImportTable& table) {
  json j = json::object();
  for (const auto& [addr, name] : table) j[hex_string(addr)] = name;
  return j.dump(1);
}

ApiSignatureDb::ApiSignatureDb(std::map<std::string, int> entries) : entries_(std::move(entries)) {
  for (const auto& [name, n] : entries_) {
    if (name.empty()) throw ValidationError("signature db: empty API name");
    if (n < 3 || n > 12)
      throw ValidationError("signature db: " + name + " has n_args " + std::to_string(n) +
                            " outside [3, 12]");
  }
}

ApiSignatureDb ApiSignatureDb::from_json(std::string_view json_text) {
  std::map<std::string, int> entries;
  try {
    const auto j = json::parse(json_text);
    for (const auto& [name, n] : j.items()) entries.emplace(name, n.get<int>());
  } catch (const json::exception& e) {
    throw ParseError(std::string("signature db: ") + e.what());
  }
  return ApiSignatureDb(std::move(entries));
}

std::string ApiSignatureDb::to_json() const { return json(entries_).dump(1); }

std::optional<int> ApiSignatureDb::n_args(std::string_view name) const {
  auto it = entries_.find(std::string(name));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::pair<std::string, int>> ApiSignatureDb::resolve(
    std::string_view import_name) const {
  if (auto n = n_args(import_name)) return std::pair{std::string(import_name), *n};
  if (import_name.size() > 1 && (import_name.back() == 'A' || import_name.back() == 'W')) {
    const auto stem = import_name.substr(0, import_name.size() - 1);
    if (auto n = n_args(stem)) return std::pair{std::string(stem), *n};
  }
  return std::nullopt;
}

std::vector<std::string> ApiSignatureDb::names() const {
  std::vector<std::string> out;
  for (const auto& [name, n] : entries_) out.push_back(name);
  return out;
}

const std::vector<std::string>& default_api_names() {
  static const std::vector<std::string> names = [] {
    auto db = default_signature_db();
    return db.names();
  }();
  return names;
}

ApiSignatureDb default_signature_db() {
  return ApiSignatureDb({
      {"CheckDlgButton", 3},      {"CoCreateInstance", 5},   {"CompareString", 6},
      {"CreateFile", 7},          {"CreateWindowEx", 12},    {"DeviceIoControl", 8},
      {"FormatMessage", 7},       {"GetLocaleInfo", 4},      {"HeapAlloc", 3},
      {"LoadString", 4},          {"MessageBox", 4},         {"MultiByteToWideChar", 6},
      {"PostMessage", 4},         {"ReadFile", 5},           {"RegCreateKeyEx", 9},
      {"RegOpenKeyEx", 5},        {"RegQueryValueEx", 6},    {"RegSetValueEx", 6},
      {"SendDlgItemMessage", 5},  {"SendMessage", 4},        {"SetDlgItemText", 3},
      {"SetTimer", 4},            {"SetWindowPos", 7},       {"WideCharToMultiByte", 8},
      {"WriteFile", 5},
  });
}

}  // namespace apideob
