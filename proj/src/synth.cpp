#include "apideob/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "apideob/seed.hpp"
#include "json.hpp"

namespace apideob {

using nlohmann::json;

namespace {

struct KindName {
  std::string_view name;
  SlotKind kind;
};

constexpr KindName kSymbolic[] = {{"ptr", SlotKind::Ptr}, {"reg", SlotKind::Reg},
                                  {"var", SlotKind::Var}, {"mem", SlotKind::Mem},
                                  {"ret", SlotKind::Ret}, {"expr", SlotKind::Expr}};

SlotChoice parse_choice(std::string_view item) {
  const auto colon = item.rfind(':');
  if (colon == std::string_view::npos) throw ParseError("slot outcome without probability: " + std::string(item));
  const auto what = item.substr(0, colon);
  const auto prob = std::string(item.substr(colon + 1));
  SlotChoice c;
  try {
    std::size_t used = 0;
    c.p = std::stod(prob, &used);
    if (used != prob.size()) throw std::invalid_argument(prob);
  } catch (const std::exception&) {
    throw ParseError("bad probability in slot outcome: " + std::string(item));
  }
  for (const auto& k : kSymbolic)
    if (what == k.name) {
      c.kind = k.kind;
      return c;
    }
  if (what.size() == 2 && what[0] == 'd' && what[1] >= '2' && what[1] <= '4') {
    c.kind = SlotKind::Scale;
    c.digits = what[1] - '0';
    return c;
  }
  if (what.size() == 1 && what[0] >= '0' && what[0] <= '9') {
    c.kind = SlotKind::Small;
    c.value = static_cast<std::uint32_t>(what[0] - '0');
    return c;
  }
  if (what.starts_with("0x")) {
    c.kind = SlotKind::Const;
    c.value = parse_address(what);
    return c;
  }
  throw ParseError("unknown slot outcome: " + std::string(what));
}

std::string choice_name(const SlotChoice& c) {
  switch (c.kind) {
    case SlotKind::Small:
      return std::to_string(c.value);
    case SlotKind::Const:
      return hex_string(c.value);
    case SlotKind::Scale:
      return "d" + std::to_string(c.digits);
    default:
      for (const auto& k : kSymbolic)
        if (k.kind == c.kind) return std::string(k.name);
  }
  return "?";
}

}  // namespace

std::vector<SlotChoice> parse_slot(std::string_view text) {
  std::vector<SlotChoice> out;
  std::istringstream in{std::string(text)};
  std::string item;
  while (in >> item) out.push_back(parse_choice(item));
  if (out.empty()) throw ParseError("empty slot description");
  return out;
}

std::string format_slot(const std::vector<SlotChoice>& slot) {
  std::string out;
  char buf[32];
  for (const auto& c : slot) {
    if (!out.empty()) out += ' ';
    std::snprintf(buf, sizeof buf, "%.17g", c.p);
    out += choice_name(c) + ":" + buf;
  }
  return out;
}

std::vector<ApiProfile> default_profiles() {
  // Each string lists one argument slot. Four pairs share a token multiset and
  // differ only in slot order: SendMessage/PostMessage, ReadFile/WriteFile,
  // RegQueryValueEx/RegSetValueEx, GetLocaleInfo/LoadString.
  const std::string hwnd = "var:.45 mem:.25 reg:.15 ret:.15";
  const std::string msgs = "0x80:.2 0xC:.2 0xD:.15 0x30:.15 0x10:.1 0x111:.1 0x400:.1";
  const std::string send_w = "0:.5 1:.3 var:.2";
  const std::string send_l = "ptr:.5 0:.3 expr:.2";
  const std::string rf_buf = "ptr:.5 var:.3 expr:.2";
  const std::string rf_tail = "0:.8 var:.2";
  const std::string rq_name = "ptr:.7 0:.3";
  const std::string rq_size = "var:.8 expr:.2";
  const std::string gl_locale = "0x800:.5 mem:.3 ret:.2";
  const std::string gl_len = "d2:.5 0x7F:.5";
  const std::map<std::string, std::vector<std::string>> table = {
      {"CheckDlgButton", {hwnd, "d3:.7 d2:.3", "1:.6 0:.3 2:.1"}},
      {"CoCreateInstance", {"ptr:.8 mem:.2", "0:.9 reg:.1", "1:.4 0x17:.3 4:.3", "ptr:.8 mem:.2",
                            "var:.6 expr:.4"}},
      {"CompareString", {"0x800:.3 0x7F:.3 mem:.4", "1:.5 0:.3 d4:.2", "ptr:.6 var:.4",
                         "0xFFFFFFFF:.7 var:.3", "ptr:.6 var:.4", "0xFFFFFFFF:.6 var:.4"}},
      {"CreateFile", {"ptr:.5 var:.3 expr:.2", "0x80000000:.4 0xC0000000:.3 0x40000000:.3",
                      "1:.4 3:.3 0:.3", "0:.9 ptr:.1", "3:.5 2:.3 4:.2",
                      "0x80:.5 0x2000000:.2 0x10000000:.1 0:.2", "0:1"}},
      {"CreateWindowEx", {"0:.5 0x200:.2 d3:.3", "ptr:.8 var:.2", "ptr:.5 0:.5",
                          "0xCF0000:.4 0x50000000:.3 0x50010000:.15 0x54000000:.15",
                          "0x80000000:.6 0:.4", "0x80000000:.6 0:.4", "0x80000000:.5 d3:.5",
                          "0x80000000:.5 d3:.5", "0:.5 var:.5", "0:.6 d3:.4", "mem:.6 var:.4",
                          "0:.8 ptr:.2"}},
      {"DeviceIoControl", {"var:.6 mem:.4", "0x70000:.3 0x7405C:.2 0x900A8:.2 0x2D1400:.2 0x560000:.1",
                           "ptr:.5 0:.5", "0:.5 d2:.5", "ptr:.7 var:.3", "d3:.5 d2:.3 d4:.2",
                           "var:.8 ptr:.2", "0:.9 ptr:.1"}},
      {"FormatMessage", {"0x1100:.3 0x1200:.3 0x1300:.2 0x200:.2", "0:.6 mem:.4", "ret:.6 var:.4",
                         "0x400:.4 0:.6", "var:.6 ptr:.4", "0:.7 d2:.3", "0:.8 var:.2"}},
      {"GetLocaleInfo", {gl_locale, "0xF:.3 0x1F:.3 0x21:.2 4:.2", "var:.6 ptr:.4", gl_len}},
      {"HeapAlloc", {"ret:.5 mem:.5", "8:.6 0:.4", "d2:.3 d3:.3 var:.2 expr:.2"}},
      {"LoadString", {gl_len, "0xF:.3 0x1F:.3 0x21:.2 4:.2", "var:.6 ptr:.4", gl_locale}},
      {"MessageBox", {"reg:.3 var:.3 0:.4", "ptr:.6 var:.2 mem:.2", "ptr:.6 mem:.2 0:.2",
                      "0x40:.2 0x10:.2 0x20:.15 0x24:.15 0:.15 0x2010:.15"}},
      {"MultiByteToWideChar", {"0xFDE9:.4 0:.3 0x4E4:.3", "0:.7 8:.3", "ptr:.6 var:.4",
                               "0xFFFFFFFF:.6 var:.2 d2:.2", "ptr:.5 var:.5",
                               "d2:.3 d3:.3 var:.2 0:.2"}},
      {"PostMessage", {send_l, msgs, send_w, hwnd}},
      {"ReadFile", {"var:.5 mem:.5", rf_buf, "d3:.4 d4:.4 var:.2", "var:.7 ptr:.3", rf_tail}},
      {"RegCreateKeyEx", {"0x80000002:.4 0x80000001:.3 var:.3", "ptr:.8 var:.2", "0:1", "0:1", "0:1",
                          "0xF003F:.5 0x20006:.5", "0:1", "var:.8 ptr:.2", "var:.7 0:.3"}},
      {"RegOpenKeyEx", {"0x80000002:.35 0x80000001:.25 var:.25 mem:.15", "ptr:.7 var:.3",
                        "0:.9 1:.1", "0x20019:.4 0xF003F:.3 0x20006:.1 1:.2", "var:.7 expr:.3"}},
      {"RegQueryValueEx", {"var:.5 mem:.5", rq_name, "0:1", "var:.5 0:.5", "ptr:.5 var:.5", rq_size}},
      {"RegSetValueEx", {"var:.5 mem:.5", rq_size, "0:1", "var:.5 0:.5", "ptr:.5 var:.5", rq_name}},
      {"SendDlgItemMessage", {"var:.5 mem:.3 reg:.2", "d3:.6 d2:.4",
                              "0x146:.2 0x143:.15 0x14E:.15 0x147:.1 0x170:.1 0x180:.1 0x186:.1 0xF0:.1",
                              "0:.5 1:.3 expr:.2", "0:.4 ptr:.3 1:.3"}},
      {"SendMessage", {hwnd, msgs, send_w, send_l}},
      {"SetDlgItemText", {"var:.5 mem:.3 reg:.2", "d3:.6 d2:.4", "ptr:.6 var:.2 expr:.2"}},
      {"SetTimer", {"var:.4 mem:.3 reg:.3", "1:.4 2:.2 d2:.2 d3:.2", "d3:.4 d4:.4 d2:.2", "0:.6 ptr:.4"}},
      {"SetWindowPos", {"var:.4 reg:.3 mem:.3", "0:.5 1:.2 0xFFFFFFFF:.2 0xFFFFFFFE:.1",
                        "0:.5 var:.3 expr:.2", "0:.5 var:.3 expr:.2", "0:.4 var:.3 d3:.3",
                        "0:.4 var:.3 d3:.3", "0x13:.2 0x14:.15 0x15:.15 0x16:.1 0x17:.1 0x37:.1 0x43:.1 0x53:.1"}},
      {"WideCharToMultiByte", {"0xFDE9:.4 0:.3 0x4E4:.3", "0:.8 0x400:.2", "ptr:.6 var:.4",
                               "0xFFFFFFFF:.6 var:.4", "ptr:.5 var:.3 0:.2", "d3:.4 var:.3 0:.3",
                               "0:1", "0:.9 var:.1"}},
      {"WriteFile", {"var:.5 mem:.5", rf_tail, "d3:.4 d4:.4 var:.2", "var:.7 ptr:.3", rf_buf}},
  };
  std::vector<ApiProfile> out;
  for (const auto& [name, slots] : table) {
    ApiProfile p{name, {}};
    for (const auto& s : slots) p.slots.push_back(parse_slot(s));
    out.push_back(std::move(p));
  }
  return out;
}

SynthSpec default_synth_spec(std::uint64_t seed) {
  SynthSpec s;
  s.profiles = default_profiles();
  s.seed = seed;
  return s;
}

void SynthSpec::validate(const ApiSignatureDb& sigs) const {
  if (profiles.empty()) throw ValidationError("synth: no profiles");
  std::set<std::string> seen;
  for (const auto& p : profiles) {
    if (!seen.insert(p.name).second) throw ValidationError("synth: duplicate profile " + p.name);
    const auto n = sigs.n_args(p.name);
    if (!n) throw ValidationError("synth: no signature for " + p.name);
    if (static_cast<std::size_t>(*n) != p.slots.size())
      throw ValidationError("synth: " + p.name + " has " + std::to_string(p.slots.size()) +
                            " slots, signature says " + std::to_string(*n));
    for (const auto& slot : p.slots) {
      double sum = 0.0;
      for (const auto& c : slot) {
        if (!(c.p >= 0.0)) throw ValidationError("synth: negative probability in " + p.name);
        sum += c.p;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw ValidationError("synth: slot of " + p.name + " sums to " + std::to_string(sum));
    }
  }
  auto check_range = [](std::size_t lo, std::size_t hi, const char* what) {
    if (lo == 0 || lo > hi) throw ValidationError(std::string("synth: bad range for ") + what);
  };
  check_range(calls_per_api_min, calls_per_api_max, "calls_per_api");
  check_range(calls_per_function_min, calls_per_function_max, "calls_per_function");
  if (functions_per_binary == 0) throw ValidationError("synth: functions_per_binary must be >= 1");
  for (double r : {junk_rate, branch_density, thunk_rate, register_call_rate, noise_call_rate,
                   tail_jump_rate})
    if (!(r >= 0.0 && r <= 1.0)) throw ValidationError("synth: rates must lie in [0, 1]");
  if (thunk_rate + register_call_rate > 1.0)
    throw ValidationError("synth: thunk_rate + register_call_rate exceeds 1");
}

std::string SynthSpec::to_json() const {
  json j;
  j["seed"] = seed;
  j["calls_per_api"] = {calls_per_api_min, calls_per_api_max};
  j["calls_per_function"] = {calls_per_function_min, calls_per_function_max};
  j["functions_per_binary"] = functions_per_binary;
  j["junk_rate"] = junk_rate;
  j["branch_density"] = branch_density;
  j["thunk_rate"] = thunk_rate;
  j["register_call_rate"] = register_call_rate;
  j["noise_call_rate"] = noise_call_rate;
  j["tail_jump_rate"] = tail_jump_rate;
  json prof = json::object();
  for (const auto& p : profiles) {
    json slots = json::array();
    for (const auto& s : p.slots) slots.push_back(format_slot(s));
    prof[p.name] = slots;
  }
  j["profiles"] = prof;
  return j.dump(2);
}

SynthSpec SynthSpec::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("synth spec: ") + e.what());
  }
  try {
    SynthSpec s = default_synth_spec(j.value("seed", std::uint64_t{1}));
    if (j.contains("calls_per_api")) {
      s.calls_per_api_min = j["calls_per_api"].at(0).get<std::size_t>();
      s.calls_per_api_max = j["calls_per_api"].at(1).get<std::size_t>();
    }
    if (j.contains("calls_per_function")) {
      s.calls_per_function_min = j["calls_per_function"].at(0).get<std::size_t>();
      s.calls_per_function_max = j["calls_per_function"].at(1).get<std::size_t>();
    }
    s.functions_per_binary = j.value("functions_per_binary", s.functions_per_binary);
    s.junk_rate = j.value("junk_rate", s.junk_rate);
    s.branch_density = j.value("branch_density", s.branch_density);
    s.thunk_rate = j.value("thunk_rate", s.thunk_rate);
    s.register_call_rate = j.value("register_call_rate", s.register_call_rate);
    s.noise_call_rate = j.value("noise_call_rate", s.noise_call_rate);
    s.tail_jump_rate = j.value("tail_jump_rate", s.tail_jump_rate);
    if (j.contains("profiles")) {
      s.profiles.clear();
      for (const auto& [name, slots] : j["profiles"].items()) {
        ApiProfile p{name, {}};
        for (const auto& slot : slots) p.slots.push_back(parse_slot(slot.get<std::string>()));
        s.profiles.push_back(std::move(p));
      }
    }
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("synth spec: ") + e.what());
  }
}

// ---------------------------------------------------------------- generator

namespace {

constexpr std::uint32_t kImageLow = 0x01000000;
constexpr std::uint32_t kImageHigh = 0x01100000;
constexpr std::uint32_t kIatBase = 0x01001000;
constexpr std::uint32_t kCodeBase = 0x01002000;
constexpr std::uint32_t kExternalTail = 0x010F0000;

// Imports without a signature entry, with the number of arguments pushed for them.
const std::vector<std::pair<std::string, int>> kNoiseImports = {
    {"CloseHandle", 1}, {"GetLastError", 0}, {"GetProcessHeap", 0}, {"Sleep", 1}, {"lstrlenW", 1}};

const std::set<std::string> kStringApis = {
    "CompareString", "CreateFile",      "CreateWindowEx", "FormatMessage",      "GetLocaleInfo",
    "LoadString",    "MessageBox",      "PostMessage",    "RegCreateKeyEx",     "RegOpenKeyEx",
    "RegQueryValueEx", "RegSetValueEx", "SendDlgItemMessage", "SendMessage",    "SetDlgItemText"};

Operand R(Register r) { return RegisterRef{r, 4, false}; }
Operand I(std::uint32_t v) { return Immediate{v}; }
Operand M(Register base, std::int32_t disp) { return MemoryRef{base, std::nullopt, 1, disp, 4}; }
Operand Abs(std::uint32_t addr) {
  return MemoryRef{std::nullopt, std::nullopt, 1, static_cast<std::int32_t>(addr), 4};
}

std::uint32_t encoded_length(const std::string& mn, const std::vector<Operand>& ops) {
  std::uint32_t len = 1;
  for (const auto& op : ops) {
    if (std::holds_alternative<Immediate>(op)) len += 4;
    if (const auto* m = std::get_if<MemoryRef>(&op)) len += (m->base ? 2 : 5);
    if (std::holds_alternative<RegisterRef>(op)) len += 1;
  }
  if (mn == "jz" || mn == "jnz") len = 2;
  return len;
}

class Emitter {
 public:
  explicit Emitter(std::uint32_t start) : addr_(start) {}

  std::uint32_t addr() const { return addr_; }
  std::size_t size() const { return out_.size(); }

  std::uint32_t emit(std::string mn, std::vector<Operand> ops) {
    const auto at = addr_;
    addr_ += encoded_length(mn, ops);
    out_.push_back(make_instruction(at, std::move(mn), std::move(ops)));
    return at;
  }
  // Branch whose target is patched once the label is placed.
  std::size_t emit_forward(std::string mn) {
    emit(std::move(mn), {I(0)});
    return out_.size() - 1;
  }
  void patch(std::size_t index, std::uint32_t target) { out_[index].operands[0] = I(target); }

  std::vector<Instruction> take() { return std::move(out_); }

 private:
  std::uint32_t addr_;
  std::vector<Instruction> out_;
};

struct BinaryLayout {
  std::string id;
  std::uint32_t helper = 0;
  std::map<std::string, std::uint32_t> thunks;  // API -> thunk entry
};

class FunctionGen {
 public:
  FunctionGen(const SynthSpec& spec, const BinaryLayout& layout,
              const std::map<std::string, std::uint32_t>& iat, const AbstractionConfig& abs,
              std::mt19937_64& rng)
      : spec_(spec), layout_(layout), iat_(iat), abs_(abs), rng_(rng) {}

  // Emits one function making the given planted calls.
  FunctionListing build(std::uint32_t entry, const std::vector<const ApiProfile*>& calls,
                        std::vector<PlantedCall>& truth) {
    Emitter e(entry);
    const int prologue = pick(3);
    e.emit("push", {R(Register::ebp)});
    e.emit("mov", {R(Register::ebp), R(Register::esp)});
    if (prologue != 1) e.emit("sub", {R(Register::esp), I(0x40 + 0x10 * static_cast<std::uint32_t>(pick(4)))});
    if (prologue == 0) {
      e.emit("push", {R(Register::ebx)});
      e.emit("push", {R(Register::esi)});
      e.emit("push", {R(Register::edi)});
    } else if (prologue == 1) {
      e.emit("push", {R(Register::esi)});
    }

    for (const auto* api : calls) {
      if (chance(spec_.branch_density)) junk_branch(e);
      if (chance(spec_.noise_call_rate)) noise_call(e);
      planted_call(e, *api, truth);
    }

    if (prologue == 0) {
      e.emit("pop", {R(Register::edi)});
      e.emit("pop", {R(Register::esi)});
      e.emit("pop", {R(Register::ebx)});
    } else if (prologue == 1) {
      e.emit("pop", {R(Register::esi)});
    }
    e.emit("mov", {R(Register::esp), R(Register::ebp)});
    e.emit("pop", {R(Register::ebp)});
    if (chance(spec_.tail_jump_rate)) {
      e.emit("jmp", {I(kExternalTail)});
    } else {
      e.emit("ret", {});
    }
    FunctionListing f;
    f.binary_id = layout_.id;
    f.entry_addr = entry;
    f.instructions = e.take();
    f.image_range = {kImageLow, kImageHigh};
    return f;
  }

 private:
  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }
  std::uint32_t between(std::uint32_t lo, std::uint32_t hi) {
    return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng_);
  }

  const SlotChoice& draw(const std::vector<SlotChoice>& slot) {
    double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    for (const auto& c : slot) {
      u -= c.p;
      if (u < 0.0) return c;
    }
    return slot.back();
  }

  void junk(Emitter& e) {
    switch (pick(7)) {
      case 0: e.emit("mov", {R(Register::ecx), R(Register::edx)}); break;
      case 1: e.emit("xor", {R(Register::edx), R(Register::edx)}); break;
      case 2: e.emit("add", {R(Register::edx), I(4)}); break;
      case 3: e.emit("inc", {R(Register::ecx)}); break;
      case 4: e.emit("mov", {M(Register::ebp, -0x80), R(Register::ecx)}); break;
      case 5: e.emit("test", {R(Register::ecx), R(Register::ecx)}); break;
      default:
        e.emit("push", {R(Register::ecx)});
        e.emit("pop", {R(Register::ecx)});
    }
  }

  void junk_branch(Emitter& e) {
    if (pick(2) == 0) {
      e.emit("test", {R(Register::ecx), R(Register::ecx)});
      const auto to_else = e.emit_forward("jz");
      junk(e);
      const auto to_end = e.emit_forward("jmp");
      e.patch(to_else, e.addr());
      junk(e);
      junk(e);
      e.patch(to_end, e.addr());
    } else {
      e.emit("mov", {R(Register::edx), I(4)});
      const auto top = e.addr();
      junk(e);
      e.emit("dec", {R(Register::edx)});
      e.emit("jnz", {I(top)});
    }
  }

  void noise_call(Emitter& e) {
    if (pick(3) == 0) {
      // cdecl-style internal call with caller cleanup
      e.emit("push", {R(Register::ecx)});
      e.emit("push", {M(Register::ebp, -0x8)});
      e.emit("call", {I(layout_.helper)});
      e.emit("add", {R(Register::esp), I(8)});
      return;
    }
    const auto& [name, n] = kNoiseImports[static_cast<std::size_t>(pick(static_cast<int>(kNoiseImports.size())))];
    for (int i = 0; i < n; ++i) e.emit("push", {M(Register::ebp, -0x4)});
    e.emit("call", {Abs(iat_.at(name))});
  }

  // Emits instructions leaving the chosen value on top of the stack and
  // returns its expected token.
  Token push_slot(Emitter& e, const SlotChoice& c) {
    const auto image = ImageRange{kImageLow, kImageHigh};
    switch (c.kind) {
      case SlotKind::Small:
      case SlotKind::Const: {
        const int form = pick(3);
        if (form == 0) {
          e.emit("push", {I(c.value)});
        } else if (form == 1 && c.kind == SlotKind::Small) {
          e.emit("xor", {R(Register::ecx), R(Register::ecx)});
          if (c.value) e.emit("add", {R(Register::ecx), I(c.value)});
          e.emit("push", {R(Register::ecx)});
        } else {
          e.emit("mov", {R(Register::edx), I(c.value)});
          e.emit("push", {R(Register::edx)});
        }
        return abstract(ArgValue{ArgTag::Int, c.value}, abs_, image);
      }
      case SlotKind::Scale: {
        const std::uint32_t lo = 1u << (4 * (c.digits - 1));
        const std::uint32_t hi = (1u << (4 * c.digits)) - 1;
        std::uint32_t v;
        do v = between(std::max<std::uint32_t>(lo, 10), hi);
        while (abs_.whitelist.contains(v));
        e.emit("push", {I(v)});
        return abstract(ArgValue{ArgTag::Int, v}, abs_, image);
      }
      case SlotKind::Ptr: {
        const auto v = pick(2) ? between(0x01040000, 0x0104FFFC) : between(0x00120000, 0x0012FFFC);
        if (pick(2)) {
          e.emit("push", {I(v)});
        } else {
          e.emit("mov", {R(Register::ecx), I(v)});
          e.emit("push", {R(Register::ecx)});
        }
        return "ptr";
      }
      case SlotKind::Reg:
        e.emit("push", {R(pick(2) ? Register::ebx : Register::esi)});
        return "reg";
      case SlotKind::Var: {
        const auto local = -static_cast<std::int32_t>(4 * between(1, 15));
        const auto arg = static_cast<std::int32_t>(4 * between(2, 8));
        switch (pick(3)) {
          case 0: e.emit("push", {M(Register::ebp, local)}); break;
          case 1: e.emit("push", {M(Register::ebp, arg)}); break;
          default:
            e.emit("mov", {R(Register::ecx), M(Register::ebp, local)});
            e.emit("push", {R(Register::ecx)});
        }
        return "var";
      }
      case SlotKind::Mem:
        if (pick(2)) {
          e.emit("push", {Abs(0x01060000 + 4 * between(0, 0x3FFF))});
        } else {
          e.emit("mov", {R(Register::ecx), M(Register::ebx, static_cast<std::int32_t>(4 * between(1, 32)))});
          e.emit("push", {R(Register::ecx)});
        }
        return "mem";
      case SlotKind::Ret:
        if (pick(2)) {
          e.emit("call", {I(layout_.helper)});
        } else {
          e.emit("call", {Abs(iat_.at("GetProcessHeap"))});
        }
        e.emit("push", {R(Register::eax)});
        return "ret";
      case SlotKind::Expr:
        if (pick(2)) {
          e.emit("mov", {R(Register::ecx), M(Register::ebp, static_cast<std::int32_t>(4 * between(2, 8)))});
          e.emit("add", {R(Register::ecx), I(4 * between(1, 16))});
          e.emit("push", {R(Register::ecx)});
        } else {
          e.emit("lea", {R(Register::ecx), M(Register::ebp, -static_cast<std::int32_t>(4 * between(16, 64)))});
          e.emit("push", {R(Register::ecx)});
        }
        return "expr";
    }
    return "*";
  }

  void planted_call(Emitter& e, const ApiProfile& api, std::vector<PlantedCall>& truth) {
    const auto n = api.slots.size();
    std::vector<Token> tokens(n);
    for (std::size_t k = n; k-- > 0;) {  // stdcall pushes the last argument first
      if (chance(spec_.junk_rate)) junk(e);
      tokens[k] = push_slot(e, draw(api.slots[k]));
    }
    std::string import = api.name;
    if (kStringApis.count(api.name)) import += pick(2) ? "W" : "A";

    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
    std::uint32_t call_at;
    if (u < spec_.thunk_rate) {
      import = api.name + (kStringApis.count(api.name) ? "W" : "");
      call_at = e.emit("call", {I(layout_.thunks.at(api.name))});
    } else if (u < spec_.thunk_rate + spec_.register_call_rate) {
      e.emit("mov", {R(Register::edi), I(iat_.at(import))});
      call_at = e.emit("call", {R(Register::edi)});
    } else {
      call_at = e.emit("call", {Abs(iat_.at(import))});
    }
    truth.push_back({layout_.id, call_at, api.name, import, static_cast<int>(n), std::move(tokens)});
  }

  const SynthSpec& spec_;
  const BinaryLayout& layout_;
  const std::map<std::string, std::uint32_t>& iat_;
  const AbstractionConfig& abs_;
  std::mt19937_64& rng_;
};

std::uint32_t align16(std::uint32_t a) { return (a + 15u) & ~15u; }

}  // namespace

SynthCorpus generate(const SynthSpec& spec) {
  SynthCorpus out;
  out.sigs = default_signature_db();
  spec.validate(out.sigs);
  const AbstractionConfig abs;

  // One shared import table: every API under each import name it may use.
  std::set<std::string> import_names;
  for (const auto& p : spec.profiles) {
    if (kStringApis.count(p.name)) {
      import_names.insert(p.name + "A");
      import_names.insert(p.name + "W");
    } else {
      import_names.insert(p.name);
    }
  }
  for (const auto& [name, n] : kNoiseImports) import_names.insert(name);
  std::map<std::string, std::uint32_t> iat;
  std::uint32_t slot = kIatBase;
  for (const auto& name : import_names) {
    iat[name] = slot;
    out.imports[slot] = name;
    slot += 4;
  }

  std::mt19937_64 plan_rng(derive_seed(spec.seed, "synth:plan"));
  std::vector<const ApiProfile*> plan;
  for (const auto& p : spec.profiles) {
    const auto count = std::uniform_int_distribution<std::size_t>(spec.calls_per_api_min,
                                                                  spec.calls_per_api_max)(plan_rng);
    plan.insert(plan.end(), count, &p);
  }
  for (std::size_t i = plan.size(); i > 1; --i)
    std::swap(plan[i - 1], plan[std::uniform_int_distribution<std::size_t>(0, i - 1)(plan_rng)]);

  std::vector<std::vector<const ApiProfile*>> functions;
  for (std::size_t pos = 0; pos < plan.size();) {
    const auto n = std::uniform_int_distribution<std::size_t>(spec.calls_per_function_min,
                                                              spec.calls_per_function_max)(plan_rng);
    const auto end = std::min(plan.size(), pos + n);
    functions.emplace_back(plan.begin() + static_cast<std::ptrdiff_t>(pos),
                           plan.begin() + static_cast<std::ptrdiff_t>(end));
    pos = end;
  }

  const auto binaries = (functions.size() + spec.functions_per_binary - 1) / spec.functions_per_binary;
  char id[32];
  for (std::size_t b = 0; b < binaries; ++b) {
    std::snprintf(id, sizeof id, "synth_%04zu", b);
    BinaryLayout layout;
    layout.id = id;
    std::mt19937_64 rng(derive_seed(spec.seed, "synth:binary", b));

    std::uint32_t addr = kCodeBase;
    for (const auto& p : spec.profiles) {
      const auto import = p.name + (kStringApis.count(p.name) ? "W" : "");
      Emitter e(addr);
      e.emit("jmp", {Abs(iat.at(import))});
      layout.thunks[p.name] = addr;
      out.functions.push_back({layout.id, addr, e.take(), {kImageLow, kImageHigh}});
      addr = align16(e.addr());
    }
    {
      Emitter e(addr);
      e.emit("push", {R(Register::ebp)});
      e.emit("mov", {R(Register::ebp), R(Register::esp)});
      e.emit("xor", {R(Register::eax), R(Register::eax)});
      e.emit("pop", {R(Register::ebp)});
      e.emit("ret", {});
      layout.helper = addr;
      out.functions.push_back({layout.id, addr, e.take(), {kImageLow, kImageHigh}});
      addr = align16(e.addr());
    }

    FunctionGen gen(spec, layout, iat, abs, rng);
    const auto lo = b * spec.functions_per_binary;
    const auto hi = std::min(functions.size(), lo + spec.functions_per_binary);
    for (std::size_t f = lo; f < hi; ++f) {
      auto listing = gen.build(addr, functions[f], out.truth);
      addr = align16(listing.instructions.back().addr + 8);
      out.functions.push_back(std::move(listing));
    }
  }
  return out;
}

std::string truth_to_jsonl(const std::vector<PlantedCall>& truth) {
  std::string out;
  for (const auto& t : truth) {
    json j = {{"binary_id", t.binary_id}, {"call_addr", t.call_addr}, {"api", t.api},
              {"import", t.import_name},  {"n_args", t.n_args},       {"tokens", t.tokens}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PlantedCall> truth_from_jsonl(std::string_view text) {
  std::vector<PlantedCall> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("binary_id").get<std::string>(), j.at("call_addr").get<std::uint32_t>(),
                     j.at("api").get<std::string>(), j.value("import", std::string{}),
                     j.at("n_args").get<int>(), j.at("tokens").get<std::vector<Token>>()});
    } catch (const json::exception& e) {
      throw ParseError(std::string("truth: ") + e.what());
    }
  }
  return out;
}

}  // namespace apideob
