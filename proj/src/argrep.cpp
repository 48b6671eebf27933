#include "apideob/argrep.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace apideob {

using nlohmann::json;

ConstantWhitelist ConstantWhitelist::from_json(std::string_view json_text) {
  std::set<std::uint32_t> values;
  try {
    const auto j = json::parse(json_text);
    if (!j.is_array()) throw ParseError("whitelist must be a JSON array of hex strings");
    for (const auto& v : j) values.insert(parse_address(v.get<std::string>()));
  } catch (const json::exception& e) {
    throw ParseError(std::string("whitelist: ") + e.what());
  }
  return ConstantWhitelist(std::move(values));
}

std::string ConstantWhitelist::to_json() const {
  json j = json::array();
  for (auto v : values_) j.push_back(hex_string(v));
  return j.dump();
}

void ConstantWhitelist::reload(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open whitelist " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto fresh = from_json(ss.str());
  values_.swap(fresh.values_);
}

ConstantWhitelist default_whitelist() {
  // 0x12 and 0x1000 are deliberately absent: they are arbitrary-scale values.
  std::set<std::uint32_t> v = {
      0, 1, 2, 3, 4, 5, 6, 7, 8, 9,
      // registry hive handles; GENERIC_READ / CW_USEDEFAULT share 0x80000000
      0x80000000, 0x80000001, 0x80000002, 0x80000003, 0x80000004, 0x80000005, 0x80000006,
      // window and control messages
      0x0C, 0x0D, 0x0E, 0x10, 0x30, 0x80, 0xB1, 0xC5, 0xF0, 0xF1, 0x111, 0x112, 0x113, 0x143,
      0x146, 0x147, 0x14E, 0x170, 0x180, 0x186, 0x400,
      // message box types
      0x20, 0x24, 0x40, 0x2010, 0x40000,
      // registry access masks
      0x100, 0x20006, 0x20019, 0xF003F,
      // file access, creation and attribute flags
      0x40000000, 0xC0000000, 0x2000000, 0x10000000,
      // code pages and lengths
      0xFDE8, 0xFDE9, 0x4E4, 0xFFFFFFFF, 0xFFFFFFFE,
      // locale ids and types
      0x7F, 0x800, 0x0F, 0x1F, 0x21, 0x20000000,
      // FormatMessage flag combinations
      0x200, 0x1100, 0x1200, 0x1300,
      // SetWindowPos flag combinations
      0x13, 0x14, 0x15, 0x16, 0x17, 0x27, 0x37, 0x43, 0x53,
      // window styles
      0xCF0000, 0x50000000, 0x50010000, 0x54000000,
      // device I/O control codes
      0x70000, 0x7405C, 0x900A8, 0x2D1400, 0x560000,
  };
  return ConstantWhitelist(std::move(v));
}

std::string render_constant(std::uint32_t v) {
  if (v < 10) return std::to_string(v);
  return hex_string(v);
}

std::string digit_count_token(std::uint32_t v) {
  char buf[16];
  const int n = std::snprintf(buf, sizeof buf, "%X", v);
  return std::to_string(n);
}

Token abstract(const ArgValue& v, const AbstractionConfig& cfg, const ImageRange& image) {
  switch (v.tag) {
    case ArgTag::Reg:
      return "reg";
    case ArgTag::Arg:
    case ArgTag::Var:
      return "var";
    case ArgTag::Mem:
      return "mem";
    case ArgTag::Ret:
      return "ret";
    case ArgTag::Star:
      return "*";
    case ArgTag::Expr:
      return "expr";
    case ArgTag::Int:
      break;
  }
  const auto c = v.value;
  if (image.contains(c)) return "ptr";
  if (cfg.whitelist.contains(c)) return render_constant(c);
  if (cfg.in_pointer_band(c)) return "ptr";
  return digit_count_token(c);
}

Token abstract(const SymValue& v, const AbstractionConfig& cfg, const ImageRange& image) {
  return abstract(project(v), cfg, image);
}

std::vector<Token> abstract_sequence(const ApiCallRecord& rec, std::size_t len,
                                     const AbstractionConfig& cfg) {
  if (len < 1 || len > kMaxArgs)
    throw std::invalid_argument("abstract_sequence: length must be in [1, 12], got " +
                                std::to_string(len));
  std::vector<Token> out;
  out.reserve(len);
  for (std::size_t i = 0; i < len; ++i) out.push_back(abstract(rec.raw_args[i], cfg, rec.image_range));
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<Token>>& corpus) {
  Vocabulary v;
  for (const auto& seq : corpus)
    for (const auto& t : seq) v.add(t);
  return v;
}

void Vocabulary::add(const Token& token) {
  if (index_.count(token)) return;
  index_.emplace(token, tokens_.size());
  tokens_.push_back(token);
}

std::size_t Vocabulary::encode(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? oov_index() : it->second;
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<Token>& seq) const {
  std::vector<std::size_t> out;
  out.reserve(seq.size());
  for (const auto& t : seq) out.push_back(encode(t));
  return out;
}

std::string Vocabulary::to_json() const {
  json j = json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  j["oov_index"] = oov_index();
  return j.dump();
}

Vocabulary Vocabulary::from_json(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("vocabulary: ") + e.what());
  }
  const auto oov = j.at("oov_index").get<std::size_t>();
  std::vector<Token> tokens(oov);
  std::vector<bool> seen(oov, false);
  for (const auto& [tok, idx] : j.items()) {
    if (tok == "oov_index") continue;
    const auto i = idx.get<std::size_t>();
    if (i >= oov || seen[i]) throw ParseError("vocabulary: indices are not dense");
    seen[i] = true;
    tokens[i] = tok;
  }
  for (bool s : seen)
    if (!s) throw ParseError("vocabulary: indices are not dense");
  Vocabulary v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

}  // namespace apideob
