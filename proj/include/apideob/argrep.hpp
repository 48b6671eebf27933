#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "apideob/symexec.hpp"

namespace apideob {

using Token = std::string;

// Integer values kept verbatim as "predefined" constants.
class ConstantWhitelist {
 public:
  ConstantWhitelist() = default;
  explicit ConstantWhitelist(std::set<std::uint32_t> values) : values_(std::move(values)) {}

  // JSON array of hex strings.
  static ConstantWhitelist from_json(std::string_view json_text);
  std::string to_json() const;
  // Parses `path`; the current set is replaced only when parsing succeeds.
  void reload(const std::string& path);

  bool contains(std::uint32_t v) const { return values_.count(v) != 0; }
  const std::set<std::uint32_t>& values() const { return values_; }

 private:
  std::set<std::uint32_t> values_;
};

// Small decimals, registry hive handles and common flag/enum/message values
// for the 25 modeled APIs.
ConstantWhitelist default_whitelist();

struct AbstractionConfig {
  ConstantWhitelist whitelist = default_whitelist();
  // Default user-space heap/stack band; values inside are pointers.
  std::uint32_t pointer_low = 0x00010000;
  std::uint32_t pointer_high = 0x7FFEFFFF;  // inclusive

  bool in_pointer_band(std::uint32_t v) const { return v >= pointer_low && v <= pointer_high; }
};

// "1".."9" for small values, "0x<HEX>" otherwise.
std::string render_constant(std::uint32_t v);
// Length of the upper-case hex rendering without prefix.
std::string digit_count_token(std::uint32_t v);

Token abstract(const ArgValue& v, const AbstractionConfig& cfg, const ImageRange& image);
Token abstract(const SymValue& v, const AbstractionConfig& cfg, const ImageRange& image);

// The first `len` raw arguments of `rec` as tokens; 1 <= len <= 12.
std::vector<Token> abstract_sequence(const ApiCallRecord& rec, std::size_t len,
                                     const AbstractionConfig& cfg);

// Dense token <-> index map with a reserved out-of-vocabulary slot at W.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(const std::vector<std::vector<Token>>& corpus);

  std::size_t size() const { return tokens_.size(); }            // W
  std::size_t total_size() const { return tokens_.size() + 1; }  // W + OOV
  std::size_t oov_index() const { return tokens_.size(); }
  std::size_t encode(std::string_view token) const;
  std::vector<std::size_t> encode(const std::vector<Token>& seq) const;
  const Token& token(std::size_t index) const { return tokens_.at(index); }
  const std::vector<Token>& tokens() const { return tokens_; }
  void add(const Token& token);

  std::string to_json() const;
  static Vocabulary from_json(std::string_view json_text);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<Token> tokens_;
  std::unordered_map<Token, std::size_t> index_;
};

}  // namespace apideob
