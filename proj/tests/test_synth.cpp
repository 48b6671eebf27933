#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

#include "apideob/argrep.hpp"
#include "apideob/listing.hpp"
#include "apideob/symexec.hpp"
#include "apideob/synth.hpp"
#include "helpers.hpp"

using namespace apideob;

namespace {

using CallKey = std::pair<std::string, std::uint32_t>;

std::vector<ApiCallRecord> extract_all(const SynthCorpus& c, std::uint64_t seed = 1) {
  return extract_corpus(c.functions, c.imports, c.sigs, seed);
}

std::map<CallKey, const ApiCallRecord*> by_site(const std::vector<ApiCallRecord>& recs) {
  std::map<CallKey, const ApiCallRecord*> out;
  for (const auto& r : recs) out[{r.binary_id, r.call_addr}] = &r;
  return out;
}

std::vector<Token> tokens(const ApiCallRecord& r) {
  return abstract_sequence(r, static_cast<std::size_t>(r.n_args), AbstractionConfig{});
}

// Token distribution a slot description implies; outcomes that abstract to
// the same token are pooled.
std::map<Token, double> expected_tokens(const std::vector<SlotChoice>& slot) {
  const AbstractionConfig cfg;
  std::map<Token, double> out;
  for (const auto& c : slot) {
    Token t;
    switch (c.kind) {
      case SlotKind::Small:
      case SlotKind::Const:
        t = abstract(ArgValue{ArgTag::Int, c.value}, cfg, ImageRange{});
        break;
      case SlotKind::Scale:
        t = std::to_string(c.digits);
        break;
      case SlotKind::Ptr: t = "ptr"; break;
      case SlotKind::Reg: t = "reg"; break;
      case SlotKind::Var: t = "var"; break;
      case SlotKind::Mem: t = "mem"; break;
      case SlotKind::Ret: t = "ret"; break;
      case SlotKind::Expr: t = "expr"; break;
    }
    out[t] += c.p;
  }
  return out;
}

SynthSpec straight_line(std::uint64_t seed) {
  auto s = testing::small_synth_spec(seed);
  s.junk_rate = 0.0;
  s.branch_density = 0.0;
  s.tail_jump_rate = 0.0;
  s.noise_call_rate = 0.0;
  return s;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("slot descriptions parse and format") {
    const auto s = parse_slot("var:.5 mem:.3 0x146:.1 d3:.05 7:.05");
    REQUIRE(s.size() == 5);
    CHECK(s[2].kind == SlotKind::Const);
    CHECK(s[2].value == 0x146);
    CHECK(s[3].digits == 3);
    CHECK(s[4].value == 7);
    CHECK(parse_slot(format_slot(s)).size() == 5);
    CHECK_THROWS(parse_slot("var"));
    CHECK_THROWS(parse_slot("banana:1"));
    CHECK_THROWS(parse_slot("d9:1"));
  }

  TEST_CASE("default profiles cover the signature db") {
    const auto spec = default_synth_spec();
    CHECK_NOTHROW(spec.validate(default_signature_db()));
    CHECK(spec.profiles.size() == 25);
    auto bad = spec;
    bad.profiles[0].slots.pop_back();
    CHECK_THROWS_AS(bad.validate(default_signature_db()), ValidationError);
    bad = spec;
    bad.profiles[0].slots[0][0].p += 0.2;
    CHECK_THROWS_AS(bad.validate(default_signature_db()), ValidationError);
  }

  TEST_CASE("spec JSON round-trips") {
    auto spec = testing::small_synth_spec(9);
    spec.junk_rate = 0.125;
    const auto back = SynthSpec::from_json(spec.to_json());
    CHECK(back.to_json() == spec.to_json());
    CHECK(back.seed == 9);
    CHECK_THROWS(SynthSpec::from_json("{\"calls_per_api\": 3"));
  }

  TEST_CASE("generation is deterministic by seed") {
    const auto a = generate(testing::small_synth_spec(3));
    const auto b = generate(testing::small_synth_spec(3));
    CHECK(serialize_listing(a.functions) == serialize_listing(b.functions));
    CHECK(serialize_import_table(a.imports) == serialize_import_table(b.imports));
    CHECK(truth_to_jsonl(a.truth) == truth_to_jsonl(b.truth));
    const auto c = generate(testing::small_synth_spec(4));
    CHECK(truth_to_jsonl(a.truth) != truth_to_jsonl(c.truth));
  }

  TEST_CASE("truth JSONL round-trips") {
    const auto c = generate(testing::small_synth_spec(5, 3, 4));
    const auto text = truth_to_jsonl(c.truth);
    CHECK(truth_to_jsonl(truth_from_jsonl(text)) == text);
  }

  TEST_CASE("listings are well formed") {
    const auto c = generate(testing::small_synth_spec(6));
    for (const auto& f : c.functions) CHECK_NOTHROW(validate_listing(f));
    CHECK(parse_listing(serialize_listing(c.functions)) == c.functions);
  }

  TEST_CASE("straight-line output is recovered completely") {
    for (std::uint64_t seed = 10; seed < 13; ++seed) {
      const auto c = generate(straight_line(seed));
      const auto recs = extract_all(c);
      CHECK(recs.size() == c.truth.size());
      std::map<CallKey, int> hits;
      for (const auto& r : recs) ++hits[{r.binary_id, r.call_addr}];
      for (const auto& t : c.truth) {
        CHECK(hits[{t.binary_id, t.call_addr}] == 1);
      }
      const auto sites = by_site(recs);
      for (const auto& t : c.truth) {
        const auto it = sites.find({t.binary_id, t.call_addr});
        REQUIRE(it != sites.end());
        CHECK(it->second->api == t.api);
        CHECK(it->second->n_args == t.n_args);
        CHECK(tokens(*it->second) == t.tokens);
      }
    }
  }

  TEST_CASE("junk, branches and indirection do not lose planted calls") {
    const auto c = generate(testing::small_synth_spec(14));
    ExtractionDiagnostics diag;
    const auto recs = extract_corpus(c.functions, c.imports, c.sigs, 1, &diag);
    CHECK(recs.size() == c.truth.size());
    CHECK(diag.unresolved_indirect == 0);
    const auto sites = by_site(recs);
    std::size_t matched = 0;
    for (const auto& t : c.truth) {
      const auto it = sites.find({t.binary_id, t.call_addr});
      if (it == sites.end()) continue;
      matched += it->second->api == t.api && tokens(*it->second) == t.tokens;
    }
    CHECK(matched == c.truth.size());
  }

  TEST_CASE("forced RegOpenKeyEx profile gives the registry call shape") {
    auto spec = straight_line(15);
    for (auto& p : spec.profiles)
      if (p.name == "RegOpenKeyEx")
        p.slots = {parse_slot("var:1"), parse_slot("var:1"), parse_slot("0x146:1"), parse_slot("1:1"),
                   parse_slot("1:1")};
    const auto c = generate(spec);
    std::size_t seen = 0;
    for (const auto& r : extract_all(c)) {
      if (r.api != "RegOpenKeyEx") continue;
      ++seen;
      CHECK(tokens(r) == std::vector<Token>{"var", "var", "0x146", "1", "1"});
    }
    CHECK(seen >= 24);
  }

  TEST_CASE("extracted token frequencies match the profiles") {
    const auto spec = default_synth_spec(1);
    const auto c = generate(spec);
    const auto recs = extract_all(c);
    std::map<std::string, std::vector<std::map<Token, std::size_t>>> counts;
    std::map<std::string, std::size_t> n;
    for (const auto& r : recs) {
      auto& slots = counts[r.api];
      const auto t = tokens(r);
      slots.resize(t.size());
      for (std::size_t k = 0; k < t.size(); ++k) ++slots[k][t[k]];
      ++n[r.api];
    }
    std::size_t cells = 0, outside = 0;
    double worst_z = 0.0;
    for (const auto& p : spec.profiles) {
      const double N = static_cast<double>(n[p.name]);
      REQUIRE(N >= 400);
      for (std::size_t k = 0; k < p.slots.size(); ++k) {
        const auto want = expected_tokens(p.slots[k]);
        const auto& got = counts[p.name][k];
        for (const auto& [tok, cnt] : got) CHECK_MESSAGE(want.count(tok), p.name, " slot ", k, " token ", tok);
        for (const auto& [tok, prob] : want) {
          const auto it = got.find(tok);
          const double freq = (it == got.end() ? 0.0 : static_cast<double>(it->second)) / N;
          const double sigma = std::sqrt(prob * (1.0 - prob) / N);
          ++cells;
          if (sigma > 0) worst_z = std::max(worst_z, std::abs(freq - prob) / sigma);
          if (std::abs(freq - prob) > 3.0 * sigma + 1e-12) {
            ++outside;
            MESSAGE(p.name, " slot ", k, " token ", tok, ": p=", prob, " freq=", freq, " sigma=", sigma);
          }
        }
      }
    }
    MESSAGE(outside, " of ", cells, " cells outside 3 sigma, worst z=", worst_z);
    // Family-wise bound: two-sided 5% over all cells.
    CHECK(worst_z < 3.9);
    CHECK(outside == 0);
  }

  TEST_CASE("vocabulary size equals the distinct token count") {
    const auto c = generate(default_synth_spec(7));
    std::vector<std::vector<Token>> seqs;
    std::set<Token> distinct;
    for (const auto& r : extract_all(c, 7)) {
      seqs.push_back(tokens(r));
      distinct.insert(seqs.back().begin(), seqs.back().end());
    }
    const auto v = Vocabulary::build(seqs);
    CHECK(v.size() == distinct.size());
    CHECK(v.total_size() == distinct.size() + 1);
  }
}
