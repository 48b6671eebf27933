#include <doctest.h>

#include <algorithm>
#include <functional>
#include <random>
#include <set>

#include "apideob/argrep.hpp"
#include "apideob/cfg.hpp"
#include "apideob/io.hpp"
#include "apideob/listing.hpp"
#include "helpers.hpp"

using namespace apideob;
using testing::Asm;
using testing::ebp;
using testing::imm;
using testing::reg;

TEST_SUITE("listing") {
  TEST_CASE("listing JSONL round-trips") {
    Asm a;
    a("push", {reg("ebp")})("mov", {reg("ebp"), reg("esp")})("mov", {ebp(-0xC), imm(0x1000)});
    a("mov", {reg("cx"), testing::abs_mem(0x1068EEC, 2)})("ret");
    const auto f = a.function("b1");
    const auto text = serialize_listing({f, f});
    const auto back = parse_listing(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == f);
    CHECK(serialize_listing(back) == text);
  }

  TEST_CASE("malformed listings are rejected") {
    CHECK_THROWS_AS(parse_listing("{not json"), ParseError);
    CHECK(parse_listing("\n\n").empty());
    CHECK_THROWS(make_instruction(0, "push", {}));
  }

  TEST_CASE("addresses must increase") {
    Asm a;
    a("nop")("ret");
    auto f = a.function();
    std::swap(f.instructions[0], f.instructions[1]);
    f.entry_addr = f.instructions[0].addr;
    CHECK_THROWS_AS(validate_listing(f), ValidationError);
  }

  TEST_CASE("signature db bounds and suffix resolution") {
    CHECK_THROWS_AS(ApiSignatureDb({{"Foo", 2}}), ValidationError);
    CHECK_THROWS_AS(ApiSignatureDb({{"Foo", 13}}), ValidationError);
    const auto db = default_signature_db();
    CHECK(db.entries().size() == 25);
    CHECK(db.names() == default_api_names());
    CHECK(db.n_args("CreateWindowEx") == 12);
    CHECK(db.resolve("CreateFileW")->first == "CreateFile");
    CHECK(db.resolve("RegOpenKeyExA")->second == 5);
    CHECK_FALSE(db.resolve("CloseHandle").has_value());
    CHECK(ApiSignatureDb::from_json(db.to_json()).entries() == db.entries());
  }

  TEST_CASE("import table parses hex keys") {
    const auto t = parse_import_table(R"({"0x401000": "MessageBoxA", "0x401004": "ReadFile"})");
    CHECK(t.at(0x401000) == "MessageBoxA");
    CHECK(parse_import_table(serialize_import_table(t)) == t);
    CHECK_THROWS_AS(parse_import_table("[1,2]"), ParseError);
  }

  TEST_CASE("shipped data files match the built-in tables") {
    const std::string dir = APIDEOB_DATA_DIR;
    CHECK(ApiSignatureDb::from_json(read_file(dir + "/api_signatures.json")).entries() ==
          default_signature_db().entries());
    CHECK(ConstantWhitelist::from_json(read_file(dir + "/whitelist.json")).values() ==
          default_whitelist().values());
  }

  TEST_CASE("hex rendering") {
    CHECK(hex_string(0x1068EEC) == "0x1068EEC");
    CHECK(parse_address("0x1068eec") == 0x1068EEC);
  }
}

TEST_SUITE("cfg") {
  TEST_CASE("diamond with ret and tail jump") {
    Asm a;
    a("cmp", {reg("eax"), imm(0)});          // 0x401000
    a("je", {imm(0x401010)});                // 0x401004
    a("mov", {reg("ecx"), imm(1)});          // 0x401008
    a("jmp", {imm(0x900000)});               // 0x40100C tail jump
    a("mov", {reg("ecx"), imm(2)});          // 0x401010
    a("ret");                                // 0x401014
    const auto g = build_cfg(a.function());
    REQUIRE(g.nodes.size() == 3);
    CHECK(g.edges == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {0, 2}});
    CHECK(g.returns == std::vector<std::size_t>{1, 2});
    const auto p = select_path(g, 1);
    CHECK(p.nodes.size() == 2);
    CHECK_FALSE(p.degraded);
  }

  TEST_CASE("branch into the middle of an instruction is invalid") {
    Asm a;
    a("je", {imm(0x401002)})("ret");
    CHECK_THROWS_AS(build_cfg(a.function()), ValidationError);
  }

  TEST_CASE("no reachable return degrades") {
    const auto g = make_graph(3, {{0, 1}, {1, 2}, {2, 1}}, 0, {});
    const auto p = select_path(g, 3);
    CHECK(p.degraded);
    CHECK(p.nodes.front() == 0);
  }
}

namespace {

// Plain recursive enumeration of every simple entry-to-return path.
std::size_t oracle_longest(const Cfg& g) {
  std::size_t best = 0;
  std::vector<bool> on(g.nodes.size(), false);
  std::function<void(std::size_t, std::size_t)> go = [&](std::size_t v, std::size_t len) {
    on[v] = true;
    if (g.is_return(v)) best = std::max(best, len);
    for (auto w : g.successors[v])
      if (!on[w]) go(w, len + 1);
    on[v] = false;
  };
  go(g.entry, 1);
  return best;
}

Cfg random_graph(std::mt19937_64& rng, std::size_t n, std::size_t max_edges, bool dag) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (dag ? i < j : i != j) all.emplace_back(i, j);
  std::shuffle(all.begin(), all.end(), rng);
  std::uniform_int_distribution<std::size_t> ecount(1, std::min(max_edges, all.size()));
  all.resize(ecount(rng));
  std::vector<std::size_t> rets;
  std::bernoulli_distribution is_ret(0.25);
  for (std::size_t v = 0; v < n; ++v)
    if (is_ret(rng)) rets.push_back(v);
  return make_graph(n, all, 0, rets);
}

void check_valid_path(const Cfg& g, const PathResult& p) {
  REQUIRE_FALSE(p.nodes.empty());
  CHECK(p.nodes.front() == g.entry);
  std::set<std::size_t> seen(p.nodes.begin(), p.nodes.end());
  CHECK(seen.size() == p.nodes.size());
  for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) {
    const auto& s = g.successors[p.nodes[i]];
    CHECK(std::binary_search(s.begin(), s.end(), p.nodes[i + 1]));
  }
  if (!p.degraded) CHECK(g.is_return(p.nodes.back()));
}

}  // namespace

TEST_SUITE("cfg") {
  TEST_CASE("longest path matches brute force on random DAGs") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> nodes(2, 16);
    for (int trial = 0; trial < 500; ++trial) {
      const auto g = random_graph(rng, nodes(rng), 100, true);
      REQUIRE(g.edge_count() <= 100);
      const auto p = select_path(g, static_cast<std::uint64_t>(trial));
      const auto best = oracle_longest(g);
      check_valid_path(g, p);
      if (best == 0) {
        CHECK(p.degraded);
      } else {
        CHECK(p.nodes.size() == best);
      }
    }
  }

  TEST_CASE("acyclic fallback still finds the longest path") {
    std::mt19937_64 rng(7);
    PathOptions opts;
    opts.enumeration_cap = 1;
    for (int trial = 0; trial < 100; ++trial) {
      const auto g = random_graph(rng, 14, 60, true);
      const auto best = oracle_longest(g);
      const auto p = select_path(g, 1, opts);
      check_valid_path(g, p);
      if (best > 0) CHECK(p.nodes.size() == best);
    }
  }

  TEST_CASE("exhaustive search handles cycles") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const auto g = random_graph(rng, 8, 30, false);
      const auto best = oracle_longest(g);
      const auto p = select_path(g, 1);
      check_valid_path(g, p);
      if (best > 0) CHECK(p.nodes.size() == best);
    }
  }

  TEST_CASE("random walks on large graphs are deterministic per seed") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const auto g = random_graph(rng, 40, 400, trial % 2 == 0);
      if (g.edge_count() <= 100) continue;
      const auto a = select_path(g, 99);
      const auto b = select_path(g, 99);
      CHECK(a.method == PathMethod::RandomWalk);
      CHECK(a.nodes == b.nodes);
      check_valid_path(g, a);
    }
  }
}
