#include <doctest.h>

#include <fstream>

#include "apideob/argrep.hpp"
#include "apideob/symexec.hpp"
#include "helpers.hpp"

using namespace apideob;
using testing::abs_mem;
using testing::Asm;
using testing::ebp;
using testing::imm;
using testing::reg;

namespace {

constexpr std::uint32_t kIat = 0x401F00;

MachineState run(const Asm& a) {
  auto s = MachineState::initial();
  for (const auto& ins : a.out) step(s, ins);
  return s;
}

std::vector<ApiCallRecord> extract(const Asm& a, const ImportTable& imports,
                                   const ApiSignatureDb& sigs = default_signature_db()) {
  CallResolver resolver(&imports);
  return extract_function(a.function(), resolver, sigs, 1);
}

std::vector<Token> tokens(const ApiCallRecord& r) {
  return abstract_sequence(r, static_cast<std::size_t>(r.n_args), AbstractionConfig{});
}

}  // namespace

TEST_SUITE("symexec") {
  TEST_CASE("local write stores under size:addr") {
    Asm a;
    a("mov", {ebp(-0xC), imm(0x1000)});
    const auto s = run(a);
    REQUIRE(s.memory.count("4:ebp-0xC"));
    CHECK(s.memory.at("4:ebp-0xC") == SymValue(Concrete{0x1000}));
  }

  TEST_CASE("unknown argument and local reads") {
    Asm a;
    a("mov", {reg("esi"), ebp(8)})("mov", {reg("edi"), ebp(-0xC)});
    const auto s = run(a);
    CHECK(s.reg(Register::esi).to_string() == "arg_8h");
    CHECK(s.memory.at("4:ebp+0x8").to_string() == "arg_8h");
    CHECK(s.reg(Register::edi).to_string() == "var_Ch");
  }

  TEST_CASE("absolute word read emits m_0") {
    Asm a;
    a("mov", {reg("cx"), abs_mem(0x1068EEC, 2)});
    const auto s = run(a);
    REQUIRE(s.memory.count("2:0x1068EEC"));
    CHECK(s.memory.at("2:0x1068EEC") == SymValue(MemAtom{0}));
    CHECK(s.memory.at("2:0x1068EEC").to_string() == "m_0");
  }

  TEST_CASE("repeated reads of one key reuse the value") {
    Asm a;
    a("mov", {reg("eax"), abs_mem(0x500000)})("mov", {reg("ebx"), abs_mem(0x500000)});
    a("mov", {reg("ecx"), abs_mem(0x500004)});
    const auto s = run(a);
    CHECK(s.reg(Register::eax) == s.reg(Register::ebx));
    CHECK(s.reg(Register::ecx).to_string() == "m_1");
  }

  TEST_CASE("xor/add/push idiom yields the constant") {
    Asm a;
    a("xor", {reg("eax"), reg("eax")})("add", {reg("eax"), imm(0x25)})("push", {reg("eax")});
    const auto s = run(a);
    REQUIRE(s.stack.size() == 1);
    CHECK(s.stack.back() == SymValue(Concrete{0x25}));
  }

  TEST_CASE("inc, dec and sub fold concrete values") {
    Asm a;
    a("mov", {reg("eax"), imm(5)})("inc", {reg("eax")})("inc", {reg("eax")})("dec", {reg("eax")});
    a("sub", {reg("eax"), imm(2)});
    CHECK(run(a).reg(Register::eax) == SymValue(Concrete{4}));
  }

  TEST_CASE("symbolic arithmetic becomes an expression") {
    Asm a;
    a("mov", {reg("eax"), ebp(8)})("add", {reg("eax"), imm(4)});
    const auto s = run(a);
    CHECK(std::holds_alternative<ExprNode>(s.reg(Register::eax).v));
    CHECK(project(s.reg(Register::eax)).tag == ArgTag::Expr);
  }

  TEST_CASE("sub esp reserves star slots") {
    Asm a;
    a("sub", {reg("esp"), imm(8)})("push", {imm(3)});
    const auto s = run(a);
    REQUIRE(s.stack.size() == 3);
    CHECK(s.stack[0] == SymValue(StarAtom{}));
    CHECK(s.stack[2] == SymValue(Concrete{3}));
  }

  TEST_CASE("initial registers are symbolic") {
    const auto s = MachineState::initial();
    CHECK(s.reg(Register::ebx).to_string() == "ebx");
    CHECK(s.stack.empty());
  }
}

TEST_SUITE("symexec") {
  TEST_CASE("RegOpenKeyEx call shapes") {
    const ImportTable imports{{kIat, "RegOpenKeyExW"}};
    Asm a;
    a("push", {reg("ebp")})("mov", {reg("ebp"), reg("esp")});
    a("push", {imm(1)})("push", {imm(1)})("push", {imm(0x146)})("push", {ebp(-0x10)});
    a("push", {ebp(-0x14)})("call", {abs_mem(kIat)});
    a("push", {imm(1)})("push", {ebp(-0x8)})("push", {imm(0x170)})("push", {imm(4)});
    a("push", {abs_mem(0x600000)})("call", {abs_mem(kIat)});
    a("pop", {reg("ebp")})("ret");
    const auto recs = extract(a, imports);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].api == "RegOpenKeyEx");
    CHECK(recs[0].n_args == 5);
    CHECK(tokens(recs[0]) == std::vector<Token>{"var", "var", "0x146", "1", "1"});
    CHECK(tokens(recs[1]) == std::vector<Token>{"mem", "4", "0x170", "var", "1"});
  }

  TEST_CASE("GetLocaleInfo call shapes") {
    const ImportTable imports{{kIat, "GetLocaleInfoA"}};
    Asm a;
    a("push", {imm(1)})("push", {imm(1)})("push", {imm(4)})("push", {abs_mem(0x600000)});
    a("call", {abs_mem(kIat)});
    a("call", {imm(0x300000)});
    a("push", {imm(2)})("push", {imm(2)})("push", {imm(3)})("push", {reg("eax")});
    a("call", {abs_mem(kIat)})("ret");
    ExtractionDiagnostics diag;
    CallResolver resolver(&imports);
    const auto recs = extract_function(a.function(), resolver, default_signature_db(), 1, &diag);
    REQUIRE(recs.size() == 2);
    CHECK(tokens(recs[0]) == std::vector<Token>{"mem", "4", "1", "1"});
    CHECK(tokens(recs[1]) == std::vector<Token>{"ret", "3", "2", "2"});
    CHECK(diag.api_calls == 2);
    CHECK(diag.non_api_calls == 1);
  }

  TEST_CASE("twelve slots are read and n_args popped") {
    const ImportTable imports{{kIat, "HeapAlloc"}};
    Asm a;
    for (std::uint32_t v = 1; v <= 5; ++v) a("push", {imm(v)});
    a("call", {abs_mem(kIat)})("call", {abs_mem(kIat)})("ret");
    const auto recs = extract(a, imports);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].raw_args[0] == ArgValue{ArgTag::Int, 5});
    CHECK(recs[0].raw_args[4] == ArgValue{ArgTag::Int, 1});
    CHECK(recs[0].raw_args[5].tag == ArgTag::Star);
    CHECK(recs[1].raw_args[0] == ArgValue{ArgTag::Int, 2});
    CHECK(recs[1].raw_args[2].tag == ArgTag::Star);
  }

  TEST_CASE("register and thunk call targets resolve") {
    const ImportTable imports{{kIat, "SetTimer"}};
    Asm thunk;
    thunk.addr = 0x401800;
    thunk("jmp", {abs_mem(kIat)});
    Asm a;
    a("mov", {reg("edi"), imm(kIat)})("push", {imm(4)})("push", {imm(3)})("push", {imm(2)});
    a("push", {imm(1)})("call", {reg("edi")});
    a("push", {imm(1)})("push", {imm(1)})("push", {imm(1)})("push", {imm(1)});
    a("call", {imm(0x401800)})("ret");
    CallResolver resolver(&imports);
    const std::vector<FunctionListing> fs{thunk.function(), a.function()};
    resolver.add_thunks_from(fs);
    const auto recs = extract_function(fs[1], resolver, default_signature_db(), 1);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].api == "SetTimer");
    CHECK(recs[1].api == "SetTimer");
  }

  TEST_CASE("unresolved indirect calls are counted") {
    Asm a;
    a("call", {ebp(8)})("ret");
    ExtractionDiagnostics diag;
    const ImportTable imports;
    CallResolver resolver(&imports);
    CHECK(extract_function(a.function(), resolver, default_signature_db(), 1, &diag).empty());
    CHECK(diag.unresolved_indirect == 1);
  }

  TEST_CASE("records round-trip through JSONL") {
    const ImportTable imports{{kIat, "HeapAlloc"}};
    Asm a;
    a("push", {imm(0x1000)})("push", {ebp(-4)})("push", {reg("eax")})("call", {abs_mem(kIat)})("ret");
    const auto recs = extract(a, imports);
    REQUIRE(recs.size() == 1);
    const auto back = parse_records(serialize_records(recs));
    CHECK(back == recs);
  }
}

TEST_SUITE("argrep") {
  TEST_CASE("integer abstraction") {
    const AbstractionConfig cfg;
    const ImageRange none{};
    auto tok = [&](std::uint32_t v) { return abstract(ArgValue{ArgTag::Int, v}, cfg, none); };
    CHECK(tok(0x1000) == "4");
    CHECK(tok(0x12) == "2");
    CHECK(tok(0x80000002) == "0x80000002");
    CHECK(tok(0x146) == "0x146");
    CHECK(tok(1) == "1");
    CHECK(tok(0x7FFF) == "4");
    CHECK(tok(0x12345678) == "ptr");
    CHECK(tok(0xFFFF0000) == "8");
  }

  TEST_CASE("image addresses become ptr before the whitelist") {
    const AbstractionConfig cfg;
    CHECK(abstract(ArgValue{ArgTag::Int, 0x80}, cfg, ImageRange{0, 0x1000}) == "ptr");
    CHECK(abstract(ArgValue{ArgTag::Int, 0x4010A0}, cfg, ImageRange{0x400000, 0x500000}) == "ptr");
  }

  TEST_CASE("symbolic abstraction") {
    const AbstractionConfig cfg;
    const ImageRange none{};
    CHECK(abstract(SymValue(StarAtom{}), cfg, none) == "*");
    CHECK(abstract(make_expr(ExprOp::Add, RegAtom{Register::eax}, Concrete{4}), cfg, none) == "expr");
    CHECK(abstract(SymValue(RegAtom{Register::esi}), cfg, none) == "reg");
    CHECK(abstract(SymValue(VarAtom{0xC}), cfg, none) == "var");
    CHECK(abstract(SymValue(ArgAtom{0x8}), cfg, none) == "var");
    CHECK(abstract(SymValue(MemAtom{3}), cfg, none) == "mem");
    CHECK(abstract(SymValue(RetAtom{}), cfg, none) == "ret");
  }

  TEST_CASE("vocabulary reserves an OOV slot") {
    const auto v = Vocabulary::build({{"var", "4"}, {"4", "ptr"}});
    CHECK(v.size() == 3);
    CHECK(v.total_size() == 4);
    CHECK(v.encode("never") == v.oov_index());
    CHECK(Vocabulary::from_json(v.to_json()) == v);
  }

  TEST_CASE("whitelist reload keeps old values on bad input") {
    const auto dir = testing::temp_dir("wl");
    const auto path = (dir / "wl.json").string();
    {
      std::ofstream(path) << "[\"0x10\"";
    }
    ConstantWhitelist wl({1, 2});
    CHECK_THROWS(wl.reload(path));
    CHECK(wl.values() == std::set<std::uint32_t>{1, 2});
    {
      std::ofstream(path) << "[\"0x10\"]";
    }
    wl.reload(path);
    CHECK(wl.values() == std::set<std::uint32_t>{0x10});
  }
}
