#include "apideob/cfg.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <random>
#include <set>

namespace apideob {

bool Cfg::is_return(std::size_t node) const {
  return std::binary_search(returns.begin(), returns.end(), node);
}

namespace {

void finalize(Cfg& g) {
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  std::sort(g.returns.begin(), g.returns.end());
  g.returns.erase(std::unique(g.returns.begin(), g.returns.end()), g.returns.end());
  g.successors.assign(g.nodes.size(), {});
  for (const auto& [from, to] : g.edges) {
    if (from >= g.nodes.size() || to >= g.nodes.size())
      throw ValidationError("cfg edge references a missing node");
    g.successors[from].push_back(to);
  }
}

}  // namespace

Cfg build_cfg(const FunctionListing& f) {
  const auto& ins = f.instructions;
  if (ins.empty()) throw ValidationError(f.binary_id + ": cannot build a CFG of an empty function");
  const std::uint32_t lo = ins.front().addr;
  const std::uint32_t hi = ins.back().addr;

  auto index_of = [&](std::uint32_t addr) -> std::size_t {
    auto it = std::lower_bound(ins.begin(), ins.end(), addr,
                               [](const Instruction& i, std::uint32_t a) { return i.addr < a; });
    if (it == ins.end() || it->addr != addr)
      throw ValidationError(f.binary_id + ": branch target " + hex_string(addr) +
                            " is not on an instruction boundary");
    return static_cast<std::size_t>(it - ins.begin());
  };
  // Returns the target index for an intra-procedural branch, npos otherwise.
  constexpr auto npos = std::numeric_limits<std::size_t>::max();
  auto local_target = [&](const Instruction& i) -> std::size_t {
    const auto* imm = std::get_if<Immediate>(&i.operands.front());
    if (!imm || imm->value < lo || imm->value > hi) return npos;
    return index_of(imm->value);
  };

  std::vector<bool> leader(ins.size(), false);
  leader[0] = true;
  for (std::size_t i = 0; i < ins.size(); ++i) {
    const auto cls = ins[i].op_class;
    if (cls == OpClass::Branch) {
      if (auto t = local_target(ins[i]); t != npos) leader[t] = true;
    }
    if ((cls == OpClass::Branch || cls == OpClass::Return) && i + 1 < ins.size())
      leader[i + 1] = true;
  }

  Cfg g;
  std::vector<std::size_t> block_of(ins.size());
  for (std::size_t i = 0; i < ins.size(); ++i) {
    if (leader[i]) g.nodes.push_back({ins[i].addr, i, i});
    g.nodes.back().last = i + 1;
    block_of[i] = g.nodes.size() - 1;
  }
  g.entry = 0;

  for (std::size_t b = 0; b < g.nodes.size(); ++b) {
    const auto& term = ins[g.nodes[b].last - 1];
    const bool has_next = b + 1 < g.nodes.size();
    switch (term.op_class) {
      case OpClass::Return:
        g.returns.push_back(b);
        break;
      case OpClass::Branch: {
        const auto t = local_target(term);
        if (t == npos) {
          g.returns.push_back(b);  // tail jump or indirect jump
        } else {
          g.edges.emplace_back(b, block_of[t]);
        }
        if (is_conditional_branch(term.mnemonic) && has_next) g.edges.emplace_back(b, b + 1);
        break;
      }
      default:
        if (has_next) g.edges.emplace_back(b, b + 1);
        break;
    }
  }
  finalize(g);
  return g;
}

Cfg make_graph(std::size_t node_count, std::vector<std::pair<std::size_t, std::size_t>> edges,
               std::size_t entry, std::vector<std::size_t> returns) {
  Cfg g;
  g.nodes.resize(node_count);
  for (std::size_t i = 0; i < node_count; ++i) g.nodes[i] = {static_cast<std::uint32_t>(i), i, i + 1};
  g.edges = std::move(edges);
  g.entry = entry;
  g.returns = std::move(returns);
  if (entry >= node_count) throw ValidationError("entry node out of range");
  for (auto r : g.returns)
    if (r >= node_count) throw ValidationError("return node out of range");
  finalize(g);
  return g;
}

bool is_acyclic_from_entry(const Cfg& g) {
  enum Color : std::uint8_t { White, Grey, Black };
  std::vector<Color> color(g.nodes.size(), White);
  // Iterative DFS keeping (node, next successor position).
  std::vector<std::pair<std::size_t, std::size_t>> stack{{g.entry, 0}};
  color[g.entry] = Grey;
  while (!stack.empty()) {
    auto& [node, pos] = stack.back();
    if (pos == g.successors[node].size()) {
      color[node] = Black;
      stack.pop_back();
      continue;
    }
    const auto next = g.successors[node][pos++];
    if (color[next] == Grey) return false;
    if (color[next] == White) {
      color[next] = Grey;
      stack.emplace_back(next, 0);
    }
  }
  return true;
}

namespace {

struct Best {
  std::vector<std::size_t> path;
  void offer(const std::vector<std::size_t>& p) {
    if (p.size() > path.size()) path = p;
  }
};

// Exhaustive simple-path search from the entry. Returns false when the
// number of completed paths exceeds `cap`.
bool enumerate_paths(const Cfg& g, std::size_t cap, Best& to_return, Best& to_sink, Best& any) {
  std::vector<bool> on_path(g.nodes.size(), false);
  std::vector<std::size_t> path;
  std::size_t completed = 0;
  bool aborted = false;

  std::function<void(std::size_t)> visit = [&](std::size_t node) {
    if (aborted) return;
    path.push_back(node);
    on_path[node] = true;
    if (g.is_return(node)) {
      to_return.offer(path);
      ++completed;
    }
    bool extended = false;
    for (auto next : g.successors[node]) {
      if (on_path[next]) continue;
      extended = true;
      visit(next);
      if (aborted) break;
    }
    if (!extended) {
      if (g.successors[node].empty()) to_sink.offer(path);
      any.offer(path);
      if (!g.is_return(node)) ++completed;
    }
    if (completed > cap) aborted = true;
    on_path[node] = false;
    path.pop_back();
  };
  visit(g.entry);
  return !aborted;
}

// Longest path on an acyclic graph by memoized DP. The tie-break reproduces
// depth-first first-found order: ending at a return block beats continuing,
// earlier successors beat later ones.
std::vector<std::size_t> dag_longest(const Cfg& g, bool to_returns) {
  constexpr long kNone = -1;
  const auto n = g.nodes.size();
  std::vector<long> best(n, kNone);
  std::vector<std::size_t> choice(n, n);  // n means "end here"
  std::vector<bool> done(n, false);

  std::function<long(std::size_t)> solve = [&](std::size_t v) -> long {
    if (done[v]) return best[v];
    long b = kNone;
    std::size_t c = n;
    const bool terminal = to_returns ? g.is_return(v) : g.successors[v].empty();
    if (terminal) b = 1;
    for (auto s : g.successors[v]) {
      const long sub = solve(s);
      if (sub != kNone && sub + 1 > b) {
        b = sub + 1;
        c = s;
      }
    }
    best[v] = b;
    choice[v] = c;
    done[v] = true;
    return b;
  };
  if (solve(g.entry) == kNone) return {};
  std::vector<std::size_t> path{g.entry};
  while (choice[path.back()] != n) path.push_back(choice[path.back()]);
  return path;
}

}  // namespace

PathResult random_walk_path(const Cfg& g, std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> best_ok;
  std::vector<std::size_t> best_partial;
  std::vector<bool> visited(g.nodes.size());
  std::vector<std::size_t> candidates;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::fill(visited.begin(), visited.end(), false);
    std::vector<std::size_t> path{g.entry};
    visited[g.entry] = true;
    bool reached = false;
    for (;;) {
      const auto cur = path.back();
      if (g.is_return(cur)) {
        reached = true;
        break;
      }
      candidates.clear();
      for (auto s : g.successors[cur])
        if (!visited[s]) candidates.push_back(s);
      if (candidates.empty()) break;  // stuck: trial aborted
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      const auto next = candidates[pick(rng)];
      visited[next] = true;
      path.push_back(next);
    }
    if (reached && path.size() > best_ok.size()) best_ok = path;
    if (!reached && path.size() > best_partial.size()) best_partial = path;
  }
  PathResult r;
  r.method = PathMethod::RandomWalk;
  if (!best_ok.empty()) {
    r.nodes = std::move(best_ok);
  } else {
    r.nodes = std::move(best_partial);
    r.degraded = true;
  }
  return r;
}

PathResult select_path(const Cfg& g, std::uint64_t seed, const PathOptions& opts) {
  if (g.edge_count() > opts.edge_threshold) return random_walk_path(g, seed, opts.walk_trials);

  Best to_return, to_sink, any;
  if (enumerate_paths(g, opts.enumeration_cap, to_return, to_sink, any)) {
    PathResult r;
    if (!to_return.path.empty()) {
      r.nodes = std::move(to_return.path);
    } else {
      r.degraded = true;
      r.nodes = !to_sink.path.empty() ? std::move(to_sink.path) : std::move(any.path);
    }
    return r;
  }
  if (is_acyclic_from_entry(g)) {
    PathResult r;
    r.method = PathMethod::AcyclicDp;
    r.nodes = dag_longest(g, true);
    if (r.nodes.empty()) {
      r.degraded = true;
      r.nodes = dag_longest(g, false);
    }
    return r;
  }
  return random_walk_path(g, seed, opts.walk_trials);
}

}  // namespace apideob
