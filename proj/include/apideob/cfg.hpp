#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "apideob/listing.hpp"

namespace apideob {

struct BasicBlock {
  std::uint32_t start = 0;
  std::size_t first = 0;  // index into FunctionListing::instructions
  std::size_t last = 0;   // one past the final instruction
};

// A function CFG: blocks, deduplicated edges, entry block and return blocks.
// Return blocks end in `ret` or in a tail jump (a jump leaving the function).
struct Cfg {
  std::vector<BasicBlock> nodes;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // sorted, unique
  std::vector<std::vector<std::size_t>> successors;        // sorted per node
  std::size_t entry = 0;
  std::vector<std::size_t> returns;  // sorted

  std::size_t edge_count() const { return edges.size(); }
  bool is_return(std::size_t node) const;
};

// Leader/terminator construction over an address-ordered listing. Branches
// leaving [first, last] instruction address are tail jumps; a branch into the
// function that misses an instruction boundary throws ValidationError.
Cfg build_cfg(const FunctionListing& f);

// Builds a Cfg directly from an edge list. Used for synthetic graphs.
Cfg make_graph(std::size_t node_count, std::vector<std::pair<std::size_t, std::size_t>> edges,
               std::size_t entry, std::vector<std::size_t> returns);

enum class PathMethod { Exhaustive, AcyclicDp, RandomWalk };

struct PathOptions {
  std::size_t edge_threshold = 100;    // exhaustive search when |E| <= threshold
  std::size_t walk_trials = 30;
  std::size_t enumeration_cap = 100000;
};

struct PathResult {
  std::vector<std::size_t> nodes;
  PathMethod method = PathMethod::Exhaustive;
  // Set when no return block was reachable and the path ends elsewhere.
  bool degraded = false;
};

// Longest simple path (by node count) from the entry to a return block.
PathResult select_path(const Cfg& g, std::uint64_t seed, const PathOptions& opts = {});

// Self-avoiding random walks from the entry; the longest successful trial
// wins, ties to the first found.
PathResult random_walk_path(const Cfg& g, std::uint64_t seed, std::size_t trials);

bool is_acyclic_from_entry(const Cfg& g);

}  // namespace apideob
