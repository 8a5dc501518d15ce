#pragma once

// Static memory planning over tensor lifetimes.
//
// Temporaries whose [first, last] step intervals are disjoint may share a
// block. Assignment is greedy first-fit in order of first use; a block is
// sized by its largest occupant and the plan's peak is the sum of block
// sizes. Sizes are element counts; the arena applies the element width.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lsf/error.hpp"

namespace lsf::memplan {

struct Lifetime {
  std::uint64_t id = 0;
  std::size_t size = 1;
  std::size_t first = 0;
  std::size_t last = 0;
  std::string label;

  bool overlaps(const Lifetime& o) const { return first <= o.last && o.first <= last; }
};

inline void validate(const Lifetime& t) {
  LSF_CHECK(t.first <= t.last, ErrorCode::InvalidArgument,
            "lifetime of tensor " + std::to_string(t.id) + " ends before it starts");
  LSF_CHECK(t.size >= 1, ErrorCode::InvalidArgument, "tensor " + std::to_string(t.id) + " has size 0");
}

enum class MemoryClass { Permanent, Temporary };

enum class TensorRole { Untagged, Parameter, Gradient, OptimizerState, Activation, Scratch };

inline const char* to_string(MemoryClass c) { return c == MemoryClass::Permanent ? "permanent" : "temporary"; }

// Parameters, their gradients and optimizer moments have a fixed size for
// the whole run; everything batch-shaped is temporary.
inline MemoryClass classify(TensorRole role) {
  switch (role) {
    case TensorRole::Parameter:
    case TensorRole::Gradient:
    case TensorRole::OptimizerState:
      return MemoryClass::Permanent;
    case TensorRole::Activation:
    case TensorRole::Scratch:
      return MemoryClass::Temporary;
    case TensorRole::Untagged:
      break;
  }
  throw Error(ErrorCode::UntaggedTensor, "tensor has no role tag");
}

struct TaggedTensor {
  std::string name;
  TensorRole role = TensorRole::Untagged;
};

inline std::vector<MemoryClass> classify(const std::vector<TaggedTensor>& tensors) {
  std::vector<MemoryClass> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) {
    if (t.role == TensorRole::Untagged) throw Error(ErrorCode::UntaggedTensor, "tensor '" + t.name + "'");
    out.push_back(classify(t.role));
  }
  return out;
}

struct Block {
  std::size_t id = 0;
  std::size_t size = 0;
  std::size_t offset = 0;  // element offset inside the arena
  std::vector<std::uint64_t> tensors;
};

struct MemoryPlan {
  std::vector<Block> blocks;
  std::map<std::uint64_t, std::size_t> assignment;  // tensor id -> block id
  std::size_t peak = 0;

  std::size_t offset_of(std::uint64_t tensor) const { return blocks.at(assignment.at(tensor)).offset; }
};

inline std::size_t naive_peak(const std::vector<Lifetime>& lifetimes) {
  std::size_t total = 0;
  for (const auto& t : lifetimes) total += t.size;
  return total;
}

inline MemoryPlan plan(const std::vector<Lifetime>& lifetimes) {
  MemoryPlan out;
  if (lifetimes.empty()) return out;
  for (const auto& t : lifetimes) validate(t);

  std::vector<const Lifetime*> order;
  order.reserve(lifetimes.size());
  for (const auto& t : lifetimes) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](const Lifetime* a, const Lifetime* b) {
    if (a->first != b->first) return a->first < b->first;
    if (a->size != b->size) return a->size > b->size;
    return a->id < b->id;
  });

  std::vector<std::size_t> block_end;  // last step of the block's latest occupant
  for (const Lifetime* t : order) {
    LSF_CHECK(!out.assignment.count(t->id), ErrorCode::DuplicateName, "tensor id " + std::to_string(t->id) + " repeated");
    std::size_t chosen = block_end.size();
    for (std::size_t b = 0; b < block_end.size(); ++b) {
      if (block_end[b] < t->first) {
        chosen = b;
        break;
      }
    }
    if (chosen == block_end.size()) {
      out.blocks.push_back(Block{chosen, 0, 0, {}});
      block_end.push_back(0);
    }
    Block& blk = out.blocks[chosen];
    blk.size = std::max(blk.size, t->size);
    blk.tensors.push_back(t->id);
    block_end[chosen] = t->last;
    out.assignment[t->id] = chosen;
  }
  for (auto& b : out.blocks) {
    b.offset = out.peak;
    out.peak += b.size;
  }
  return out;
}

}  // namespace lsf::memplan
