#pragma once

// Replays a plan against its lifetimes on a real buffer. Each tensor writes a
// unique fill pattern into its block when it becomes live and must still read
// that pattern back at every later step it is live. A mismatch means two live
// tensors were placed in overlapping memory.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lsf/memplan/planner.hpp"

namespace lsf::memplan {

struct Violation {
  std::size_t step = 0;
  std::uint64_t tensor = 0;      // tensor whose pattern was destroyed
  std::uint64_t clobbered_by = 0;

  std::string describe() const {
    return "step " + std::to_string(step) + ": tensor " + std::to_string(tensor) + " clobbered by tensor " +
           std::to_string(clobbered_by);
  }
};

struct SafetyReport {
  bool ok = true;
  std::vector<Violation> violations;
  std::string error;  // set when the plan does not cover the lifetimes
};

inline std::uint64_t fill_pattern(std::uint64_t tensor) { return 0xA5A5000000000000ull ^ (tensor + 1); }

// `steps` lists the step indices to replay, in order. Empty means every step
// from the earliest first use to the latest last use.
inline SafetyReport simulate_plan_safety(const MemoryPlan& plan, const std::vector<Lifetime>& lifetimes,
                                         std::vector<std::size_t> steps = {}) {
  SafetyReport rep;
  for (const auto& t : lifetimes) {
    auto it = plan.assignment.find(t.id);
    if (it == plan.assignment.end() || it->second >= plan.blocks.size()) {
      rep.ok = false;
      rep.error = "tensor " + std::to_string(t.id) + " has no block";
      return rep;
    }
    if (plan.blocks[it->second].size < t.size) {
      rep.ok = false;
      rep.error = "tensor " + std::to_string(t.id) + " larger than its block";
      return rep;
    }
  }
  if (steps.empty() && !lifetimes.empty()) {
    std::size_t lo = lifetimes.front().first, hi = lifetimes.front().last;
    for (const auto& t : lifetimes) {
      lo = std::min(lo, t.first);
      hi = std::max(hi, t.last);
    }
    for (std::size_t s = lo; s <= hi; ++s) steps.push_back(s);
  }

  std::size_t total = 0;
  for (const auto& b : plan.blocks) total = std::max(total, b.offset + b.size);
  std::vector<std::uint64_t> memory(total, 0);

  std::map<std::uint64_t, bool> reported;
  for (std::size_t step : steps) {
    for (const auto& t : lifetimes) {
      if (t.first != step) continue;
      const std::size_t off = plan.offset_of(t.id);
      for (std::size_t i = 0; i < t.size; ++i) memory[off + i] = fill_pattern(t.id);
    }
    for (const auto& t : lifetimes) {
      if (step < t.first || step > t.last || reported[t.id]) continue;
      const std::size_t off = plan.offset_of(t.id);
      for (std::size_t i = 0; i < t.size; ++i) {
        const std::uint64_t seen = memory[off + i];
        if (seen != fill_pattern(t.id)) {
          rep.ok = false;
          rep.violations.push_back({step, t.id, (seen ^ 0xA5A5000000000000ull) - 1});
          reported[t.id] = true;
          break;
        }
      }
    }
  }
  return rep;
}

}  // namespace lsf::memplan
