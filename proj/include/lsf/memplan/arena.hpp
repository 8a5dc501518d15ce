#pragma once

// One-shot scratch arena for batch-shaped temporaries.
//
// Direct: every request gets its own heap block (tests, benchmarks).
// Planning: requests are served from the heap while their lifetimes are
//   recorded on a logical clock; finish_planning() runs the planner and
//   allocates a single buffer of the planned peak.
// Execution: request k of a step is served at the planned offset of
//   request k. A request that does not fit its block (larger than planned,
//   unexpected label, block still occupied, more requests than planned)
//   falls back to the heap and is counted as a reallocation.
//
// Sizes are in units of `unit_bytes`; byte-sized masks round up.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lsf/error.hpp"
#include "lsf/memplan/planner.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::memplan {

struct ArenaStats {
  std::size_t capacity = 0;     // units in the planned buffer
  std::size_t high_water = 0;   // highest unit touched in the planned buffer
  std::size_t reallocations = 0;
  std::size_t requests = 0;     // requests of the last step
};

class ScratchArena {
 public:
  enum class Mode { Direct, Planning, Execution };

  explicit ScratchArena(std::size_t unit_bytes = sizeof(float)) : unit_(unit_bytes) {
    LSF_CHECK(unit_bytes >= 1, ErrorCode::InvalidArgument, "arena unit must be >= 1 byte");
  }
  ScratchArena(const ScratchArena&) = delete;
  ScratchArena& operator=(const ScratchArena&) = delete;

  Mode mode() const { return mode_; }
  std::size_t unit_bytes() const { return unit_; }
  const ArenaStats& stats() const { return stats_; }
  const MemoryPlan& plan() const { return plan_; }
  const std::vector<Lifetime>& recorded() const { return recorded_; }
  std::size_t live() const { return live_count_; }

  void begin_planning() {
    LSF_CHECK(live_count_ == 0, ErrorCode::InvalidArgument, "arena has live buffers");
    mode_ = Mode::Planning;
    recorded_.clear();
    clock_ = 0;
    begin_step();
  }

  // Builds the plan from the recorded lifetimes and allocates the buffer.
  const MemoryPlan& finish_planning() {
    LSF_CHECK(mode_ == Mode::Planning, ErrorCode::InvalidArgument, "arena is not planning");
    LSF_CHECK(live_count_ == 0, ErrorCode::InvalidArgument, "planning pass left buffers live");
    plan_ = memplan::plan(recorded_);
    planned_size_.assign(recorded_.size(), 0);
    planned_label_.assign(recorded_.size(), {});
    for (const auto& t : recorded_) {
      planned_size_[t.id] = t.size;
      planned_label_[t.id] = t.label;
    }
    storage_.reset(new std::max_align_t[(plan_.peak * unit_ + sizeof(std::max_align_t) - 1) /
                                            sizeof(std::max_align_t) +
                                        1]);
    block_busy_.assign(plan_.blocks.size(), false);
    stats_ = ArenaStats{plan_.peak, 0, 0, 0};
    mode_ = Mode::Execution;
    begin_step();
    return plan_;
  }

  void begin_step() {
    LSF_CHECK(live_count_ == 0, ErrorCode::InvalidArgument,
              std::to_string(live_count_) + " arena buffers still live at step start");
    next_request_ = 0;
  }

  std::size_t units_for(std::size_t bytes) const { return std::max<std::size_t>(1, (bytes + unit_ - 1) / unit_); }

  // Returns (request id, pointer).
  std::pair<std::size_t, std::byte*> acquire(std::size_t bytes, const std::string& label) {
    const std::size_t units = units_for(bytes);
    const std::size_t id = next_request_++;
    stats_.requests = next_request_;
    if (slots_.size() <= id) slots_.resize(id + 1);
    Slot& s = slots_[id];
    LSF_CHECK(!s.live, ErrorCode::InvalidArgument, "arena request " + std::to_string(id) + " reused while live");
    s = Slot{};
    s.live = true;
    ++live_count_;

    if (mode_ == Mode::Execution && id < planned_size_.size() && units <= planned_size_[id] &&
        planned_label_[id] == label) {
      const std::size_t blk = plan_.assignment.at(id);
      if (!block_busy_[blk]) {
        block_busy_[blk] = true;
        s.block = blk;
        const std::size_t off = plan_.blocks[blk].offset;
        stats_.high_water = std::max(stats_.high_water, off + units);
        s.ptr = reinterpret_cast<std::byte*>(storage_.get()) + off * unit_;
        return {id, s.ptr};
      }
    }
    if (mode_ == Mode::Execution) ++stats_.reallocations;
    if (mode_ == Mode::Planning) {
      s.record = recorded_.size();
      recorded_.push_back(Lifetime{id, units, clock_++, 0, label});
    }
    s.heap.reset(new std::max_align_t[(units * unit_ + sizeof(std::max_align_t) - 1) / sizeof(std::max_align_t) + 1]);
    s.ptr = reinterpret_cast<std::byte*>(s.heap.get());
    return {id, s.ptr};
  }

  void release(std::size_t id) {
    LSF_CHECK(id < slots_.size() && slots_[id].live, ErrorCode::InvalidArgument,
              "arena release of request " + std::to_string(id) + " that is not live");
    Slot& s = slots_[id];
    if (s.record != kNone) recorded_[s.record].last = clock_++;
    if (s.block != kNone) block_busy_[s.block] = false;
    s.heap.reset();
    s.live = false;
    --live_count_;
  }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  struct Slot {
    bool live = false;
    std::size_t block = kNone;
    std::size_t record = kNone;
    std::byte* ptr = nullptr;
    std::unique_ptr<std::max_align_t[]> heap;
  };

  std::size_t unit_;
  Mode mode_ = Mode::Direct;
  std::vector<Slot> slots_;
  std::size_t next_request_ = 0;
  std::size_t live_count_ = 0;

  std::vector<Lifetime> recorded_;
  std::size_t clock_ = 0;

  MemoryPlan plan_;
  std::vector<std::size_t> planned_size_;
  std::vector<std::string> planned_label_;
  std::vector<bool> block_busy_;
  std::unique_ptr<std::max_align_t[]> storage_;
  ArenaStats stats_;
};

// Move-only handle to an arena region viewed as a tensor of E.
template <class E>
class Buffer {
 public:
  Buffer() = default;
  Buffer(ScratchArena& arena, Shape shape, const std::string& label) : arena_(&arena), shape_(shape) {
    auto [id, ptr] = arena.acquire(shape.numel() * sizeof(E), label);
    id_ = id;
    data_ = reinterpret_cast<E*>(ptr);
  }
  Buffer(Buffer&& o) noexcept { *this = std::move(o); }
  Buffer& operator=(Buffer&& o) noexcept {
    if (this != &o) {
      reset();
      arena_ = std::exchange(o.arena_, nullptr);
      id_ = o.id_;
      data_ = std::exchange(o.data_, nullptr);
      shape_ = o.shape_;
    }
    return *this;
  }
  ~Buffer() { reset(); }

  void reset() {
    if (arena_) arena_->release(id_);
    arena_ = nullptr;
    data_ = nullptr;
  }

  explicit operator bool() const { return data_ != nullptr; }
  E* data() const { return data_; }
  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }
  E& operator[](std::size_t i) const { return data_[i]; }
  TensorView<E> view() const { return {data_, shape_}; }
  TensorView<const E> cview() const { return {data_, shape_}; }
  TensorView<E> view(Shape s) const { return view().reshaped(s); }
  TensorView<const E> cview(Shape s) const { return cview().reshaped(s); }

  void fill(E v) const { std::fill(data_, data_ + numel(), v); }

 private:
  ScratchArena* arena_ = nullptr;
  std::size_t id_ = 0;
  E* data_ = nullptr;
  Shape shape_;
};

}  // namespace lsf::memplan
