#pragma once

#include <cstddef>
#include <memory>

namespace lsf {

// Leaf width of the fixed pairwise reduction tree. Leaves are summed left to
// right; leaf results are combined by recursive halving over leaf indices.
inline constexpr std::size_t kReduceLeaf = 32;

inline std::size_t leaf_count(std::size_t n) { return (n + kReduceLeaf - 1) / kReduceLeaf; }

template <class T, class Fn>
T leaf_sum(std::size_t n, std::size_t leaf, Fn&& term) {
  const std::size_t begin = leaf * kReduceLeaf;
  const std::size_t end = begin + kReduceLeaf < n ? begin + kReduceLeaf : n;
  T s{};
  for (std::size_t i = begin; i < end; ++i) s += term(i);
  return s;
}

template <class T>
T combine_leaves(const T* leaves, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return leaves[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return combine_leaves(leaves, lo, mid) + combine_leaves(leaves, mid, hi);
}

// Sum of term(i) for i in [0, n) using the fixed tree.
template <class T, class Fn>
T tree_sum(std::size_t n, Fn&& term) {
  const std::size_t leaves = leaf_count(n);
  if (leaves <= 1) return leaf_sum<T>(n, 0, term);
  constexpr std::size_t kStack = 64;
  T stack_buf[kStack];
  T* buf = stack_buf;
  std::unique_ptr<T[]> heap;
  if (leaves > kStack) {
    heap = std::make_unique<T[]>(leaves);
    buf = heap.get();
  }
  for (std::size_t l = 0; l < leaves; ++l) buf[l] = leaf_sum<T>(n, l, term);
  return combine_leaves(buf, 0, leaves);
}

}  // namespace lsf
