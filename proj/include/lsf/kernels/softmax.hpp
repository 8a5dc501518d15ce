#pragma once

// Three-step stable softmax over the last dimension:
//   1. x' = max over unmasked entries
//   2. Z  = sum of exp(x_j - x') over unmasked entries (fixed pairwise tree)
//   3. y_i = exp(x_i - x') / Z, masked entries set to 0
//
// Two work distributions share the same arithmetic: RowSerial hands whole
// rows to workers, RowParallelTree splits a single row's tree leaves across
// workers. Both evaluate the identical reduction tree.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "lsf/error.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/reduce.hpp"
#include "lsf/numerics/rng.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::kernels {

struct AttentionMask {
  bool causal = false;
  std::vector<std::int32_t> valid_len;  // per batch entry; empty = no padding

  static AttentionMask none() { return {}; }
  static AttentionMask causal_mask() { return {true, {}}; }
  static AttentionMask padding(std::vector<std::int32_t> lens) { return {false, std::move(lens)}; }
  static AttentionMask causal_padding(std::vector<std::int32_t> lens) { return {true, std::move(lens)}; }
};

// Row geometry of a score tensor: [Lq, Lk], [B, Lq, Lk] or [B, N, Lq, Lk].
struct MaskGeometry {
  std::size_t batch, rows_per_batch, queries, keys;

  static MaskGeometry of(const Shape& s) {
    const std::size_t r = s.rank();
    const std::size_t batch = r >= 3 ? s[0] : 1;
    const std::size_t queries = r >= 2 ? s[r - 2] : 1;
    return {batch, s.rows() / batch, queries, s.back()};
  }
};

class RowMask {
 public:
  RowMask(const AttentionMask& mask, const MaskGeometry& g) : mask_(mask), g_(g) {
    if (!mask.valid_len.empty()) {
      LSF_CHECK(mask.valid_len.size() == g.batch, ErrorCode::ShapeMismatch,
                "padding lengths for " + std::to_string(mask.valid_len.size()) + " sequences, batch is " +
                    std::to_string(g.batch));
      for (auto v : mask.valid_len)
        LSF_CHECK(v >= 1 && static_cast<std::size_t>(v) <= g.keys, ErrorCode::InvalidArgument,
                  "padding valid length " + std::to_string(v) + " outside [1, " + std::to_string(g.keys) + "]");
    }
  }

  // Allowed keys of row r form the prefix [0, limit(r)).
  std::size_t limit(std::size_t r) const {
    std::size_t lim = g_.keys;
    if (mask_.causal) lim = std::min(lim, r % g_.queries + 1);
    if (!mask_.valid_len.empty())
      lim = std::min(lim, static_cast<std::size_t>(mask_.valid_len[r / g_.rows_per_batch]));
    return lim;
  }

 private:
  const AttentionMask& mask_;
  MaskGeometry g_;
};

enum class SoftmaxStrategy { RowSerial, RowParallelTree };

inline const char* to_string(SoftmaxStrategy s) {
  return s == SoftmaxStrategy::RowSerial ? "RowSerial" : "RowParallelTree";
}

inline constexpr std::size_t kSerialColumnLimit = 4096;

namespace detail {

template <class T, class EX, class EY>
void softmax_row_serial(const EX* x, EY* y, std::size_t cols, std::size_t lim) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < lim; ++j) mx = std::max(mx, load_as<T>(x[j]));
  const T z = tree_sum<T>(lim, [&](std::size_t j) { return std::exp(load_as<T>(x[j]) - mx); });
  for (std::size_t j = 0; j < lim; ++j) y[j] = store_as<EY>(std::exp(load_as<T>(x[j]) - mx) / z);
  for (std::size_t j = lim; j < cols; ++j) y[j] = store_as<EY>(T{});
}

template <class T, class EX, class EY>
void softmax_row_tree(const EX* x, EY* y, std::size_t cols, std::size_t lim) {
  const std::size_t leaves = leaf_count(lim);
  std::vector<T> leaf_max(leaves), leaf_sums(leaves);
  default_pool().run(leaves, [&](std::size_t l) {
    const std::size_t b = l * kReduceLeaf, e = std::min(lim, b + kReduceLeaf);
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = b; j < e; ++j) mx = std::max(mx, load_as<T>(x[j]));
    leaf_max[l] = mx;
  });
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : leaf_max) mx = std::max(mx, v);
  default_pool().run(leaves, [&](std::size_t l) {
    leaf_sums[l] = leaf_sum<T>(lim, l, [&](std::size_t j) { return std::exp(load_as<T>(x[j]) - mx); });
  });
  const T z = leaves == 0 ? T{} : combine_leaves(leaf_sums.data(), 0, leaves);
  parallel_for(cols, kReduceLeaf * 8, [&](std::size_t b, std::size_t e) {
    for (std::size_t j = b; j < e; ++j)
      y[j] = store_as<EY>(j < lim ? std::exp(load_as<T>(x[j]) - mx) / z : T{});
  });
}

}  // namespace detail

template <class T, class EX, class EY>
void softmax_forward_into(TensorView<const EX> x, const AttentionMask& mask, TensorView<EY> y,
                          SoftmaxStrategy strategy = SoftmaxStrategy::RowSerial) {
  LSF_CHECK(x.shape() == y.shape(), ErrorCode::ShapeMismatch, "softmax output shape");
  const MaskGeometry g = MaskGeometry::of(x.shape());
  const RowMask rm(mask, g);
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r)
    LSF_CHECK(rm.limit(r) >= 1, ErrorCode::AllMaskedRow, "row " + std::to_string(r));

  if (strategy == SoftmaxStrategy::RowSerial) {
    parallel_for(rows, kRowGrain, [&](std::size_t begin, std::size_t end) {
      for (std::size_t r = begin; r < end; ++r)
        detail::softmax_row_serial<T>(x.data() + r * cols, y.data() + r * cols, cols, rm.limit(r));
    });
  } else {
    for (std::size_t r = 0; r < rows; ++r)
      detail::softmax_row_tree<T>(x.data() + r * cols, y.data() + r * cols, cols, rm.limit(r));
  }
}

template <class T>
struct SoftmaxCache {
  Tensor<T> probs;
};

template <class T>
std::pair<Tensor<T>, SoftmaxCache<T>> softmax_forward(const Tensor<T>& x, const AttentionMask& mask = {},
                                                      SoftmaxStrategy strategy = SoftmaxStrategy::RowSerial) {
  Tensor<T> y(x.shape());
  softmax_forward_into<T, T, T>(x.view(), mask, y.view(), strategy);
  SoftmaxCache<T> cache{y};
  return {std::move(y), std::move(cache)};
}

// Chooses a strategy per (rows, cols). With autotuning off the rule is fixed;
// with it on, both strategies are timed once on a synthetic batch of that
// shape and the faster one is cached.
class SoftmaxTuner {
 public:
  SoftmaxStrategy select(std::size_t rows, std::size_t cols, bool autotune) {
    LSF_CHECK(rows >= 1 && cols >= 1, ErrorCode::InvalidArgument, "softmax shape must be positive");
    if (!autotune) return cols <= kSerialColumnLimit ? SoftmaxStrategy::RowSerial : SoftmaxStrategy::RowParallelTree;
    std::lock_guard lock(mu_);
    const auto key = std::make_pair(rows, cols);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const SoftmaxStrategy best = time_strategies(rows, cols);
    cache_.emplace(key, best);
    return best;
  }

  std::size_t cached_shapes() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

 private:
  static SoftmaxStrategy time_strategies(std::size_t rows, std::size_t cols) {
    Tensor<float> x(Shape{rows, cols});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rand_uniform(0x5eed, i) * 8.0 - 4.0);
    Tensor<float> y(x.shape());
    auto time_one = [&](SoftmaxStrategy s) {
      const auto t0 = std::chrono::steady_clock::now();
      softmax_forward_into<float, float, float>(x.view(), AttentionMask::none(), y.view(), s);
      return std::chrono::steady_clock::now() - t0;
    };
    time_one(SoftmaxStrategy::RowSerial);  // warm-up
    const auto serial = time_one(SoftmaxStrategy::RowSerial);
    const auto tree = time_one(SoftmaxStrategy::RowParallelTree);
    return serial <= tree ? SoftmaxStrategy::RowSerial : SoftmaxStrategy::RowParallelTree;
  }

  mutable std::mutex mu_;
  std::map<std::pair<std::size_t, std::size_t>, SoftmaxStrategy> cache_;
};

inline SoftmaxStrategy select_softmax_strategy(std::size_t rows, std::size_t cols, bool autotune) {
  static SoftmaxTuner tuner;
  return tuner.select(rows, cols, autotune);
}

}  // namespace lsf::kernels
