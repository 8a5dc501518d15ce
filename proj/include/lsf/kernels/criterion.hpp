#pragma once

// Log-softmax and label-smoothed cross-entropy.
//
// With smoothed target p = (1 - alpha) * onehot(k) + alpha / V, the per-token
// loss is -sum_i p_i log q_i. log q is produced directly as
// (h_i - max) - log Z and never as log(softmax(h)).

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>

#include "lsf/error.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/reduce.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::kernels {

template <class T, class EH>
void log_softmax_forward_into(TensorView<const EH> h, TensorView<T> logq) {
  const std::size_t rows = h.rows(), v = h.cols();
  LSF_CHECK(v >= 2, ErrorCode::InvalidArgument, "log-softmax needs at least 2 classes");
  LSF_CHECK(logq.shape() == h.shape(), ErrorCode::ShapeMismatch, "log-softmax output shape");
  parallel_for(rows, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const EH* hr = h.data() + r * v;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, load_as<T>(hr[j]));
      const T z = tree_sum<T>(v, [&](std::size_t j) { return std::exp(load_as<T>(hr[j]) - mx); });
      const T log_z = std::log(z);
      T* out = logq.data() + r * v;
      for (std::size_t j = 0; j < v; ++j) out[j] = (load_as<T>(hr[j]) - mx) - log_z;
    }
  });
}

template <class T>
Tensor<T> log_softmax_forward(const Tensor<T>& h) {
  Tensor<T> out(h.shape());
  log_softmax_forward_into<T, T>(h.view(), out.view());
  return out;
}

struct CriterionResult {
  double loss = 0.0;  // summed over non-pad tokens
  std::size_t token_count = 0;
};

inline void check_smoothing(double alpha) {
  LSF_CHECK(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "label smoothing alpha must be in [0, 1]");
}

inline bool is_pad(std::int32_t target, std::optional<std::int32_t> pad_id) {
  return pad_id.has_value() && target == *pad_id;
}

inline void check_target(std::int32_t target, std::size_t v, std::size_t row) {
  LSF_CHECK(target >= 0 && static_cast<std::size_t>(target) < v, ErrorCode::TargetOutOfRange,
            "target " + std::to_string(target) + " at row " + std::to_string(row));
}

template <class T>
CriterionResult ls_cross_entropy_forward(TensorView<const T> logq, std::span<const std::int32_t> targets,
                                         double alpha, std::optional<std::int32_t> pad_id = std::nullopt) {
  check_smoothing(alpha);
  const std::size_t rows = logq.rows(), v = logq.cols();
  LSF_CHECK(targets.size() == rows, ErrorCode::ShapeMismatch, "one target per row required");
  const T on_target = T(1) - T(alpha);
  const T uniform = T(alpha) / T(v);

  std::vector<T> row_loss(rows, T{});
  parallel_for(rows, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      if (is_pad(targets[r], pad_id)) continue;
      check_target(targets[r], v, r);
      const T* lr = logq.data() + r * v;
      const T total = tree_sum<T>(v, [&](std::size_t j) { return lr[j]; });
      row_loss[r] = -on_target * lr[targets[r]] - uniform * total;
    }
  });
  CriterionResult out;
  for (std::size_t r = 0; r < rows; ++r) {
    if (is_pad(targets[r], pad_id)) continue;
    out.loss += static_cast<double>(row_loss[r]);
    ++out.token_count;
  }
  return out;
}

template <class T>
CriterionResult ls_cross_entropy_forward(const Tensor<T>& logq, std::span<const std::int32_t> targets,
                                         double alpha, std::optional<std::int32_t> pad_id = std::nullopt) {
  return ls_cross_entropy_forward<T>(logq.view(), targets, alpha, pad_id);
}

}  // namespace lsf::kernels
