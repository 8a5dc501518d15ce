#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>

#include "lsf/kernels/criterion.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::grad {

// dh_i = q_i - alpha/V - (1 - alpha) at the target, q_i - alpha/V elsewhere,
// times `scale`. Pad rows receive zero. When `from_log` is set the input holds
// log q and q is recovered element-wise.
template <class T, class EQ, class EG>
void ls_cross_entropy_backward_into(TensorView<const EQ> q, std::span<const std::int32_t> targets, double alpha,
                                    std::optional<std::int32_t> pad_id, TensorView<EG> dh, T scale = T(1),
                                    bool from_log = false) {
  kernels::check_smoothing(alpha);
  const std::size_t rows = q.rows(), v = q.cols();
  LSF_CHECK(targets.size() == rows, ErrorCode::ShapeMismatch, "one target per row required");
  LSF_CHECK(dh.shape() == q.shape(), ErrorCode::ShapeMismatch, "criterion gradient shape");
  const T uniform = T(alpha) / T(v);
  const T on_target = T(1) - T(alpha);
  parallel_for(rows, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      EG* out = dh.data() + r * v;
      if (kernels::is_pad(targets[r], pad_id)) {
        for (std::size_t j = 0; j < v; ++j) out[j] = store_as<EG>(T{});
        continue;
      }
      kernels::check_target(targets[r], v, r);
      const std::size_t k = static_cast<std::size_t>(targets[r]);
      const EQ* qr = q.data() + r * v;
      for (std::size_t j = 0; j < v; ++j) {
        const T qj = from_log ? std::exp(load_as<T>(qr[j])) : load_as<T>(qr[j]);
        const T g = j == k ? qj - uniform - on_target : qj - uniform;
        out[j] = store_as<EG>(g * scale);
      }
    }
  });
}

template <class T>
Tensor<T> ls_cross_entropy_backward(const Tensor<T>& probs, std::span<const std::int32_t> targets, double alpha,
                                    std::optional<std::int32_t> pad_id = std::nullopt) {
  Tensor<T> dh(probs.shape());
  ls_cross_entropy_backward_into<T, T, T>(probs.view(), targets, alpha, pad_id, dh.view());
  return dh;
}

}  // namespace lsf::grad
