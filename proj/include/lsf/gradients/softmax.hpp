#pragma once

#include "lsf/kernels/softmax.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/reduce.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::grad {

// dx_i = q_i * (dy_i - sum_j dy_j q_j). Masked entries have q = 0 and get 0.
// `out_scale` folds a constant factor (the attention 1/sqrt(d_head)) into the
// store.
template <class T, class EDY, class EQ, class EDX>
void softmax_backward_into(TensorView<const EDY> dy, TensorView<const EQ> probs, TensorView<EDX> dx,
                           T out_scale = T(1)) {
  LSF_CHECK(dy.shape() == probs.shape() && dx.shape() == probs.shape(), ErrorCode::ShapeMismatch,
            "softmax backward shapes " + dy.shape().str() + " / " + probs.shape().str());
  const std::size_t rows = probs.rows(), c = probs.cols();
  parallel_for(rows, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const EDY* g = dy.data() + r * c;
      const EQ* q = probs.data() + r * c;
      const T dot = tree_sum<T>(c, [&](std::size_t j) { return load_as<T>(g[j]) * load_as<T>(q[j]); });
      EDX* out = dx.data() + r * c;
      for (std::size_t j = 0; j < c; ++j)
        out[j] = store_as<EDX>(out_scale * (load_as<T>(q[j]) * (load_as<T>(g[j]) - dot)));
    }
  });
}

template <class T>
Tensor<T> softmax_backward(const Tensor<T>& dy, const kernels::SoftmaxCache<T>& cache) {
  Tensor<T> dx(dy.shape());
  softmax_backward_into<T, T, T, T>(dy.view(), cache.probs.view(), dx.view());
  return dx;
}

}  // namespace lsf::grad
