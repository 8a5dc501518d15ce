#pragma once

// Plain GEMM backend: C = alpha * op(A) * op(B) (+ C).
//
// op(B) is packed once into a compute-type panel (converting binary16 weights
// on the fly), then each output row accumulates over k in ascending order.
// Rows are distributed over the pool; the per-element summation order never
// changes, so results are independent of the thread count.

#include <cstddef>
#include <vector>

#include "lsf/error.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf {

struct GemmShape {
  std::size_t m, n, k;
};

template <class EA, class EB>
GemmShape gemm_shape(const TensorView<const EA>& a, bool trans_a, const TensorView<const EB>& b,
                     bool trans_b) {
  const std::size_t a_rows = a.rows(), a_cols = a.cols();
  const std::size_t b_rows = b.rows(), b_cols = b.cols();
  const std::size_t m = trans_a ? a_cols : a_rows;
  const std::size_t ka = trans_a ? a_rows : a_cols;
  const std::size_t kb = trans_b ? b_cols : b_rows;
  const std::size_t n = trans_b ? b_rows : b_cols;
  LSF_CHECK(ka == kb, ErrorCode::ShapeMismatch,
            "gemm inner dims " + a.shape().str() + (trans_a ? "^T" : "") + " x " + b.shape().str() +
                (trans_b ? "^T" : ""));
  return {m, n, ka};
}

template <class T, class EA, class EB, class EC>
void gemm(TensorView<const EA> a, bool trans_a, TensorView<const EB> b, bool trans_b, TensorView<EC> c,
          bool accumulate = false, T alpha = T(1)) {
  const GemmShape s = gemm_shape(a, trans_a, b, trans_b);
  LSF_CHECK(c.rows() == s.m && c.cols() == s.n, ErrorCode::ShapeMismatch,
            "gemm output " + c.shape().str() + " expected [" + std::to_string(s.m) + "x" +
                std::to_string(s.n) + "]");

  const std::size_t a_cols = a.cols(), b_cols = b.cols();
  std::vector<T> panel(s.k * s.n);
  for (std::size_t kk = 0; kk < s.k; ++kk)
    for (std::size_t j = 0; j < s.n; ++j)
      panel[kk * s.n + j] = load_as<T>(trans_b ? b[j * b_cols + kk] : b[kk * b_cols + j]);

  parallel_for(s.m, kRowGrain, [&](std::size_t begin, std::size_t end) {
    std::vector<T> acc(s.n);
    for (std::size_t i = begin; i < end; ++i) {
      std::fill(acc.begin(), acc.end(), T{});
      for (std::size_t kk = 0; kk < s.k; ++kk) {
        const T av = load_as<T>(trans_a ? a[kk * a_cols + i] : a[i * a_cols + kk]);
        const T* prow = panel.data() + kk * s.n;
        for (std::size_t j = 0; j < s.n; ++j) acc[j] += av * prow[j];
      }
      EC* crow = c.data() + i * s.n;
      for (std::size_t j = 0; j < s.n; ++j) {
        const T v = alpha * acc[j];
        crow[j] = store_as<EC>(accumulate ? load_as<T>(crow[j]) + v : v);
      }
    }
  });
}

// Value-returning form.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false,
                 const Tensor<T>* accumulate_into = nullptr) {
  const GemmShape s = gemm_shape(a.view(), trans_a, b.view(), trans_b);
  Tensor<T> c(Shape{s.m, s.n});
  if (accumulate_into) {
    LSF_CHECK(accumulate_into->rows() == s.m && accumulate_into->cols() == s.n, ErrorCode::ShapeMismatch,
              "accumulator shape " + accumulate_into->shape().str());
    c.storage() = accumulate_into->storage();
  }
  gemm<T>(a.view(), trans_a, b.view(), trans_b, c.view(), accumulate_into != nullptr);
  return c;
}

}  // namespace lsf
