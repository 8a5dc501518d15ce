#pragma once

#include <cstdint>
#include <vector>

#include "lsf/kernels/dropout.hpp"
#include "lsf/kernels/elementwise.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::grad {

namespace detail {

template <class T, class EG>
void store_bias_grad(const std::vector<T>& sums, TensorView<EG> dbias, bool accumulate) {
  for (std::size_t j = 0; j < sums.size(); ++j)
    dbias[j] = store_as<EG>(accumulate ? load_as<T>(dbias[j]) + sums[j] : sums[j]);
}

}  // namespace detail

// dx = keep * dy / (1 - p); dbias = column sums of dx. The residual gradient
// is dy itself, so callers keep using their dy buffer for it.
template <class T, class EDY, class EDX, class EG>
void bias_dropout_residual_backward_into(TensorView<const EDY> dy, TensorView<const std::uint8_t> keep, double p,
                                         TensorView<EDX> dx, TensorView<EG> dbias, bool accumulate_bias) {
  const std::size_t rows = dy.rows(), c = dy.cols();
  LSF_CHECK(keep.numel() == dy.numel() && dx.numel() == dy.numel() && dbias.numel() == c,
            ErrorCode::ShapeMismatch, "bias_dropout_residual backward shapes");
  const T scale = kernels::dropout_scale<T>(p);
  const auto sums = parallel_reduce_rows<T>(rows, kRowGrain, c, [&](std::size_t b, std::size_t e,
                                                                    std::vector<T>& part) {
    for (std::size_t r = b; r < e; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t i = r * c + j;
        const T v = keep[i] ? load_as<T>(dy[i]) * scale : T{};
        dx[i] = store_as<EDX>(v);
        part[j] += v;
      }
  });
  detail::store_bias_grad(sums, dbias, accumulate_bias);
}

template <class T>
struct ResidualGrads {
  Tensor<T> dx, dbias, dresidual;
};

template <class T>
ResidualGrads<T> bias_dropout_residual_backward(const Tensor<T>& dy, const kernels::DropoutMask& mask) {
  ResidualGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>(Shape{dy.cols()}), dy};
  bias_dropout_residual_backward_into<T, T, T, T>(dy.view(), mask.keep.view(), mask.p, g.dx.view(),
                                                  g.dbias.view(), false);
  return g;
}

// dx = relu * keep * dy / (1 - p); dbias = column sums of dx.
template <class T, class EDY, class EDX, class EG>
void bias_relu_dropout_backward_into(TensorView<const EDY> dy, TensorView<const std::uint8_t> keep,
                                     TensorView<const std::uint8_t> relu, double p, TensorView<EDX> dx,
                                     TensorView<EG> dbias, bool accumulate_bias) {
  const std::size_t rows = dy.rows(), c = dy.cols();
  LSF_CHECK(keep.numel() == dy.numel() && relu.numel() == dy.numel() && dx.numel() == dy.numel() &&
                dbias.numel() == c,
            ErrorCode::ShapeMismatch, "bias_relu_dropout backward shapes");
  const T scale = kernels::dropout_scale<T>(p);
  const auto sums = parallel_reduce_rows<T>(rows, kRowGrain, c, [&](std::size_t b, std::size_t e,
                                                                    std::vector<T>& part) {
    for (std::size_t r = b; r < e; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t i = r * c + j;
        const T v = keep[i] && relu[i] ? load_as<T>(dy[i]) * scale : T{};
        dx[i] = store_as<EDX>(v);
        part[j] += v;
      }
  });
  detail::store_bias_grad(sums, dbias, accumulate_bias);
}

template <class T>
struct BiasGrads {
  Tensor<T> dx, dbias;
};

template <class T>
BiasGrads<T> bias_relu_dropout_backward(const Tensor<T>& dy, const kernels::ReluDropoutMasks& masks) {
  BiasGrads<T> g{Tensor<T>(dy.shape()), Tensor<T>(Shape{dy.cols()})};
  bias_relu_dropout_backward_into<T, T, T, T>(dy.view(), masks.dropout.keep.view(), masks.relu.view(),
                                              masks.dropout.p, g.dx.view(), g.dbias.view(), false);
  return g;
}

}  // namespace lsf::grad
