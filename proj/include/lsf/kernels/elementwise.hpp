#pragma once

// Fused element-wise tails. Each op is a single traversal with no
// intermediate tensor; the dropout mask is drawn from the counter RNG at the
// element's flat index.

#include <cstdint>

#include "lsf/kernels/dropout.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::kernels {

// y = keep * (x + bias) / (1 - p) + residual
template <class T, class EX, class P, class ER, class EY>
void bias_dropout_residual_into(TensorView<const EX> x, TensorView<const P> bias, TensorView<const ER> residual,
                                double p, std::uint64_t seed, TensorView<EY> y, TensorView<std::uint8_t> keep) {
  check_drop_probability(p);
  const std::size_t rows = x.rows(), c = x.cols();
  LSF_CHECK(bias.numel() == c, ErrorCode::ShapeMismatch, "bias length != last dim of " + x.shape().str());
  LSF_CHECK(residual.numel() == x.numel() && y.numel() == x.numel() && keep.numel() == x.numel(),
            ErrorCode::ShapeMismatch, "bias_dropout_residual operand shapes");
  const T scale = dropout_scale<T>(p);
  parallel_for(rows, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t i = r * c + j;
        const bool k = dropout_keep(seed, i, p);
        keep[i] = k ? 1 : 0;
        const T v = k ? (load_as<T>(x[i]) + load_as<T>(bias[j])) * scale : T{};
        y[i] = store_as<EY>(v + load_as<T>(residual[i]));
      }
    }
  });
}

template <class T, class P>
std::pair<Tensor<T>, DropoutMask> bias_dropout_residual(const Tensor<T>& x, const Tensor<P>& bias,
                                                        const Tensor<T>& residual, double p, std::uint64_t seed) {
  Tensor<T> y(x.shape());
  DropoutMask mask{Tensor<std::uint8_t>(x.shape()), p};
  bias_dropout_residual_into<T, T, P, T, T>(x.view(), bias.view(), residual.view(), p, seed, y.view(),
                                            mask.keep.view());
  return {std::move(y), std::move(mask)};
}

// y = keep * max(x + bias, 0) / (1 - p); relu[i] = (x + bias > 0)
template <class T, class EX, class P, class EY>
void bias_relu_dropout_into(TensorView<const EX> x, TensorView<const P> bias, double p, std::uint64_t seed,
                            TensorView<EY> y, TensorView<std::uint8_t> keep, TensorView<std::uint8_t> relu) {
  check_drop_probability(p);
  const std::size_t rows = x.rows(), c = x.cols();
  LSF_CHECK(bias.numel() == c, ErrorCode::ShapeMismatch, "bias length != last dim of " + x.shape().str());
  LSF_CHECK(y.numel() == x.numel() && keep.numel() == x.numel() && relu.numel() == x.numel(),
            ErrorCode::ShapeMismatch, "bias_relu_dropout operand shapes");
  const T scale = dropout_scale<T>(p);
  parallel_for(rows, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t i = r * c + j;
        const T pre = load_as<T>(x[i]) + load_as<T>(bias[j]);
        const bool pos = pre > T{};
        const bool k = dropout_keep(seed, i, p);
        relu[i] = pos ? 1 : 0;
        keep[i] = k ? 1 : 0;
        y[i] = store_as<EY>(pos && k ? pre * scale : T{});
      }
    }
  });
}

struct ReluDropoutMasks {
  DropoutMask dropout;
  Tensor<std::uint8_t> relu;
};

template <class T, class P>
std::pair<Tensor<T>, ReluDropoutMasks> bias_relu_dropout(const Tensor<T>& x, const Tensor<P>& bias, double p,
                                                         std::uint64_t seed) {
  Tensor<T> y(x.shape());
  ReluDropoutMasks masks{{Tensor<std::uint8_t>(x.shape()), p}, Tensor<std::uint8_t>(x.shape())};
  bias_relu_dropout_into<T, T, P, T>(x.view(), bias.view(), p, seed, y.view(), masks.dropout.keep.view(),
                                     masks.relu.view());
  return {std::move(y), std::move(masks)};
}

}  // namespace lsf::kernels
