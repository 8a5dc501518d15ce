#pragma once

// LayerNorm forward with single-pass statistics.
//
// The row mean and the mean of squares are accumulated together in one sweep,
// and sigma = sqrt(mean(x^2) - mean(x)^2 + eps). Parameters may be binary16;
// all arithmetic runs in the compute type T (binary32 at minimum).

#include <algorithm>
#include <cmath>

#include "lsf/error.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::kernels {

template <class T>
struct LNCache {
  Tensor<T> mu;     // [rows]
  Tensor<T> sigma;  // [rows], includes eps
};

inline constexpr double kDefaultLayerNormEps = 1e-5;

template <class T, class EX, class P, class EY>
void layernorm_forward_into(TensorView<const EX> x, TensorView<const P> w, TensorView<const P> b, double eps,
                            TensorView<EY> y, TensorView<T> mu, TensorView<T> sigma) {
  const std::size_t rows = x.rows(), m = x.cols();
  LSF_CHECK(m >= 2, ErrorCode::InvalidArgument, "layernorm needs at least 2 features");
  LSF_CHECK(eps >= 0.0, ErrorCode::InvalidArgument, "layernorm eps must be >= 0");
  LSF_CHECK(w.numel() == m && b.numel() == m, ErrorCode::ShapeMismatch, "layernorm affine params");
  LSF_CHECK(y.numel() == x.numel() && mu.numel() == rows && sigma.numel() == rows, ErrorCode::ShapeMismatch,
            "layernorm outputs");

  const T inv_m = T(1) / T(m);
  parallel_for(rows, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const EX* xr = x.data() + r * m;
      T sum{}, sum_sq{};
      for (std::size_t i = 0; i < m; ++i) {
        const T v = load_as<T>(xr[i]);
        sum += v;
        sum_sq += v * v;
      }
      const T mean = sum * inv_m;
      const T var = std::max(sum_sq * inv_m - mean * mean, T{});
      const T sd = std::sqrt(var + T(eps));
      LSF_CHECK(sd > T{}, ErrorCode::DegenerateRow, "zero variance row " + std::to_string(r) + " with eps = 0");
      mu[r] = mean;
      sigma[r] = sd;
      const T inv_sd = T(1) / sd;
      EY* yr = y.data() + r * m;
      for (std::size_t i = 0; i < m; ++i)
        yr[i] = store_as<EY>(load_as<T>(w[i]) * ((load_as<T>(xr[i]) - mean) * inv_sd) + load_as<T>(b[i]));
    }
  });
}

template <class T, class P>
std::pair<Tensor<T>, LNCache<T>> layernorm_forward(const Tensor<T>& x, const Tensor<P>& w, const Tensor<P>& b,
                                                   double eps = kDefaultLayerNormEps) {
  Tensor<T> y(x.shape());
  LNCache<T> cache{Tensor<T>(Shape{x.rows()}), Tensor<T>(Shape{x.rows()})};
  layernorm_forward_into<T, T, P, T>(x.view(), w.view(), b.view(), eps, y.view(), cache.mu.view(),
                                     cache.sigma.view());
  return {std::move(y), std::move(cache)};
}

}  // namespace lsf::kernels
