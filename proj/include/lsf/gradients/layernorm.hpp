#pragma once

// LayerNorm backward in the rearranged form
//
//   dx_i = w_i dy_i / sigma + alpha_i * red1 + beta_i * red2
//   red1 = sum_j w_j dy_j,   red2 = sum_j w_j dy_j x_j
//   alpha_i = ((x_i - mu) mu - sigma^2) / (m sigma^3)
//   beta_i  = (mu - x_i) / (m sigma^3)
//
// The two row reductions are independent of each other and of i, so they are
// taken once per row and every element is then finished in parallel.
// sigma already contains eps, matching the forward pass.

#include <vector>

#include "lsf/kernels/layernorm.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::grad {

template <class T>
struct LNBackwardScratch {
  std::vector<T> red1;
  std::vector<T> red2;
};

template <class T, class EDY, class EX, class P, class EDX, class EG>
void layernorm_backward_into(TensorView<const EDY> dy, TensorView<const EX> x, TensorView<const P> w,
                             TensorView<const T> mu, TensorView<const T> sigma, TensorView<EDX> dx,
                             bool accumulate_dx, TensorView<EG> dw, TensorView<EG> db, bool accumulate_params,
                             LNBackwardScratch<T>* scratch = nullptr) {
  const std::size_t rows = x.rows(), m = x.cols();
  LSF_CHECK(dy.shape() == x.shape() && dx.numel() == x.numel(), ErrorCode::ShapeMismatch,
            "layernorm backward shapes");
  LSF_CHECK(w.numel() == m && dw.numel() == m && db.numel() == m, ErrorCode::ShapeMismatch,
            "layernorm parameter gradient shapes");
  LSF_CHECK(mu.numel() == rows && sigma.numel() == rows, ErrorCode::ShapeMismatch, "layernorm cache");
  if (scratch) {
    scratch->red1.assign(rows, T{});
    scratch->red2.assign(rows, T{});
  }

  const T inv_m = T(1) / T(m);
  parallel_for(rows, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const T mean = mu[r], sd = sigma[r];
      LSF_CHECK(sd > T{}, ErrorCode::DegenerateRow, "sigma <= 0 at row " + std::to_string(r));
      const EDY* g = dy.data() + r * m;
      const EX* xr = x.data() + r * m;
      T red1{}, red2{};
      for (std::size_t j = 0; j < m; ++j) {
        const T wg = load_as<T>(w[j]) * load_as<T>(g[j]);
        red1 += wg;
        red2 += wg * load_as<T>(xr[j]);
      }
      if (scratch) {
        scratch->red1[r] = red1;
        scratch->red2[r] = red2;
      }
      const T inv_sd = T(1) / sd;
      const T inv_m_sd3 = inv_m * inv_sd * inv_sd * inv_sd;
      EDX* out = dx.data() + r * m;
      for (std::size_t i = 0; i < m; ++i) {
        const T xi = load_as<T>(xr[i]);
        const T alpha = ((xi - mean) * mean - sd * sd) * inv_m_sd3;
        const T beta = (mean - xi) * inv_m_sd3;
        const T v = load_as<T>(w[i]) * load_as<T>(g[i]) * inv_sd + alpha * red1 + beta * red2;
        out[i] = store_as<EDX>(accumulate_dx ? load_as<T>(out[i]) + v : v);
      }
    }
  });

  // dw_i = sum over rows of dy_i * xhat_i, db_i = sum over rows of dy_i.
  const std::vector<T> sums = parallel_reduce_rows<T>(rows, kRowGrain, 2 * m, [&](std::size_t b, std::size_t e,
                                                                                  std::vector<T>& part) {
    for (std::size_t r = b; r < e; ++r) {
      const T inv_sd = T(1) / sigma[r];
      for (std::size_t i = 0; i < m; ++i) {
        const T g = load_as<T>(dy[r * m + i]);
        part[i] += g * ((load_as<T>(x[r * m + i]) - mu[r]) * inv_sd);
        part[m + i] += g;
      }
    }
  });
  for (std::size_t i = 0; i < m; ++i) {
    dw[i] = store_as<EG>(accumulate_params ? load_as<T>(dw[i]) + sums[i] : sums[i]);
    db[i] = store_as<EG>(accumulate_params ? load_as<T>(db[i]) + sums[m + i] : sums[m + i]);
  }
}

template <class T>
struct LNGrads {
  Tensor<T> dx, dw, db;
};

template <class T, class P>
LNGrads<T> layernorm_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<P>& w,
                              const kernels::LNCache<T>& cache, LNBackwardScratch<T>* scratch = nullptr) {
  const std::size_t m = x.cols();
  LNGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(Shape{m}), Tensor<T>(Shape{m})};
  layernorm_backward_into<T, T, T, P, T, T>(dy.view(), x.view(), w.view(), cache.mu.view(), cache.sigma.view(),
                                            g.dx.view(), false, g.dw.view(), g.db.view(), false, scratch);
  return g;
}

}  // namespace lsf::grad
