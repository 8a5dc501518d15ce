#pragma once

// Multi-head attention core on head-split tensors [B, N, L, dh].
//
// Projections produce row-major [B*L, width] activations; split_heads moves
// one d-wide column slice into head-split layout and adds the bias on the
// way. merge_heads is the inverse and optionally reduces the bias gradient.

#include <cmath>
#include <cstddef>
#include <optional>

#include "lsf/gradients/softmax.hpp"
#include "lsf/kernels/gemm.hpp"
#include "lsf/kernels/softmax.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::model {

struct HeadGeometry {
  std::size_t batch, len, heads, head_dim;

  std::size_t width() const { return heads * head_dim; }
  Shape split_shape() const { return Shape{batch, heads, len, head_dim}; }
  Shape merged_shape() const { return Shape{batch * len, width()}; }
};

// dst[b, h, t, :] = src[b*L + t, col0 + h*dh : ...] + bias[h*dh : ...]
template <class T, class ES, class P>
void split_heads(TensorView<const ES> src, std::size_t col0, const P* bias, const HeadGeometry& g,
                 TensorView<T> dst) {
  LSF_CHECK(src.rows() == g.batch * g.len && col0 + g.width() <= src.cols(), ErrorCode::ShapeMismatch,
            "split_heads source " + src.shape().str());
  LSF_CHECK(dst.numel() == g.batch * g.len * g.width(), ErrorCode::ShapeMismatch, "split_heads target");
  const std::size_t w = src.cols(), dh = g.head_dim;
  parallel_for(g.batch * g.len, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t b = r / g.len, t = r % g.len;
      const ES* in = src.data() + r * w + col0;
      for (std::size_t h = 0; h < g.heads; ++h) {
        T* out = dst.data() + ((b * g.heads + h) * g.len + t) * dh;
        for (std::size_t j = 0; j < dh; ++j) {
          const T v = load_as<T>(in[h * dh + j]);
          out[j] = bias ? v + load_as<T>(bias[h * dh + j]) : v;
        }
      }
    }
  });
}

// dst[b*L + t, col0 + h*dh + j] = src[b, h, t, j]; dbias (+)= column sums.
template <class T, class ED, class EG>
void merge_heads(TensorView<const T> src, const HeadGeometry& g, TensorView<ED> dst, std::size_t col0,
                 std::optional<TensorView<EG>> dbias = std::nullopt, bool accumulate_bias = true) {
  LSF_CHECK(dst.rows() == g.batch * g.len && col0 + g.width() <= dst.cols(), ErrorCode::ShapeMismatch,
            "merge_heads target " + dst.shape().str());
  LSF_CHECK(src.numel() == g.batch * g.len * g.width(), ErrorCode::ShapeMismatch, "merge_heads source");
  const std::size_t w = dst.cols(), dh = g.head_dim, d = g.width();
  auto body = [&](std::size_t begin, std::size_t end, std::vector<T>* part) {
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t b = r / g.len, t = r % g.len;
      ED* out = dst.data() + r * w + col0;
      for (std::size_t h = 0; h < g.heads; ++h) {
        const T* in = src.data() + ((b * g.heads + h) * g.len + t) * dh;
        for (std::size_t j = 0; j < dh; ++j) {
          out[h * dh + j] = store_as<ED>(in[j]);
          if (part) (*part)[h * dh + j] += in[j];
        }
      }
    }
  };
  if (!dbias) {
    parallel_for(g.batch * g.len, kRowGrain, [&](std::size_t b, std::size_t e) { body(b, e, nullptr); });
    return;
  }
  TensorView<EG> db = *dbias;
  LSF_CHECK(db.numel() == d, ErrorCode::ShapeMismatch, "merge_heads bias gradient");
  const auto sums = parallel_reduce_rows<T>(g.batch * g.len, kRowGrain, d,
                                            [&](std::size_t b, std::size_t e, std::vector<T>& p) { body(b, e, &p); });
  for (std::size_t j = 0; j < d; ++j)
    db[j] = store_as<EG>(accumulate_bias ? load_as<T>(db[j]) + sums[j] : sums[j]);
}

template <class T>
T attention_scale(std::size_t head_dim) {
  return T(1) / std::sqrt(T(head_dim));
}

namespace detail {

template <class E>
TensorView<E> head_slice(TensorView<E> t, std::size_t bh, std::size_t rows, std::size_t cols) {
  return TensorView<E>(t.data() + bh * rows * cols, Shape{rows, cols});
}

}  // namespace detail

// probs[b,h] = softmax(scale * Q[b,h] K[b,h]^T, mask); ctx[b,h] = probs[b,h] V[b,h].
// q: [B,N,Lq,dh], k/v: [B,N,Lk,dh], probs: [B,N,Lq,Lk], ctx: [B,N,Lq,dh].
template <class T>
void attention_forward(TensorView<const T> q, TensorView<const T> k, TensorView<const T> v, std::size_t batch,
                       std::size_t heads, std::size_t lq, std::size_t lk, std::size_t dh,
                       const kernels::AttentionMask& mask, TensorView<T> probs, TensorView<T> ctx) {
  const T scale = attention_scale<T>(dh);
  for (std::size_t bh = 0; bh < batch * heads; ++bh)
    gemm<T>(detail::head_slice(q, bh, lq, dh), false, detail::head_slice(k, bh, lk, dh), true,
            detail::head_slice(probs, bh, lq, lk), false, scale);
  TensorView<T> p4 = probs.reshaped(Shape{batch, heads, lq, lk});
  const auto strategy = kernels::select_softmax_strategy(batch * heads * lq, lk, false);
  kernels::softmax_forward_into<T, T, T>(TensorView<const T>(p4), mask, p4, strategy);
  for (std::size_t bh = 0; bh < batch * heads; ++bh)
    gemm<T>(detail::head_slice(TensorView<const T>(probs), bh, lq, lk), false, detail::head_slice(v, bh, lk, dh),
            false, detail::head_slice(ctx, bh, lq, dh), false);
}

// Given dctx, produces dq, dk, dv (overwritten) using `dprobs` as scratch
// of the probs shape.
template <class T>
void attention_backward(TensorView<const T> dctx, TensorView<const T> q, TensorView<const T> k,
                        TensorView<const T> v, TensorView<const T> probs, std::size_t batch, std::size_t heads,
                        std::size_t lq, std::size_t lk, std::size_t dh, TensorView<T> dprobs, TensorView<T> dq,
                        TensorView<T> dk, TensorView<T> dv) {
  const T scale = attention_scale<T>(dh);
  for (std::size_t bh = 0; bh < batch * heads; ++bh) {
    gemm<T>(detail::head_slice(probs, bh, lq, lk), true, detail::head_slice(dctx, bh, lq, dh), false,
            detail::head_slice(dv, bh, lk, dh), false);
    gemm<T>(detail::head_slice(dctx, bh, lq, dh), false, detail::head_slice(v, bh, lk, dh), true,
            detail::head_slice(dprobs, bh, lq, lk), false);
  }
  grad::softmax_backward_into<T, T, T, T>(TensorView<const T>(dprobs), probs, dprobs, scale);
  for (std::size_t bh = 0; bh < batch * heads; ++bh) {
    const TensorView<const T> ds = detail::head_slice(TensorView<const T>(dprobs), bh, lq, lk);
    gemm<T>(ds, false, detail::head_slice(k, bh, lk, dh), false, detail::head_slice(dq, bh, lq, dh), false);
    gemm<T>(ds, true, detail::head_slice(q, bh, lq, dh), false, detail::head_slice(dk, bh, lk, dh), false);
  }
}

}  // namespace lsf::model
