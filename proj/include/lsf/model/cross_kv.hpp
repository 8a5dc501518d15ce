#pragma once

// Layer-batched cross-attention keys and values.
//
// All decoder layers' key and value projections are stacked into one
// [2 n d, d] matrix: rows [i d, (i+1) d) are layer i's keys and rows
// [(n+i) d, (n+i+1) d) its values. The encoder output is projected once;
// during backward each decoder layer deposits its dK, dV and the encoder
// output gradient is formed by one GEMM once every layer has reported.

#include <cstddef>
#include <vector>

#include "lsf/kernels/gemm.hpp"
#include "lsf/model/attention.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::model {

template <class T>
struct PackedCrossWeights {
  Tensor<T> w;  // [2 n d, d]
  Tensor<T> b;  // [2 n d]
  std::size_t layers = 0;
};

template <class T>
PackedCrossWeights<T> pack_cross_weights(const std::vector<Tensor<T>>& keys, const std::vector<Tensor<T>>& values,
                                         const std::vector<Tensor<T>>& key_bias,
                                         const std::vector<Tensor<T>>& value_bias) {
  const std::size_t n = keys.size();
  LSF_CHECK(n >= 1, ErrorCode::ShapeMismatch, "need at least one layer");
  LSF_CHECK(values.size() == n && key_bias.size() == n && value_bias.size() == n, ErrorCode::ShapeMismatch,
            "per-layer key/value lists differ in length");
  const std::size_t d = keys[0].cols();
  for (std::size_t i = 0; i < n; ++i) {
    LSF_CHECK(keys[i].shape() == (Shape{d, d}) && values[i].shape() == (Shape{d, d}), ErrorCode::ShapeMismatch,
              "layer " + std::to_string(i) + " projection is not [d x d]");
    LSF_CHECK(key_bias[i].numel() == d && value_bias[i].numel() == d, ErrorCode::ShapeMismatch,
              "layer " + std::to_string(i) + " bias length");
  }
  PackedCrossWeights<T> pw{Tensor<T>(Shape{2 * n * d, d}), Tensor<T>(Shape{2 * n * d}), n};
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(keys[i].storage().begin(), keys[i].storage().end(), pw.w.data() + i * d * d);
    std::copy(values[i].storage().begin(), values[i].storage().end(), pw.w.data() + (n + i) * d * d);
    std::copy(key_bias[i].storage().begin(), key_bias[i].storage().end(), pw.b.data() + i * d);
    std::copy(value_bias[i].storage().begin(), value_bias[i].storage().end(), pw.b.data() + (n + i) * d);
  }
  return pw;
}

template <class T>
struct UnpackedCrossWeights {
  std::vector<Tensor<T>> keys, values, key_bias, value_bias;
};

template <class T>
UnpackedCrossWeights<T> unpack_cross_weights(const PackedCrossWeights<T>& pw) {
  const std::size_t n = pw.layers, d = pw.w.cols();
  LSF_CHECK(n >= 1 && pw.w.rows() == 2 * n * d && pw.b.numel() == 2 * n * d, ErrorCode::ShapeMismatch,
            "packed weights " + pw.w.shape().str());
  UnpackedCrossWeights<T> u;
  auto slice = [&](const Tensor<T>& src, std::size_t off, Shape s) {
    Tensor<T> t(s);
    std::copy(src.data() + off, src.data() + off + s.numel(), t.data());
    return t;
  };
  for (std::size_t i = 0; i < n; ++i) {
    u.keys.push_back(slice(pw.w, i * d * d, Shape{d, d}));
    u.values.push_back(slice(pw.w, (n + i) * d * d, Shape{d, d}));
    u.key_bias.push_back(slice(pw.b, i * d, Shape{d}));
    u.value_bias.push_back(slice(pw.b, (n + i) * d, Shape{d}));
  }
  return u;
}

// kv[B*L, 2 n d] = x W^T (no bias; bias is added when splitting per layer).
template <class T, class EX, class P>
void packed_kv_project(TensorView<const EX> x, TensorView<const P> w, TensorView<T> kv) {
  gemm<T>(x, false, w, true, kv);
}

// Layer i's K and V, bias added, head-split.
template <class T, class P>
void packed_kv_split(TensorView<const T> kv, TensorView<const P> bias, std::size_t layer, std::size_t layers,
                     const HeadGeometry& g, TensorView<T> k, TensorView<T> v) {
  const std::size_t d = g.width();
  LSF_CHECK(kv.cols() == 2 * layers * d && bias.numel() == kv.cols() && layer < layers, ErrorCode::ShapeMismatch,
            "packed kv " + kv.shape().str());
  split_heads<T>(kv, layer * d, bias.data() + layer * d, g, k);
  split_heads<T>(kv, (layers + layer) * d, bias.data() + (layers + layer) * d, g, v);
}

// Collects per-layer dK, dV into the packed gradient layout.
template <class T>
class PackedKvGradients {
 public:
  PackedKvGradients(TensorView<T> dkv, std::size_t layers, const HeadGeometry& g)
      : dkv_(dkv), layers_(layers), g_(g), deposited_(layers, false) {
    LSF_CHECK(dkv.rows() == g.batch * g.len && dkv.cols() == 2 * layers * g.width(), ErrorCode::ShapeMismatch,
              "packed kv gradient " + dkv.shape().str());
  }

  void deposit(std::size_t layer, TensorView<const T> dk, TensorView<const T> dv) {
    LSF_CHECK(layer < layers_, ErrorCode::InvalidArgument, "no decoder layer " + std::to_string(layer));
    LSF_CHECK(!deposited_[layer], ErrorCode::InvalidArgument,
              "layer " + std::to_string(layer) + " deposited twice");
    const std::size_t d = g_.width();
    merge_heads<T, T, T>(dk, g_, dkv_, layer * d);
    merge_heads<T, T, T>(dv, g_, dkv_, (layers_ + layer) * d);
    deposited_[layer] = true;
  }

  bool complete() const {
    for (bool b : deposited_)
      if (!b) return false;
    return true;
  }

  void require_complete() const {
    for (std::size_t i = 0; i < layers_; ++i)
      LSF_CHECK(deposited_[i], ErrorCode::IncompleteGradientSet,
                "decoder layer " + std::to_string(i) + " has not deposited its key/value gradient");
  }

  TensorView<T> packed() const { return dkv_; }

 private:
  TensorView<T> dkv_;
  std::size_t layers_;
  HeadGeometry g_;
  std::vector<bool> deposited_;
};

// dx (+)= dKV W; dW += dKV^T x; db += column sums of dKV.
template <class T, class EX, class P, class EG, class EDX>
void packed_kv_backward(const PackedKvGradients<T>& acc, TensorView<const EX> x, TensorView<const P> w,
                        TensorView<EDX> dx, bool accumulate_dx, TensorView<EG> dw, TensorView<EG> db) {
  acc.require_complete();
  const TensorView<const T> dkv = acc.packed();
  gemm<T>(dkv, false, w, false, dx, accumulate_dx);
  gemm<T>(dkv, true, x, false, dw, true);
  const std::size_t c = dkv.cols();
  LSF_CHECK(db.numel() == c, ErrorCode::ShapeMismatch, "packed kv bias gradient");
  const auto sums = parallel_reduce_rows<T>(dkv.rows(), kRowGrain, c,
                                            [&](std::size_t b, std::size_t e, std::vector<T>& part) {
                                              for (std::size_t r = b; r < e; ++r)
                                                for (std::size_t j = 0; j < c; ++j) part[j] += dkv[r * c + j];
                                            });
  for (std::size_t j = 0; j < c; ++j) db[j] = store_as<EG>(load_as<T>(db[j]) + sums[j]);
}

}  // namespace lsf::model
