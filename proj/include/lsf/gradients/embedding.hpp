#pragma once

// Embedding backward: scatter-add of masked output gradients into the token
// table. Positions are grouped by token id and each row of dE is summed in
// ascending position order, so the float addition order is fixed regardless
// of how token rows are spread over workers.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "lsf/kernels/dropout.hpp"
#include "lsf/kernels/embedding.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::grad {

using kernels::DropoutMask;
using kernels::EmbeddingConfig;

// dE[w] (+)= s * sum over positions with token w of keep * dY / (1 - p).
// dP[i] (+)= sum over batch of keep * dY[b, i] / (1 - p), when dpos is given.
template <class T, class EDY, class EG>
void embedding_backward_into(TensorView<const EDY> dy, std::span<const std::int32_t> tokens, std::size_t batch,
                             std::size_t len, TensorView<const std::uint8_t> keep, double p,
                             const EmbeddingConfig& cfg, TensorView<EG> dtable, bool accumulate,
                             std::optional<TensorView<EG>> dpos = std::nullopt) {
  const std::size_t d = dy.cols();
  LSF_CHECK(dy.numel() == batch * len * d && keep.numel() == dy.numel(), ErrorCode::ShapeMismatch,
            "embedding backward dY " + dy.shape().str());
  LSF_CHECK(dtable.rows() == cfg.vocab && dtable.cols() == d, ErrorCode::ShapeMismatch,
            "embedding gradient table " + dtable.shape().str());
  kernels::check_tokens(tokens, batch, len, cfg);

  std::vector<std::vector<std::size_t>> rows_of(cfg.vocab);
  for (std::size_t r = 0; r < tokens.size(); ++r) rows_of[static_cast<std::size_t>(tokens[r])].push_back(r);

  const T scale = kernels::dropout_scale<T>(p);
  const T s = T(cfg.scale);
  parallel_for(cfg.vocab, kRowGrain, [&](std::size_t begin, std::size_t end) {
    std::vector<T> acc(d);
    for (std::size_t w = begin; w < end; ++w) {
      EG* out = dtable.data() + w * d;
      if (rows_of[w].empty()) {
        if (!accumulate)
          for (std::size_t j = 0; j < d; ++j) out[j] = store_as<EG>(T{});
        continue;
      }
      std::fill(acc.begin(), acc.end(), T{});
      for (std::size_t r : rows_of[w])
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t i = r * d + j;
          if (keep[i]) acc[j] += load_as<T>(dy[i]) * scale;
        }
      for (std::size_t j = 0; j < d; ++j)
        out[j] = store_as<EG>(accumulate ? load_as<T>(out[j]) + s * acc[j] : s * acc[j]);
    }
  });

  if (!dpos) return;
  TensorView<EG> dp = *dpos;
  LSF_CHECK(dp.cols() == d && dp.rows() >= len, ErrorCode::ShapeMismatch, "positional gradient table");
  parallel_for(dp.rows(), kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t pos = begin; pos < end; ++pos) {
      EG* out = dp.data() + pos * d;
      for (std::size_t j = 0; j < d; ++j) {
        T acc{};
        if (pos < len)
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t i = (b * len + pos) * d + j;
            if (keep[i]) acc += load_as<T>(dy[i]) * scale;
          }
        out[j] = store_as<EG>(accumulate ? load_as<T>(out[j]) + acc : acc);
      }
    }
  });
}

template <class T>
struct EmbeddingGrads {
  Tensor<T> dtable;
  std::optional<Tensor<T>> dpos;
};

template <class T>
EmbeddingGrads<T> embedding_backward(const Tensor<T>& dy, std::span<const std::int32_t> tokens, std::size_t batch,
                                     std::size_t len, const DropoutMask& mask, const EmbeddingConfig& cfg) {
  const std::size_t d = dy.cols();
  EmbeddingGrads<T> g{Tensor<T>(Shape{cfg.vocab, d}), std::nullopt};
  std::optional<TensorView<T>> dpos;
  if (cfg.learned_positional) {
    g.dpos.emplace(Shape{cfg.max_len, d});
    dpos = g.dpos->view();
  }
  embedding_backward_into<T, T, T>(dy.view(), tokens, batch, len, mask.keep.view(), mask.p, cfg, g.dtable.view(),
                                   false, dpos);
  return g;
}

}  // namespace lsf::grad
