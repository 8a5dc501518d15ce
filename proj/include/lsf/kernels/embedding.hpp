#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "lsf/kernels/dropout.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::kernels {

struct EmbeddingConfig {
  float scale = 1.0f;
  std::size_t vocab = 2;
  std::size_t max_len = 1;
  bool learned_positional = false;

  void validate() const {
    LSF_CHECK(scale > 0.0f, ErrorCode::InvalidArgument, "embedding scale must be > 0");
    LSF_CHECK(vocab >= 2, ErrorCode::InvalidArgument, "vocab must be >= 2");
    LSF_CHECK(max_len >= 1, ErrorCode::InvalidArgument, "max_len must be >= 1");
  }
};

// Fixed sinusoidal table used when positions are not learned.
template <class T>
Tensor<T> sinusoidal_positions(std::size_t max_len, std::size_t dim) {
  Tensor<T> p(Shape{max_len, dim});
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double a = static_cast<double>(pos) * rate;
      p.at(pos, i) = store_as<T>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return p;
}

inline void check_tokens(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t len,
                         const EmbeddingConfig& cfg) {
  LSF_CHECK(tokens.size() == batch * len, ErrorCode::ShapeMismatch, "token count != batch * len");
  LSF_CHECK(len <= cfg.max_len, ErrorCode::SequenceTooLong,
            "sequence length " + std::to_string(len) + " > max_len " + std::to_string(cfg.max_len));
  for (std::size_t i = 0; i < tokens.size(); ++i)
    LSF_CHECK(tokens[i] >= 0 && static_cast<std::size_t>(tokens[i]) < cfg.vocab, ErrorCode::TokenOutOfRange,
              "token " + std::to_string(tokens[i]) + " at flat index " + std::to_string(i));
}

// y[b,i,:] = keep * (s * E[tok] + P[i]) / (1 - p), mask drawn per flat index.
template <class T, class P>
void embedding_forward_into(TensorView<const P> table, TensorView<const P> positions,
                            std::span<const std::int32_t> tokens, std::size_t batch, std::size_t len,
                            const EmbeddingConfig& cfg, double p_drop, std::uint64_t seed, TensorView<T> y,
                            TensorView<std::uint8_t> keep) {
  cfg.validate();
  check_drop_probability(p_drop);
  check_tokens(tokens, batch, len, cfg);
  const std::size_t d = table.cols();
  LSF_CHECK(table.rows() == cfg.vocab, ErrorCode::ShapeMismatch, "embedding table rows != vocab");
  LSF_CHECK(positions.cols() == d && positions.rows() >= len, ErrorCode::ShapeMismatch,
            "positional table " + positions.shape().str());
  LSF_CHECK(y.numel() == batch * len * d && keep.numel() == y.numel(), ErrorCode::ShapeMismatch,
            "embedding output " + y.shape().str());

  const T s = T(cfg.scale);
  const T scale = dropout_scale<T>(p_drop);
  parallel_for(batch * len, kRowGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t pos = r % len;
      const P* e = table.data() + static_cast<std::size_t>(tokens[r]) * d;
      const P* pe = positions.data() + pos * d;
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t idx = r * d + j;
        const bool k = dropout_keep(seed, idx, p_drop);
        keep[idx] = k ? 1 : 0;
        y[idx] = k ? (s * load_as<T>(e[j]) + load_as<T>(pe[j])) * scale : T{};
      }
    }
  });
}

template <class T, class P>
std::pair<Tensor<T>, DropoutMask> embedding_forward(const Tensor<P>& table, const Tensor<P>& positions,
                                                    std::span<const std::int32_t> tokens, std::size_t batch,
                                                    std::size_t len, const EmbeddingConfig& cfg,
                                                    double p_drop, std::uint64_t seed) {
  const Shape shape{batch, len, table.cols()};
  Tensor<T> y(shape);
  DropoutMask mask{Tensor<std::uint8_t>(shape), p_drop};
  embedding_forward_into<T, P>(table.view(), positions.view(), tokens, batch, len, cfg, p_drop, seed, y.view(),
                               mask.keep.view());
  return {std::move(y), std::move(mask)};
}

}  // namespace lsf::kernels
