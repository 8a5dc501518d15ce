#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "lsf/error.hpp"

namespace lsf::model {

struct ModelConfig {
  std::size_t n_enc = 2;
  std::size_t n_dec = 2;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t vocab = 32;
  std::size_t max_len = 16;
  bool pre_ln = true;
  bool tie_embeddings = true;
  bool learned_positional = false;
  double embed_scale = 0.0;  // 0 selects sqrt(d_model)
  double ln_eps = 1e-5;
  std::int32_t pad_id = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  float scale() const {
    return static_cast<float>(embed_scale > 0.0 ? embed_scale : std::sqrt(static_cast<double>(d_model)));
  }

  void validate() const {
    LSF_CHECK(n_enc >= 1 && n_dec >= 1, ErrorCode::InvalidArgument, "need at least one encoder and decoder layer");
    LSF_CHECK(d_model >= 1 && n_heads >= 1 && d_ff >= 1, ErrorCode::InvalidArgument, "model dims must be >= 1");
    LSF_CHECK(d_model % n_heads == 0, ErrorCode::InvalidArgument,
              "d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
    LSF_CHECK(d_model >= 2, ErrorCode::InvalidArgument, "d_model must be >= 2 for layer norm");
    LSF_CHECK(vocab >= 2, ErrorCode::InvalidArgument, "vocab must be >= 2");
    LSF_CHECK(max_len >= 1, ErrorCode::InvalidArgument, "max_len must be >= 1");
    LSF_CHECK(pre_ln, ErrorCode::InvalidArgument, "only the pre-LayerNorm layout is implemented");
    LSF_CHECK(embed_scale >= 0.0, ErrorCode::InvalidArgument, "embed_scale must be >= 0");
    LSF_CHECK(ln_eps > 0.0, ErrorCode::InvalidArgument, "ln_eps must be > 0");
    LSF_CHECK(pad_id >= 0 && static_cast<std::size_t>(pad_id) < vocab, ErrorCode::InvalidArgument,
              "pad_id outside the vocabulary");
  }
};

// Per-step knobs that are not part of the architecture.
struct StepOptions {
  double p_drop = 0.0;
  double alpha = 0.0;      // label smoothing
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  double grad_scale = 1.0; // multiplies d(summed loss)/d(logits)
};

// Dropout site numbers; per-step seeds come from derive_seed(seed, step, site).
namespace site {
inline constexpr std::uint64_t kEncEmbed = 0;
inline constexpr std::uint64_t kDecEmbed = 1;
inline constexpr std::uint64_t enc(std::size_t layer, std::uint64_t k) { return 100 + 10 * layer + k; }
inline constexpr std::uint64_t dec(std::size_t layer, std::uint64_t k) { return 1000 + 10 * layer + k; }
inline constexpr std::uint64_t kEncAttn = 0, kEncRelu = 1, kEncFfn = 2;
inline constexpr std::uint64_t kDecSelf = 0, kDecCross = 1, kDecRelu = 2, kDecFfn = 3;
}  // namespace site

}  // namespace lsf::model
