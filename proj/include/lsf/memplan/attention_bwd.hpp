#pragma once

// Canonical temporary-tensor table of one self-attention backward pass.
//
// Step  computes                      reads
//   0   grad_attn_out  (BHL)          upstream gradient, dropout mask
//   1   grad_ctx       (BHL)          grad_attn_out, W_out
//   2   grad_v         (BHL)          grad_ctx, probs
//   3   grad_probs     (BL^2N)        grad_ctx, V
//   4   (softmax backward in place on grad_probs)
//   5   grad_q         (BHL)          grad_probs, K
//   6   grad_k         (BHL)          grad_probs, Q
//   7   grad_qkv       (3BHL)         grad_q, grad_k, grad_v
//   8   grad_input     (BHL)          grad_qkv, W_qkv
//
// Every tensor starts at a distinct step, so first-fit yields the same
// columns for any shape: three columns only ever hold BHL-sized tensors and
// one column alternates between grad_probs and grad_qkv.

#include <algorithm>
#include <cstddef>
#include <vector>

#include "lsf/error.hpp"
#include "lsf/memplan/planner.hpp"

namespace lsf::memplan {

struct PlanShape {
  std::size_t batch = 1;   // B
  std::size_t hidden = 1;  // H
  std::size_t length = 1;  // L
  std::size_t heads = 1;   // N

  void validate() const {
    LSF_CHECK(batch >= 1 && hidden >= 1 && length >= 1 && heads >= 1, ErrorCode::InvalidArgument,
              "plan shape dims must be >= 1");
  }
  std::size_t bhl() const { return batch * hidden * length; }
  std::size_t bl2n() const { return batch * length * length * heads; }
};

inline std::vector<Lifetime> attention_backward_lifetimes(const PlanShape& s) {
  s.validate();
  const std::size_t bhl = s.bhl(), bl2n = s.bl2n();
  return {
      {0, bhl, 0, 1, "grad_attn_out"},
      {1, bhl, 1, 3, "grad_ctx"},
      {2, bhl, 2, 7, "grad_v"},
      {3, bl2n, 3, 6, "grad_probs"},
      {4, bhl, 5, 7, "grad_q"},
      {5, bhl, 6, 7, "grad_k"},
      {6, 3 * bhl, 7, 8, "grad_qkv"},
      {7, bhl, 8, 9, "grad_input"},
  };
}

// Closed forms for the table above.
inline std::size_t attention_backward_shared_peak(const PlanShape& s) {
  return 3 * s.bhl() + std::max(3 * s.bhl(), s.bl2n());
}

inline std::size_t attention_backward_naive_peak(const PlanShape& s) { return 9 * s.bhl() + s.bl2n(); }

}  // namespace lsf::memplan
