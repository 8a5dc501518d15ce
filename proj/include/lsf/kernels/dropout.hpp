#pragma once

#include <cstdint>

#include "lsf/error.hpp"
#include "lsf/numerics/rng.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::kernels {

// keep[i] == 1 iff rand_uniform(seed, i) >= p.
struct DropoutMask {
  Tensor<std::uint8_t> keep;
  double p = 0.0;
};

inline void check_drop_probability(double p) {
  LSF_CHECK(p >= 0.0 && p < 1.0, ErrorCode::InvalidArgument,
            "dropout probability must be in [0, 1), got " + std::to_string(p));
}

inline bool dropout_keep(std::uint64_t seed, std::size_t index, double p) {
  return p == 0.0 || rand_uniform(seed, index) >= p;
}

// Inverted-dropout scale 1/(1-p) in the compute type.
template <class T>
T dropout_scale(double p) {
  return T(1) / (T(1) - T(p));
}

inline DropoutMask make_dropout_mask(const Shape& shape, double p, std::uint64_t seed) {
  check_drop_probability(p);
  DropoutMask m{Tensor<std::uint8_t>(shape), p};
  for (std::size_t i = 0; i < m.keep.numel(); ++i) m.keep[i] = dropout_keep(seed, i, p) ? 1 : 0;
  return m;
}

}  // namespace lsf::kernels
