#pragma once

// IEEE 754 binary16 storage type with bit-exact conversions.
//
// Narrowing rounds to nearest, ties to even. Magnitudes at or beyond the
// halfway point above 65504 become signed infinity; NaN stays NaN.

#include <bit>
#include <cstdint>
#include <type_traits>

namespace lsf {

struct Half {
  std::uint16_t bits = 0;

  static constexpr Half from_bits(std::uint16_t b) { return Half{b}; }
  friend constexpr bool operator==(Half, Half) = default;
};

constexpr Half float_to_half(float value) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  const auto sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t mag = x & 0x7FFFFFFFu;

  if (mag >= 0x7F800000u) {
    if (mag == 0x7F800000u) return Half{static_cast<std::uint16_t>(sign | 0x7C00u)};
    return Half{static_cast<std::uint16_t>(sign | 0x7E00u | ((mag >> 13) & 0x3FFu))};
  }
  // 65520 is the midpoint between 65504 and 2^16; ties-to-even sends it up.
  if (mag >= 0x477FF000u) return Half{static_cast<std::uint16_t>(sign | 0x7C00u)};

  if (mag < 0x38800000u) {
    // Result is subnormal (or zero): units of 2^-24.
    if (mag <= 0x33000000u) return Half{sign};
    const std::uint32_t exp = mag >> 23;
    const std::uint32_t mant = (mag & 0x7FFFFFu) | 0x800000u;
    const std::uint32_t shift = 126u - exp;
    std::uint32_t h = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t half_ulp = 1u << (shift - 1u);
    if (rem > half_ulp || (rem == half_ulp && (h & 1u))) ++h;
    return Half{static_cast<std::uint16_t>(sign | h)};
  }

  std::uint32_t h = (mag - 0x38000000u) >> 13;
  const std::uint32_t rem = mag & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return Half{static_cast<std::uint16_t>(sign | h)};
}

constexpr float half_to_float(Half h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h.bits & 0x8000u) << 16;
  const std::uint32_t exp = (h.bits >> 10) & 0x1Fu;
  std::uint32_t mant = h.bits & 0x3FFu;

  if (exp == 0x1Fu) return std::bit_cast<float>(sign | 0x7F800000u | (mant << 13));
  if (exp != 0) return std::bit_cast<float>(sign | ((exp + 112u) << 23) | (mant << 13));
  if (mant == 0) return std::bit_cast<float>(sign);

  // Subnormal: renormalize into a binary32 normal.
  std::uint32_t e = 113;
  while ((mant & 0x400u) == 0) {
    mant <<= 1;
    --e;
  }
  mant &= 0x3FFu;
  return std::bit_cast<float>(sign | (e << 23) | (mant << 13));
}

// Uniform element access for kernels templated on storage type.
template <class T, class E>
constexpr T load_as(E v) {
  if constexpr (std::is_same_v<E, Half>) {
    return static_cast<T>(half_to_float(v));
  } else {
    return static_cast<T>(v);
  }
}

template <class E, class T>
constexpr E store_as(T v) {
  if constexpr (std::is_same_v<E, Half>) {
    return float_to_half(static_cast<float>(v));
  } else {
    return static_cast<E>(v);
  }
}

}  // namespace lsf
