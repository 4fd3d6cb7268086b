// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace fmstream {

// IEEE 754 binary16 bit pattern. Arithmetic helpers round to nearest even.
struct Half {
  std::uint16_t bits = 0;

  constexpr bool operator==(const Half&) const = default;
};

inline constexpr std::uint16_t kCanonicalNaN = 0x7E00;
inline constexpr std::uint16_t kPosInf = 0x7C00;
inline constexpr std::uint16_t kNegInf = 0xFC00;

constexpr Half half_bits(std::uint16_t b) { return Half{b}; }

constexpr bool is_nan(Half h) { return (h.bits & 0x7C00) == 0x7C00 && (h.bits & 0x03FF) != 0; }
constexpr bool is_inf(Half h) { return (h.bits & 0x7FFF) == 0x7C00; }
constexpr bool is_finite(Half h) { return (h.bits & 0x7C00) != 0x7C00; }
constexpr Half negate(Half h) { return Half{static_cast<std::uint16_t>(h.bits ^ 0x8000)}; }

// Exact widening.
float to_float(Half h);
double to_double(Half h);

// Single rounding from the wider format. NaN becomes kCanonicalNaN.
Half to_half(float f);
Half to_half(double d);

// v + x if positive, v - x otherwise, rounded once.
Half binary_mac_step(Half v, Half x, bool positive);

Half add(Half a, Half b);
Half mul(Half a, Half b);

// max(v, 0) with -0 mapped to +0. NaN passes through canonicalized.
Half relu(Half v);

}  // namespace fmstream
