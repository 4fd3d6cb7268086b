// SPDX-License-Identifier: Apache-2.0
#include "fmstream/binary16.hpp"

#include <bit>

namespace fmstream {

namespace {

// Shift right by s with round-to-nearest-even on the discarded bits.
std::uint64_t shift_rne(std::uint64_t m, unsigned s) {
  if (s == 0) return m;
  if (s >= 64) return 0;
  std::uint64_t q = m >> s;
  std::uint64_t rem = m & ((std::uint64_t{1} << s) - 1);
  std::uint64_t halfway = std::uint64_t{1} << (s - 1);
  if (rem > halfway || (rem == halfway && (q & 1))) ++q;
  return q;
}

}  // namespace

double to_double(Half h) {
  const std::uint32_t sign = h.bits >> 15;
  const std::uint32_t exp = (h.bits >> 10) & 0x1F;
  const std::uint32_t man = h.bits & 0x3FF;
  std::uint64_t out = static_cast<std::uint64_t>(sign) << 63;
  if (exp == 0x1F) {
    out |= 0x7FF0000000000000ull;
    if (man) out |= 0x0008000000000000ull | (static_cast<std::uint64_t>(man) << 42);
  } else if (exp != 0) {
    out |= static_cast<std::uint64_t>(exp + 1008) << 52;
    out |= static_cast<std::uint64_t>(man) << 42;
  } else if (man != 0) {
    // subnormal: man * 2^-24, normalize
    int e = 0;
    std::uint32_t m = man;
    while (!(m & 0x400)) {
      m <<= 1;
      --e;
    }
    m &= 0x3FF;
    out |= static_cast<std::uint64_t>(e + 1009) << 52;
    out |= static_cast<std::uint64_t>(m) << 42;
  }
  return std::bit_cast<double>(out);
}

float to_float(Half h) { return static_cast<float>(to_double(h)); }

Half to_half(double d) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
  const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 48) & 0x8000);
  const std::uint64_t abs = bits & 0x7FFFFFFFFFFFFFFFull;
  const unsigned exp = static_cast<unsigned>(abs >> 52);
  const std::uint64_t man = abs & 0x000FFFFFFFFFFFFFull;

  if (exp == 0x7FF) {
    if (man) return Half{kCanonicalNaN};
    return Half{static_cast<std::uint16_t>(sign | kPosInf)};
  }
  // 65520 = 65504 + half ulp rounds up to infinity
  if (abs >= 0x40EFFE0000000000ull) return Half{static_cast<std::uint16_t>(sign | kPosInf)};

  if (exp >= 1009) {
    std::uint64_t combined = (static_cast<std::uint64_t>(exp - 1008) << 52) | man;
    return Half{static_cast<std::uint16_t>(sign | shift_rne(combined, 42))};
  }
  if (exp == 0) return Half{sign};  // double subnormals are far below half range
  const std::uint64_t m = man | (std::uint64_t{1} << 52);
  const unsigned s = 1051 - exp;
  return Half{static_cast<std::uint16_t>(sign | shift_rne(m, s))};
}

Half to_half(float f) { return to_half(static_cast<double>(f)); }

Half binary_mac_step(Half v, Half x, bool positive) {
  // The sum of two binary16 values is exact in binary64.
  const double a = to_double(v);
  const double b = to_double(x);
  return to_half(positive ? a + b : a - b);
}

Half add(Half a, Half b) { return to_half(to_double(a) + to_double(b)); }

Half mul(Half a, Half b) { return to_half(to_double(a) * to_double(b)); }

Half relu(Half v) {
  if (is_nan(v)) return Half{kCanonicalNaN};
  if (v.bits & 0x8000) return Half{0};
  return v;
}

}  // namespace fmstream
