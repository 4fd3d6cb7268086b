// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <random>

#include "fmstream/binary16.hpp"
#include "fmstream/oracle.hpp"

using namespace fmstream;

TEST_CASE("every binary16 pattern decodes like the oracle") {
  for (std::uint32_t b = 0; b < 65536; ++b) {
    const Half h = half_bits(static_cast<std::uint16_t>(b));
    const double a = to_double(h), o = oracle::half_value(static_cast<std::uint16_t>(b));
    if (std::isnan(o)) {
      REQUIRE(std::isnan(a));
      REQUIRE(is_nan(h));
    } else {
      REQUIRE(std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(o));
      REQUIRE(static_cast<double>(to_float(h)) == o);
    }
  }
}

TEST_CASE("rounding matches the oracle on random doubles and ties") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> mant(1.0, 2.0);
  std::uniform_int_distribution<int> ex(-30, 17);
  for (int i = 0; i < 200000; ++i) {
    double v = std::ldexp(mant(rng), ex(rng));
    if (rng() & 1) v = -v;
    REQUIRE(to_half(v).bits == oracle::round_to_half(v));
  }
  // Exact midpoints between neighbouring halves.
  for (std::uint32_t b = 0; b < 0x7BFF; b += 7) {
    const double lo = oracle::half_value(static_cast<std::uint16_t>(b));
    const double hi = oracle::half_value(static_cast<std::uint16_t>(b + 1));
    const double mid = (lo + hi) / 2;
    REQUIRE(to_half(mid).bits == oracle::round_to_half(mid));
    REQUIRE(to_half(-mid).bits == oracle::round_to_half(-mid));
  }
}

TEST_CASE("frozen rounding examples") {
  CHECK(add(to_half(2048.0), to_half(1.0)).bits == to_half(2048.0).bits);  // tie to even
  CHECK(add(to_half(2048.0), to_half(3.0)).bits == to_half(2052.0).bits);
  CHECK(to_half(65504.0).bits == 0x7BFF);
  CHECK(to_half(65519.0).bits == 0x7BFF);
  CHECK(to_half(65520.0).bits == 0x7C00);
  CHECK(to_half(-65520.0).bits == 0xFC00);
  CHECK(to_half(std::ldexp(1.0, -24)).bits == 0x0001);
  CHECK(to_half(std::ldexp(1.0, -25)).bits == 0x0000);  // tie to even (zero)
  CHECK(to_half(std::ldexp(3.0, -26)).bits == 0x0001);
  CHECK(to_double(half_bits(0x0001)) == std::ldexp(1.0, -24));
  CHECK(to_double(half_bits(0x03FF)) == std::ldexp(1023.0, -24));
}

TEST_CASE("relu and the mac step") {
  CHECK(relu(half_bits(0x8000)).bits == 0x0000);
  CHECK(relu(to_half(-3.0)).bits == 0x0000);
  CHECK(relu(to_half(2.5)).bits == to_half(2.5).bits);
  CHECK(binary_mac_step(to_half(1.0), to_half(0.5), true).bits == to_half(1.5).bits);
  CHECK(binary_mac_step(to_half(1.0), to_half(0.5), false).bits == to_half(0.5).bits);
  // inf - inf is a NaN, canonicalised.
  const Half inf = half_bits(0x7C00);
  CHECK(is_nan(binary_mac_step(inf, inf, false)));
  CHECK(binary_mac_step(inf, inf, false).bits == 0x7E00);
}
