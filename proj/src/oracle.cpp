// SPDX-License-Identifier: Apache-2.0
// Reference convolution. Deliberately naive; keep it independent of engine.cpp.
#include "fmstream/oracle.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <limits>

namespace fmstream::oracle {

namespace {

const std::array<double, 65536>& value_table() {
  static const std::array<double, 65536> table = [] {
    std::array<double, 65536> t{};
    for (std::uint32_t b = 0; b < 65536; ++b) {
      const int sign = (b >> 15) & 1;
      const int e = (b >> 10) & 0x1F;
      const int m = b & 0x3FF;
      double v;
      if (e == 0x1F) {
        v = m ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
      } else if (e == 0) {
        v = std::ldexp(static_cast<double>(m), -24);
      } else {
        v = std::ldexp(1.0 + m / 1024.0, e - 15);
      }
      t[b] = sign ? -v : v;
    }
    return t;
  }();
  return table;
}

double hv(Half h) { return value_table()[h.bits]; }
Half hr(double v) { return Half{round_to_half(v)}; }

}  // namespace

double half_value(std::uint16_t bits) { return value_table()[bits]; }

std::uint16_t round_to_half(double v) {
  if (std::isnan(v)) return 0x7E00;
  const std::uint16_t sign = std::signbit(v) ? 0x8000 : 0;
  const double a = std::fabs(v);
  if (a >= 65520.0) return sign | 0x7C00;  // halfway to 2^16 and beyond
  // Round to the binary16 grid by adding and removing a power of two whose
  // double ulp equals the target ulp (the FPU does the tie-to-even).
  int e = static_cast<int>((std::bit_cast<std::uint64_t>(a) >> 52) & 0x7FF) - 1023;
  if (e < -14) e = -14;
  const double c = std::bit_cast<double>(static_cast<std::uint64_t>(e + 42 + 1023) << 52);
  const double t = a + c;
  const double r = t - c;
  if (r == 0.0) return sign;
  const std::uint64_t rb = std::bit_cast<std::uint64_t>(r);
  const int re = static_cast<int>((rb >> 52) & 0x7FF) - 1023;
  if (re < -14) return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(r * 0x1p24));
  return static_cast<std::uint16_t>(sign | ((re + 15) << 10) | ((rb >> 42) & 0x3FF));
}

int chunk_channels_for(std::uint64_t wbuf_bits, int kh, int kw, int tile_channels) {
  const std::uint64_t per_channel = static_cast<std::uint64_t>(kh) * kw * tile_channels;
  return static_cast<int>(std::min<std::uint64_t>(wbuf_bits / per_channel, 1u << 30));
}

std::uint64_t mac_count(const LayerDescriptor& L, Shape in) {
  const int ho = out_extent(in.h, L.kh, L.stride, L.pad);
  const int wo = out_extent(in.w, L.kw, L.stride, L.pad);
  const int cin_g = in.n / L.groups;
  std::uint64_t n = 0;
  for (int co = 0; co < L.n_out; ++co)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x)
        for (int dy = 0; dy < L.kh; ++dy)
          for (int dx = 0; dx < L.kw; ++dx)
            for (int ci = 0; ci < cin_g; ++ci) ++n;
  return n;
}

FeatureMap conv_reference(const FeatureMap& in, const LayerDescriptor& L, const LayerWeights& W,
                          const FeatureMap* bypass, Mode mode, int chunk_channels) {
  const int ho = out_extent(in.shape.h, L.kh, L.stride, L.pad);
  const int wo = out_extent(in.shape.w, L.kw, L.stride, L.pad);
  const int cin_g = in.shape.n / L.groups;
  const int cout_g = L.n_out / L.groups;
  const int chunk = chunk_channels > 0 ? chunk_channels : cin_g;
  const int ph = L.pad == Pad::Same ? L.kh / 2 : 0;
  const int pw = L.pad == Pad::Same ? L.kw / 2 : 0;
  FeatureMap out(Shape{L.n_out, ho, wo});

  auto pixel = [&](int c, int y, int x) -> Half {
    if (y < 0 || y >= in.shape.h || x < 0 || x >= in.shape.w) return Half{0};
    return in.at(c, y, x);
  };

  for (int co = 0; co < L.n_out; ++co) {
    const int base = (co / cout_g) * cin_g;
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        if (mode == Mode::Float64) {
          double acc = 0.0;
          for (int dy = 0; dy < L.kh; ++dy)
            for (int dx = 0; dx < L.kw; ++dx)
              for (int ci = 0; ci < cin_g; ++ci) {
                const double px = hv(pixel(base + ci, L.stride * y - ph + dy, L.stride * x - pw + dx));
                acc += W.kernel.positive(co, ci, dy, dx) ? px : -px;
              }
          if (L.scale) acc *= hv(W.scale[co]);
          if (bypass) acc += hv(bypass->at(co, y, x));
          if (L.bias) acc += hv(W.bias[co]);
          Half r = hr(acc);
          if (L.relu) r = (r.bits & 0x8000) ? Half{0} : r;
          out.at(co, y, x) = r;
          continue;
        }

        Half stored{0};
        for (int c0 = 0; c0 < cin_g; c0 += chunk) {
          const int c1 = std::min(cin_g, c0 + chunk);
          Half v{0};
          for (int dy = 0; dy < L.kh; ++dy)
            for (int dx = 0; dx < L.kw; ++dx)
              for (int ci = c0; ci < c1; ++ci) {
                const double px = hv(pixel(base + ci, L.stride * y - ph + dy, L.stride * x - pw + dx));
                v = hr(W.kernel.positive(co, ci, dy, dx) ? hv(v) + px : hv(v) - px);
              }
          if (L.scale) v = hr(hv(v) * hv(W.scale[co]));
          if (c0 == 0) {
            if (bypass) v = hr(hv(v) + hv(bypass->at(co, y, x)));
          } else {
            v = hr(hv(v) + hv(stored));
          }
          if (c1 == cin_g) {
            if (L.bias) v = hr(hv(v) + hv(W.bias[co]));
            if (L.relu) {
              if ((v.bits & 0x7C00) == 0x7C00 && (v.bits & 0x3FF)) {
                v = Half{0x7E00};
              } else if (v.bits & 0x8000) {
                v = Half{0};
              }
            }
          }
          stored = v;
        }
        out.at(co, y, x) = stored;
      }
    }
  }
  return out;
}

std::vector<FeatureMap> network_reference(const ResolvedNetwork& net, const NetworkWeights& weights,
                                          const FeatureMap& input, Mode mode, std::uint64_t wbuf_bits,
                                          int tile_channels) {
  std::vector<FeatureMap> fms;
  fms.push_back(input);
  for (int l = 0; l < net.layer_count(); ++l) {
    const LayerDescriptor& L = net.layer(l);
    const FeatureMap& in = fms[net.input_of(l) + 1];
    const FeatureMap* byp = L.bypass ? &fms[*L.bypass + 1] : nullptr;
    const int chunk = chunk_channels_for(wbuf_bits, L.kh, L.kw, tile_channels);
    fms.push_back(conv_reference(in, L, weights[l], byp, mode, chunk));
  }
  return fms;
}

}  // namespace fmstream::oracle
