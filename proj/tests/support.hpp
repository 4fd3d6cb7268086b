// SPDX-License-Identifier: Apache-2.0
// Random cases shared by the unit tests and the acceptance binary.
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "fmstream/network.hpp"

namespace fmstream::testing {

inline int pick(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline bool coin(std::mt19937_64& rng, double p = 0.5) { return std::bernoulli_distribution(p)(rng); }

// Mostly uniform values with a sprinkling of zeros, subnormals and values
// large enough to overflow after accumulation.
inline FeatureMap random_values(Shape s, std::mt19937_64& rng, bool extremes) {
  FeatureMap fm(s);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : fm.data) {
    const int k = extremes ? pick(rng, 0, 99) : 99;
    if (k == 0)
      v = half_bits(0);
    else if (k == 1)
      v = half_bits(0x8000);
    else if (k == 2)
      v = half_bits(static_cast<std::uint16_t>(pick(rng, 1, 0x3FF) | (coin(rng) ? 0x8000 : 0)));
    else if (k == 3)
      v = to_half(u(rng) * 60000.0);
    else
      v = to_half(u(rng));
  }
  return fm;
}

inline LayerWeights random_layer_weights(const LayerDescriptor& L, int n_in_per_group, std::mt19937_64& rng) {
  LayerWeights W;
  W.kernel.n_out = L.n_out;
  W.kernel.n_in = n_in_per_group;
  W.kernel.kh = L.kh;
  W.kernel.kw = L.kw;
  W.kernel.bits.resize(W.kernel.bit_count());
  for (auto& b : W.kernel.bits) b = static_cast<std::uint8_t>(rng() & 1);
  std::uniform_real_distribution<double> sc(-2.0, 2.0), bi(-1.0, 1.0);
  if (L.scale)
    for (int c = 0; c < L.n_out; ++c) W.scale.push_back(to_half(sc(rng)));
  if (L.bias)
    for (int c = 0; c < L.n_out; ++c) W.bias.push_back(to_half(bi(rng)));
  return W;
}

struct LayerCase {
  FeatureMap input;
  LayerDescriptor layer;
  LayerWeights weights;
  std::optional<FeatureMap> bypass;
  ChipConfig cfg;

  std::string describe() const {
    return "in " + std::to_string(input.shape.n) + "x" + std::to_string(input.shape.h) + "x" +
           std::to_string(input.shape.w) + " k " + std::to_string(layer.kh) + "x" + std::to_string(layer.kw) +
           " s" + std::to_string(layer.stride) + " g" + std::to_string(layer.groups) + " out " +
           std::to_string(layer.n_out) + (layer.pad == Pad::Same ? " same" : " valid") +
           (layer.scale ? " scale" : "") + (layer.bias ? " bias" : "") + (bypass ? " bypass" : "") +
           (layer.relu ? " relu" : "") + " chip " + std::to_string(cfg.M) + "x" + std::to_string(cfg.N) + "x" +
           std::to_string(cfg.C) + " wbuf " + std::to_string(cfg.wbuf_bits);
  }
};

// kh, kw in {1, 3}, stride in {1, 2}, groups in {1, n_in}, every dimension <= 32.
inline LayerCase random_layer_case(std::mt19937_64& rng) {
  LayerCase lc;
  LayerDescriptor& L = lc.layer;
  L.kh = coin(rng) ? 3 : 1;
  L.kw = coin(rng) ? 3 : 1;
  L.stride = coin(rng) ? 2 : 1;
  L.pad = coin(rng, 0.8) ? Pad::Same : Pad::None;
  const int n_in = pick(rng, 1, 32);
  const int h = pick(rng, L.kh, 32), w = pick(rng, L.kw, 32);
  L.groups = coin(rng, 0.25) ? n_in : 1;
  L.n_out = L.groups == 1 ? pick(rng, 1, 32) : n_in;
  L.scale = coin(rng, 0.7);
  L.bias = coin(rng, 0.7);
  L.relu = coin(rng);
  lc.input = random_values(Shape{n_in, h, w}, rng, coin(rng, 0.3));
  lc.weights = random_layer_weights(L, n_in / L.groups, rng);
  const Shape out{L.n_out, out_extent(h, L.kh, L.stride, L.pad), out_extent(w, L.kw, L.stride, L.pad)};
  if (coin(rng, 0.4)) {
    L.bypass = kNetworkInput;
    lc.bypass = random_values(out, rng, false);
  }
  ChipConfig& cfg = lc.cfg;
  cfg.M = pick(rng, 1, 8);
  cfg.N = pick(rng, 1, 8);
  const int cs[] = {1, 4, 8, 16};
  cfg.C = cs[pick(rng, 0, 3)];
  // Small weight buffers force several chunks per output-channel tile.
  const std::uint64_t per_channel = static_cast<std::uint64_t>(L.kh) * L.kw * cfg.C;
  cfg.wbuf_bits = coin(rng) ? per_channel * pick(rng, 1, 8) : per_channel * 512;
  return lc;
}

// Small random network: conv chain with residual adds, strides and a branch
// reading an older feature map.
inline NetworkGraph random_network(std::mt19937_64& rng, int max_hw = 24) {
  NetworkGraph g;
  g.name = "random";
  const int n = pick(rng, 1, 12);
  g.input = Shape{n, pick(rng, 4, max_hw), pick(rng, 4, max_hw)};
  const int layers = pick(rng, 1, 7);
  std::vector<Shape> shapes{g.input};
  for (int l = 0; l < layers; ++l) {
    LayerDescriptor L;
    const int src = (l > 1 && coin(rng, 0.15)) ? pick(rng, 0, l - 2) : l - 1;
    const Shape in = shapes[src + 1];
    L.input = src == l - 1 ? std::nullopt : std::optional<int>(src);
    L.kh = L.kw = coin(rng, 0.7) ? 3 : 1;
    L.stride = (coin(rng, 0.2) && in.h >= 4 && in.w >= 4) ? 2 : 1;
    L.groups = coin(rng, 0.15) ? in.n : 1;
    L.n_out = L.groups == 1 ? pick(rng, 1, 12) : in.n;
    L.scale = coin(rng, 0.8);
    L.bias = coin(rng, 0.8);
    L.relu = coin(rng, 0.6);
    const Shape out{L.n_out, out_extent(in.h, L.kh, L.stride, L.pad), out_extent(in.w, L.kw, L.stride, L.pad)};
    // Residual add from any earlier feature map with the output's shape.
    std::vector<int> cands;
    for (int fm = kNetworkInput; fm < l; ++fm)
      if (shapes[fm + 1] == out) cands.push_back(fm);
    if (!cands.empty() && coin(rng, 0.4)) L.bypass = cands[pick(rng, 0, static_cast<int>(cands.size()) - 1)];
    g.layers.push_back(L);
    shapes.push_back(out);
  }
  return g;
}

}  // namespace fmstream::testing
