// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "fmstream/network.hpp"

namespace fmstream::oracle {

// Binary16Scheduled rounds after every add in the chip's loop order.
// Float64 accumulates in double and rounds once at the end.
enum class Mode { Binary16Scheduled, Float64 };

// chunk_channels: local input channels per weight-buffer load; 0 means the
// whole group in one pass. Partial sums of later chunks are added where the
// bypass would be.
FeatureMap conv_reference(const FeatureMap& in, const LayerDescriptor& layer, const LayerWeights& weights,
                          const FeatureMap* bypass, Mode mode, int chunk_channels = 0);

// Chunk size the chip uses for a kernel of kh x kw.
int chunk_channels_for(std::uint64_t wbuf_bits, int kh, int kw, int tile_channels);

// Runs every layer; returns all feature maps (index fm + 1).
std::vector<FeatureMap> network_reference(const ResolvedNetwork& net, const NetworkWeights& weights,
                                          const FeatureMap& input, Mode mode, std::uint64_t wbuf_bits,
                                          int tile_channels);

// Multiply-accumulates by loop enumeration, padding taps included.
std::uint64_t mac_count(const LayerDescriptor& layer, Shape in);

// Standalone binary16 rounding (shares nothing with the engine).
std::uint16_t round_to_half(double v);
double half_value(std::uint16_t bits);

}  // namespace fmstream::oracle
