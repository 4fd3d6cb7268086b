// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmstream/network.hpp"

namespace fmstream {

// Network description JSON.
NetworkGraph network_from_json(const std::string& text);
std::string network_to_json(const NetworkGraph& net);
NetworkGraph load_network(const std::string& path);
void save_network(const NetworkGraph& net, const std::string& path);

// Packed weight stream as consumed by the chip: per layer, per output-channel
// tile of C, per tap (dy outer), per local c_in, one C-bit word with the
// lowest c_out in the least significant bit. Lanes past n_out are zero.
struct LayerStream {
  std::uint64_t bit_offset = 0;  // start of this layer in `bits`
  std::uint64_t bit_count = 0;
};

struct WeightStream {
  int tile_channels = 16;
  std::vector<std::uint8_t> bytes;  // bit i lives in bytes[i / 8] >> (i % 8)
  std::vector<LayerStream> layers;
  std::vector<std::vector<Half>> scale;  // per layer, streamed alongside the kernels
  std::vector<std::vector<Half>> bias;

  bool bit(std::uint64_t i) const { return (bytes[i >> 3] >> (i & 7)) & 1; }
};

WeightStream encode_weight_stream(const NetworkWeights& weights, int tile_channels);
// Inverse of encode_weight_stream for the given geometry.
BinaryKernelSet decode_kernel(const WeightStream& stream, int layer, int n_out, int n_in, int kh, int kw);

// Weight file: "HBWN", u16 version, u16 tile channels, u32 layer count, then
// per layer a small header, scale and bias as binary16 little-endian and the
// layer's packed stream bits (byte aligned).
std::vector<std::uint8_t> weights_to_bytes(const NetworkWeights& weights, int tile_channels = 16);
NetworkWeights weights_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_weights(const NetworkWeights& weights, const std::string& path, int tile_channels = 16);
NetworkWeights load_weights(const std::string& path);

// Feature-map file: n, h, w as u32 little-endian, then binary16 values.
std::vector<std::uint8_t> feature_map_to_bytes(const FeatureMap& fm);
FeatureMap feature_map_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_feature_map(const FeatureMap& fm, const std::string& path);
FeatureMap load_feature_map(const std::string& path);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::string& path, const std::string& text);

}  // namespace fmstream
