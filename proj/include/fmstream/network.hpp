// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fmstream/binary16.hpp"
#include "fmstream/error.hpp"

namespace fmstream {

// Feature-map id: -1 is the network input, l >= 0 is the output of layer l.
inline constexpr int kNetworkInput = -1;

struct Shape {
  int n = 0;
  int h = 0;
  int w = 0;

  std::int64_t size() const { return std::int64_t{n} * h * w; }
  bool operator==(const Shape&) const = default;
};

struct FeatureMap {
  Shape shape;
  std::vector<Half> data;  // channel-major, then row-major

  FeatureMap() = default;
  explicit FeatureMap(Shape s) : shape(s), data(static_cast<std::size_t>(s.size())) {}

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape.h + y) * shape.w + x;
  }
  Half& at(int c, int y, int x) { return data[index(c, y, x)]; }
  Half at(int c, int y, int x) const { return data[index(c, y, x)]; }

  bool operator==(const FeatureMap&) const = default;
};

// One sign bit per (c_out, c_in_local, dy, dx); 1 is +1, 0 is -1.
struct BinaryKernelSet {
  int n_out = 0;
  int n_in = 0;  // input channels seen by one output channel (n_in / groups)
  int kh = 1;
  int kw = 1;
  std::vector<std::uint8_t> bits;

  std::size_t index(int co, int ci, int dy, int dx) const {
    return ((static_cast<std::size_t>(co) * n_in + ci) * kh + dy) * kw + dx;
  }
  bool positive(int co, int ci, int dy, int dx) const { return bits[index(co, ci, dy, dx)] != 0; }
  std::size_t bit_count() const { return static_cast<std::size_t>(n_out) * n_in * kh * kw; }
  bool operator==(const BinaryKernelSet&) const = default;
};

enum class Pad { Same, None };

struct LayerDescriptor {
  int kh = 3;
  int kw = 3;
  int n_out = 0;
  int stride = 1;
  Pad pad = Pad::Same;
  int groups = 1;
  bool scale = false;
  bool bias = false;
  std::vector<Half> scale_values;  // optional explicit values, n_out entries
  std::vector<Half> bias_values;
  std::optional<int> bypass;  // feature-map id added after scaling
  std::optional<int> input;   // feature-map id read by the conv; default previous layer
  bool relu = false;

  int pad_h() const { return pad == Pad::Same ? kh / 2 : 0; }
  int pad_w() const { return pad == Pad::Same ? kw / 2 : 0; }
  bool operator==(const LayerDescriptor&) const = default;
};

struct NetworkGraph {
  std::string name;
  std::string notes;
  int image_stride = 1;  // image resolution = input height * image_stride
  Shape input;
  std::vector<LayerDescriptor> layers;

  int layer_count() const { return static_cast<int>(layers.size()); }
  int input_of(int l) const { return layers[l].input.value_or(l - 1); }
  // Final output id; kNetworkInput for an empty network.
  int output_fm() const { return layer_count() - 1; }
  bool operator==(const NetworkGraph&) const = default;
};

int out_extent(int in, int k, int stride, Pad pad);

// Shapes of every feature map; index 0 is the network input, l+1 is layer l.
// Throws Error on the first inconsistency.
std::vector<Shape> infer_shapes(const NetworkGraph& net);

struct ValidationIssue {
  ErrorCode code;
  int layer;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<ValidationIssue> issues;
};

ValidationReport validate_network(const NetworkGraph& net);
// Throws the first issue as Error.
void require_valid(const NetworkGraph& net);

// Topology view shared by planner, engine, mesh and perf.
struct ResolvedNetwork {
  NetworkGraph graph;
  std::vector<Shape> shapes;  // shapes[fm + 1]

  explicit ResolvedNetwork(NetworkGraph net);

  const LayerDescriptor& layer(int l) const { return graph.layers[l]; }
  int layer_count() const { return graph.layer_count(); }
  int input_of(int l) const { return graph.input_of(l); }
  const Shape& shape(int fm) const { return shapes[fm + 1]; }
  const Shape& in_shape(int l) const { return shape(input_of(l)); }
  const Shape& out_shape(int l) const { return shape(l); }
  int n_in_per_group(int l) const { return in_shape(l).n / layer(l).groups; }
  // Layers whose conv input is fm, ascending.
  std::vector<int> conv_readers(int fm) const;
  // Layers that add fm as bypass, ascending.
  std::vector<int> bypass_readers(int fm) const;
};

struct LayerWeights {
  BinaryKernelSet kernel;
  std::vector<Half> scale;  // empty when the layer has no scale stage
  std::vector<Half> bias;
  bool operator==(const LayerWeights&) const = default;
};

using NetworkWeights = std::vector<LayerWeights>;

void check_weights(const ResolvedNetwork& net, const NetworkWeights& weights);

struct ChipConfig {
  int M = 7;
  int N = 7;
  int C = 16;
  std::uint64_t fmm_words = 400ull * 1024;
  std::uint64_t wbuf_bits = 512ull * 3 * 3 * 16;
  std::uint64_t bm_bits = 4ull * 1024 * 112;
  std::uint64_t cm_bits = 4096ull * 16;

  void check() const;
};

std::uint64_t peak_throughput(const ChipConfig& cfg);

struct LayerOps {
  std::uint64_t conv = 0;
  std::uint64_t scale = 0;
  std::uint64_t bias = 0;
  std::uint64_t bypass = 0;
  std::uint64_t total() const { return conv + scale + bias + bypass; }
};

struct OpCounts {
  std::vector<LayerOps> layers;
  LayerOps total;
};

OpCounts count_ops(const ResolvedNetwork& net);

// Deterministic generators (std::mt19937_64).
NetworkWeights random_weights(const ResolvedNetwork& net, std::uint64_t seed);
FeatureMap random_feature_map(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

}  // namespace fmstream
