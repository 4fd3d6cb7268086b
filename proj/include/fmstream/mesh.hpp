// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <string>
#include <vector>

#include "fmstream/engine.hpp"
#include "fmstream/network.hpp"

namespace fmstream {

struct MeshConfig {
  int rows = 1;
  int cols = 1;
  // Per-interface send buffer in pixels per wave; 0 means M*C on east/west
  // links and N*C on north/south links.
  std::uint64_t link_buffer_ns = 0;
  std::uint64_t link_buffer_ew = 0;

  int chips() const { return rows * cols; }
};

MeshConfig parse_mesh(const std::string& text);  // "MxN"

enum class ChipType {
  Single,
  NW, N, NE, W, Center, E, SW, S, SE,
  RowWest, RowCenter, RowEast,  // 1 x n meshes
  ColNorth, ColCenter, ColSouth,  // m x 1 meshes
};

const char* chip_type_name(ChipType t);
ChipType assign_chip_type(int row, int col, int rows, int cols);

enum class Direction { North, South, East, West };
const char* direction_name(Direction d);

// Spatial split of every feature map across the mesh. The network input is
// cut into ceil(h/m) rows per chip row (the last chip row may be shorter);
// each layer output follows the split of its input so every output pixel is
// computed by the chip holding the centre of its receptive field.
struct MeshPartition {
  int rows = 1;
  int cols = 1;
  std::vector<std::vector<int>> row_bounds;  // [fm + 1][0..rows]
  std::vector<std::vector<int>> col_bounds;  // [fm + 1][0..cols]

  Rect slice(int fm, int r, int c) const;
  // Chip row/col owning a global coordinate.
  int row_of(int fm, int y) const;
  int col_of(int fm, int x) const;
};

// Throws ShapeMismatch when a bypass source is split differently from the
// layer output it is added to.
MeshPartition partition_mesh(const ResolvedNetwork& net, int rows, int cols);

// Uniform split after zero padding h and w up to multiples of rows and cols.
struct TiledInput {
  Shape original;
  Shape padded;
  int rows = 1;
  int cols = 1;
  std::vector<FeatureMap> slices;  // row-major over chips
};

TiledInput tile_input(const FeatureMap& fm, int rows, int cols);
FeatureMap reassemble(const TiledInput& tiles);

enum class ReadSource { Fmm, BmHorizontal, BmVertical, Cm, ZeroPad };
const char* read_source_name(ReadSource s);

// Where chip (r, c) finds global pixel (y, x) of fm. Throws SliceTooSmall
// when the owner is not an adjacent chip.
ReadSource resolve_read(const MeshPartition& p, int fm, int r, int c, int y, int x, int h, int w);

struct BorderMessage {
  int fm = kNetworkInput;   // feature map (layer output) the pixel belongs to
  int from_row = 0, from_col = 0;
  int to_row = 0, to_col = 0;
  Direction direction = Direction::North;  // travel direction
  int channel = 0;
  int owner_row = 0, owner_col = 0;  // chip that computed the pixel
  int y = 0, x = 0;  // local to the owner's slice (the sender, except for relays)
  Half payload;
  bool corner_forward = false;  // receiver relays it to the diagonal chip
  bool relay = false;           // second hop of a corner pixel
  bool transit_only = false;    // first hop to a chip that does not read it itself
};

// Halo pixels (y, x) of fm that chip (r, c) reads from other chips, over all
// conv readers of fm, sorted. Channels are implied (all of them).
std::vector<std::pair<int, int>> halo_need(const ResolvedNetwork& net, const MeshPartition& p, int fm, int r, int c);

// Messages for one feature map, sorted by sender, direction, channel, pixel.
// `value(r, c, ch, y, x)` supplies the sender's pixel in global coordinates.
std::vector<BorderMessage> exchange_messages(const ResolvedNetwork& net, const MeshPartition& p, int fm,
                                             const std::function<Half(int, int, int, int, int)>& value);

struct TrafficRow {
  int fm = kNetworkInput;
  int from_row = 0, from_col = 0;
  int to_row = 0, to_col = 0;
  std::uint64_t pixels = 0;
  std::uint64_t payload_bits() const { return pixels * 16; }
  std::uint64_t wire_bits() const { return pixels * 20; }  // 4 flits of 4 data + 1 valid bit
};

struct MeshRun {
  FeatureMap output;
  std::vector<TrafficRow> traffic;
  std::uint64_t messages = 0;
  std::uint64_t corner_relays = 0;
  std::uint64_t halo_payload_bits = 0;
  std::uint64_t bm_peak_bits = 0;
  std::uint64_t cm_peak_bits = 0;
  std::uint64_t max_wave_pixels = 0;
  std::uint64_t latency_cycles = 0;  // lock-step: per layer the slowest chip
  std::vector<std::uint64_t> chip_cycles;
  std::vector<ChipType> chip_types;
};

struct MeshOptions {
  EngineOptions engine;
  bool check_buffers = true;
};

MeshRun run_mesh_network(const ResolvedNetwork& net, const NetworkWeights& weights, const FeatureMap& input,
                         const MeshConfig& mesh, const ChipConfig& cfg, MeshOptions opt = {});

std::string traffic_csv(const std::vector<TrafficRow>& rows);

}  // namespace fmstream
