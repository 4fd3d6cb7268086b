// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmstream/mesh.hpp"
#include "fmstream/network.hpp"

namespace fmstream {

struct OperatingPoint {
  std::string label;
  double vdd = 0;        // V
  double frequency = 0;  // Hz
  double power = 0;      // W
};

const std::vector<OperatingPoint>& operating_points();
// Accepts "0.5V", "0.5", "0.65V", ... Throws InvalidArgument.
const OperatingPoint& operating_point(const std::string& label);

inline constexpr double kIoEnergyPerBit = 21e-12;  // J

// Output-channel tiles x spatial slots x taps x local input channels.
std::uint64_t conv_cycles(const LayerDescriptor& L, Shape in, Shape out, const ChipConfig& cfg);
// One cycle per output channel and spatial slot for every epilogue stage,
// including the extra scale and partial-sum add of each weight-buffer chunk.
std::uint64_t elementwise_cycles(const LayerDescriptor& L, Shape in, Shape out, const ChipConfig& cfg);

struct LayerPerf {
  std::uint64_t conv_cycles = 0;
  std::uint64_t scale_cycles = 0;
  std::uint64_t bypass_cycles = 0;
  std::uint64_t bias_cycles = 0;
  std::uint64_t chunk_cycles = 0;  // partial-sum adds of chunks after the first
  std::uint64_t cycles() const { return conv_cycles + scale_cycles + bypass_cycles + bias_cycles + chunk_cycles; }
  LayerOps ops;
};

struct IoBits {
  std::uint64_t input_fm = 0;
  std::uint64_t weights = 0;
  std::uint64_t output_fm = 0;
  std::uint64_t halo = 0;
  std::uint64_t intermediate = 0;  // weight-stationary baseline only
  std::uint64_t total() const { return input_fm + weights + output_fm + halo + intermediate; }
};

struct PerfReport {
  std::string network;
  int mesh_rows = 1;
  int mesh_cols = 1;
  std::vector<LayerPerf> layers;  // slowest chip per layer on a mesh
  std::uint64_t conv_cycles = 0;
  std::uint64_t scale_cycles = 0;
  std::uint64_t bypass_cycles = 0;
  std::uint64_t bias_cycles = 0;
  std::uint64_t chunk_cycles = 0;
  std::uint64_t total_cycles = 0;     // frame latency
  std::uint64_t chip_cycles_sum = 0;  // summed over chips, for energy
  LayerOps ops;
  std::uint64_t total_ops = 0;
  std::uint64_t peak_ops_per_cycle = 0;
  double ops_per_cycle = 0;
  double utilization = 0;
  IoBits io;
  IoBits io_weight_stationary;
  OperatingPoint op;
  double core_energy = 0;  // J
  double io_energy = 0;
  double total_energy = 0;
  double fps = 0;
  double throughput = 0;   // Op/s
  double efficiency = 0;   // Op/J
};

std::uint64_t weight_bits(const ResolvedNetwork& net);

// Halo payload bits from slice geometry alone (no messages).
std::uint64_t halo_bits_for_fm(const ResolvedNetwork& net, const MeshPartition& p, int fm);
std::uint64_t halo_bits_closed_form(const ResolvedNetwork& net, int rows, int cols);

IoBits io_bits_fm_stationary(const ResolvedNetwork& net, int rows = 1, int cols = 1);
IoBits io_bits_weight_stationary(const ResolvedNetwork& net, int crossings = 2);

PerfReport network_cycles(const ResolvedNetwork& net, const ChipConfig& cfg, int rows = 1, int cols = 1);
// Cycles plus I/O and energy at an operating point.
PerfReport analyze_performance(const ResolvedNetwork& net, const ChipConfig& cfg, const OperatingPoint& op,
                               int rows = 1, int cols = 1, int ws_crossings = 2);

std::string perf_report_json(const PerfReport& r);

struct SweepRow {
  int resolution = 0;
  int mesh_rows = 1;
  int mesh_cols = 1;
  std::uint64_t io_bits_ws = 0;
  std::uint64_t io_bits_fms = 0;
  double ratio() const { return io_bits_fms ? static_cast<double>(io_bits_ws) / io_bits_fms : 0.0; }
};

// Smallest square mesh whose per-chip worst-case footprint fits fmm_words.
int auto_mesh_side(const ResolvedNetwork& net, const ChipConfig& cfg, int max_side = 16);

// mesh_side 0 picks auto_mesh_side for every resolution.
std::vector<SweepRow> sweep_io(const std::string& builtin, const std::vector<int>& resolutions,
                               const std::vector<int>& mesh_sides, const ChipConfig& cfg, int ws_crossings = 2);
std::vector<SweepRow> sweep_io(const NetworkGraph& net, const std::vector<int>& mesh_sides, const ChipConfig& cfg,
                               int ws_crossings = 2);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace fmstream
