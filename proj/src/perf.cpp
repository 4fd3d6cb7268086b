// SPDX-License-Identifier: Apache-2.0
#include "fmstream/perf.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "fmstream/builtin.hpp"
#include "fmstream/planner.hpp"

namespace fmstream {

namespace {

std::uint64_t cdiv(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

std::uint64_t slots(int h, int w, const ChipConfig& cfg) {
  return cdiv(static_cast<std::uint64_t>(h), cfg.M) * cdiv(static_cast<std::uint64_t>(w), cfg.N);
}

int chunks_for(const LayerDescriptor& L, Shape in, const ChipConfig& cfg) {
  const int cin_g = in.n / L.groups;
  const std::uint64_t per = static_cast<std::uint64_t>(L.kh) * L.kw * cfg.C;
  const std::uint64_t chunk = std::max<std::uint64_t>(1, cfg.wbuf_bits / per);
  return static_cast<int>(cdiv(static_cast<std::uint64_t>(cin_g), chunk));
}

LayerPerf layer_perf(const LayerDescriptor& L, Shape in, int oh, int ow, const ChipConfig& cfg) {
  LayerPerf p;
  if (oh <= 0 || ow <= 0) return p;
  const std::uint64_t s = slots(oh, ow, cfg);
  const std::uint64_t ch = static_cast<std::uint64_t>(L.n_out) * s;
  const int chunks = chunks_for(L, in, cfg);
  p.conv_cycles = cdiv(static_cast<std::uint64_t>(L.n_out), cfg.C) * s * L.kh * L.kw * (in.n / L.groups);
  if (L.scale) p.scale_cycles = ch * chunks;
  if (L.bypass) p.bypass_cycles = ch;
  if (L.bias) p.bias_cycles = ch;
  p.chunk_cycles = ch * static_cast<std::uint64_t>(chunks - 1);
  return p;
}

}  // namespace

const std::vector<OperatingPoint>& operating_points() {
  static const std::vector<OperatingPoint> table = {
      {"0.5V", 0.5, 57.42e6, 21.57e-3},
      {"0.65V", 0.65, 135.15e6, 71.65e-3},
      {"0.8V", 0.8, 158.2e6, 133.61e-3},
      {"0.9V", 0.9, 163.28e6, 179.12e-3},
  };
  return table;
}

const OperatingPoint& operating_point(const std::string& label) {
  std::string l = label;
  if (!l.empty() && (l.back() == 'V' || l.back() == 'v')) l.pop_back();
  for (const auto& op : operating_points()) {
    std::string name = op.label.substr(0, op.label.size() - 1);
    if (l == name) return op;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown operating point '" + label + "' (use 0.5V, 0.65V, 0.8V or 0.9V)");
}

std::uint64_t conv_cycles(const LayerDescriptor& L, Shape in, Shape out, const ChipConfig& cfg) {
  return layer_perf(L, in, out.h, out.w, cfg).conv_cycles;
}

std::uint64_t elementwise_cycles(const LayerDescriptor& L, Shape in, Shape out, const ChipConfig& cfg) {
  const LayerPerf p = layer_perf(L, in, out.h, out.w, cfg);
  return p.cycles() - p.conv_cycles;
}

std::uint64_t weight_bits(const ResolvedNetwork& net) {
  std::uint64_t bits = 0;
  for (int l = 0; l < net.layer_count(); ++l) {
    const LayerDescriptor& L = net.layer(l);
    bits += static_cast<std::uint64_t>(L.n_out) * net.n_in_per_group(l) * L.kh * L.kw;
    bits += 16ull * L.n_out * ((L.scale ? 1 : 0) + (L.bias ? 1 : 0));
  }
  return bits;
}

std::uint64_t halo_bits_for_fm(const ResolvedNetwork& net, const MeshPartition& p, int fm) {
  const Shape& s = net.shape(fm);
  const auto readers = net.conv_readers(fm);
  if (readers.empty() || p.rows * p.cols == 1) return 0;
  std::uint64_t pixels = 0;
  for (int r = 0; r < p.rows; ++r)
    for (int c = 0; c < p.cols; ++c) {
      const Rect S = p.slice(fm, r, c);
      int top = 0, bottom = 0, left = 0, right = 0;
      for (int l : readers) {
        const LayerDescriptor& L = net.layer(l);
        const Rect O = p.slice(l, r, c);
        if (O.empty()) continue;
        const int first_y = std::max(0, L.stride * O.y0 - L.pad_h());
        const int last_y = std::min(s.h - 1, L.stride * (O.y1 - 1) - L.pad_h() + L.kh - 1);
        const int first_x = std::max(0, L.stride * O.x0 - L.pad_w());
        const int last_x = std::min(s.w - 1, L.stride * (O.x1 - 1) - L.pad_w() + L.kw - 1);
        top = std::max(top, S.y0 - first_y);
        bottom = std::max(bottom, last_y + 1 - S.y1);
        left = std::max(left, S.x0 - first_x);
        right = std::max(right, last_x + 1 - S.x1);
      }
      const std::uint64_t edge = static_cast<std::uint64_t>(top + bottom) * S.w() +
                                 static_cast<std::uint64_t>(left + right) * S.h();
      // The first hop of a corner pixel is a vertical halo pixel the middle
      // chip receives anyway; only the relay adds traffic.
      const std::uint64_t corner = static_cast<std::uint64_t>(top + bottom) * (left + right);
      pixels += edge + corner;
    }
  return 16 * pixels * static_cast<std::uint64_t>(s.n);
}

std::uint64_t halo_bits_closed_form(const ResolvedNetwork& net, int rows, int cols) {
  if (rows * cols == 1) return 0;
  const MeshPartition p = partition_mesh(net, rows, cols);
  std::uint64_t bits = 0;
  for (int fm = kNetworkInput; fm < net.layer_count(); ++fm) bits += halo_bits_for_fm(net, p, fm);
  return bits;
}

IoBits io_bits_fm_stationary(const ResolvedNetwork& net, int rows, int cols) {
  IoBits io;
  io.input_fm = 16 * static_cast<std::uint64_t>(net.shape(kNetworkInput).size());
  io.weights = weight_bits(net);
  io.output_fm = 16 * static_cast<std::uint64_t>(net.shape(net.graph.output_fm()).size());
  io.halo = halo_bits_closed_form(net, rows, cols);
  return io;
}

IoBits io_bits_weight_stationary(const ResolvedNetwork& net, int crossings) {
  if (crossings < 0) throw Error(ErrorCode::InvalidArgument, "crossings must be non-negative");
  IoBits io;
  io.input_fm = 16 * static_cast<std::uint64_t>(net.shape(kNetworkInput).size());
  io.weights = weight_bits(net);
  io.output_fm = 16 * static_cast<std::uint64_t>(net.shape(net.graph.output_fm()).size());
  for (int l = 0; l + 1 < net.layer_count(); ++l)
    io.intermediate += 16ull * crossings * static_cast<std::uint64_t>(net.shape(l).size());
  return io;
}

PerfReport network_cycles(const ResolvedNetwork& net, const ChipConfig& cfg, int rows, int cols) {
  cfg.check();
  PerfReport r;
  r.network = net.graph.name;
  r.mesh_rows = rows;
  r.mesh_cols = cols;
  const MeshPartition p = partition_mesh(net, rows, cols);
  for (int l = 0; l < net.layer_count(); ++l) {
    const LayerDescriptor& L = net.layer(l);
    LayerPerf worst;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const Rect O = p.slice(l, i, j);
        const LayerPerf lp = layer_perf(L, net.in_shape(l), O.h(), O.w(), cfg);
        r.chip_cycles_sum += lp.cycles();
        if (lp.cycles() > worst.cycles()) worst = lp;
      }
    r.conv_cycles += worst.conv_cycles;
    r.scale_cycles += worst.scale_cycles;
    r.bypass_cycles += worst.bypass_cycles;
    r.bias_cycles += worst.bias_cycles;
    r.chunk_cycles += worst.chunk_cycles;
    r.total_cycles += worst.cycles();
    r.layers.push_back(worst);
  }
  const OpCounts ops = count_ops(net);
  for (std::size_t l = 0; l < r.layers.size(); ++l) r.layers[l].ops = ops.layers[l];
  r.ops = ops.total;
  r.total_ops = ops.total.total();
  r.peak_ops_per_cycle = peak_throughput(cfg);
  if (r.total_cycles) {
    r.ops_per_cycle = static_cast<double>(r.total_ops) / static_cast<double>(r.total_cycles);
    r.utilization = r.ops_per_cycle / (static_cast<double>(r.peak_ops_per_cycle) * rows * cols);
  }
  return r;
}

PerfReport analyze_performance(const ResolvedNetwork& net, const ChipConfig& cfg, const OperatingPoint& op,
                               int rows, int cols, int ws_crossings) {
  PerfReport r = network_cycles(net, cfg, rows, cols);
  r.io = io_bits_fm_stationary(net, rows, cols);
  r.io_weight_stationary = io_bits_weight_stationary(net, ws_crossings);
  r.op = op;
  r.core_energy = static_cast<double>(r.chip_cycles_sum) / op.frequency * op.power;
  r.io_energy = kIoEnergyPerBit * static_cast<double>(r.io.total());
  r.total_energy = r.core_energy + r.io_energy;
  if (r.total_cycles) {
    r.fps = op.frequency / static_cast<double>(r.total_cycles);
    r.throughput = static_cast<double>(r.total_ops) * r.fps;
  }
  if (r.total_energy > 0) r.efficiency = static_cast<double>(r.total_ops) / r.total_energy;
  return r;
}

std::string perf_report_json(const PerfReport& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["network"] = r.network;
  j["mesh"] = std::to_string(r.mesh_rows) + "x" + std::to_string(r.mesh_cols);
  ordered_json c;
  c["conv"] = r.conv_cycles;
  c["scale"] = r.scale_cycles;
  c["bypass"] = r.bypass_cycles;
  c["bias"] = r.bias_cycles;
  c["chunk_partial_sums"] = r.chunk_cycles;
  c["total"] = r.total_cycles;
  c["summed_over_chips"] = r.chip_cycles_sum;
  j["cycles"] = c;
  ordered_json o;
  o["conv"] = r.ops.conv;
  o["scale"] = r.ops.scale;
  o["bias"] = r.ops.bias;
  o["bypass"] = r.ops.bypass;
  o["total"] = r.total_ops;
  j["ops"] = o;
  j["peak_ops_per_cycle"] = r.peak_ops_per_cycle * static_cast<std::uint64_t>(r.mesh_rows * r.mesh_cols);
  j["ops_per_cycle"] = r.ops_per_cycle;
  j["utilization"] = r.utilization;
  auto io = [](const IoBits& b) {
    ordered_json x;
    x["input_fm"] = b.input_fm;
    x["weights"] = b.weights;
    x["output_fm"] = b.output_fm;
    x["halo"] = b.halo;
    x["intermediate"] = b.intermediate;
    x["total"] = b.total();
    return x;
  };
  j["io_bits"] = io(r.io);
  j["io_bits_weight_stationary"] = io(r.io_weight_stationary);
  ordered_json op;
  op["label"] = r.op.label;
  op["vdd"] = r.op.vdd;
  op["frequency_hz"] = r.op.frequency;
  op["power_w"] = r.op.power;
  j["operating_point"] = op;
  ordered_json e;
  e["core_j"] = r.core_energy;
  e["io_j"] = r.io_energy;
  e["total_j"] = r.total_energy;
  j["energy"] = e;
  j["fps"] = r.fps;
  j["throughput_gops"] = r.throughput / 1e9;
  j["efficiency_tops_per_w"] = r.efficiency / 1e12;
  ordered_json layers = ordered_json::array();
  for (std::size_t l = 0; l < r.layers.size(); ++l) {
    const LayerPerf& p = r.layers[l];
    layers.push_back({{"layer", l},
                      {"conv_cycles", p.conv_cycles},
                      {"elementwise_cycles", p.cycles() - p.conv_cycles},
                      {"ops", p.ops.total()}});
  }
  j["layers"] = layers;
  return j.dump(2) + "\n";
}

int auto_mesh_side(const ResolvedNetwork& net, const ChipConfig& cfg, int max_side) {
  for (int m = 1; m <= max_side; ++m) {
    // Largest chip slice of the input, run through the same layers.
    NetworkGraph g = net.graph;
    const Shape in = net.shape(kNetworkInput);
    g.input = Shape{in.n, (in.h + m - 1) / m, (in.w + m - 1) / m};
    if (wcl_words(ResolvedNetwork(g)).words <= cfg.fmm_words) return m;
  }
  throw Error(ErrorCode::DoesNotFit, "no mesh up to " + std::to_string(max_side) + "x" + std::to_string(max_side) +
                                         " holds the network");
}

std::vector<SweepRow> sweep_io(const std::string& builtin, const std::vector<int>& resolutions,
                               const std::vector<int>& mesh_sides, const ChipConfig& cfg, int ws_crossings) {
  std::vector<SweepRow> out;
  for (int res : resolutions) {
    const ResolvedNetwork net(builtin_network(builtin, res));
    for (int side : mesh_sides) {
      const int m = side > 0 ? side : auto_mesh_side(net, cfg);
      if (std::any_of(out.begin(), out.end(), [&](const SweepRow& r) { return r.resolution == res && r.mesh_rows == m; }))
        continue;
      SweepRow row;
      row.resolution = res;
      row.mesh_rows = row.mesh_cols = m;
      row.io_bits_ws = io_bits_weight_stationary(net, ws_crossings).total();
      row.io_bits_fms = io_bits_fm_stationary(net, m, m).total();
      out.push_back(row);
    }
  }
  return out;
}

std::vector<SweepRow> sweep_io(const NetworkGraph& g, const std::vector<int>& mesh_sides, const ChipConfig& cfg,
                               int ws_crossings) {
  std::vector<SweepRow> out;
  if (g.layers.empty()) return out;
  const ResolvedNetwork net(g);
  for (int side : mesh_sides) {
    const int m = side > 0 ? side : auto_mesh_side(net, cfg);
    SweepRow row;
    row.resolution = net.shape(kNetworkInput).h * g.image_stride;
    row.mesh_rows = row.mesh_cols = m;
    row.io_bits_ws = io_bits_weight_stationary(net, ws_crossings).total();
    row.io_bits_fms = io_bits_fm_stationary(net, m, m).total();
    out.push_back(row);
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "resolution,mesh,io_bits_ws,io_bits_fms,ratio\n";
  for (const auto& r : rows)
    os << r.resolution << "," << r.mesh_rows << "x" << r.mesh_cols << "," << r.io_bits_ws << "," << r.io_bits_fms
       << "," << std::fixed << std::setprecision(4) << r.ratio() << std::defaultfloat << "\n";
  return os.str();
}

}  // namespace fmstream
