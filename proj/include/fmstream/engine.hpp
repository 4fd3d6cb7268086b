// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fmstream/network.hpp"
#include "fmstream/serialize.hpp"

namespace fmstream {

enum class AccessKind { FmmRead, FmmWrite, WbufRead, StreamConsume, BmRead, CmRead };
const char* access_kind_name(AccessKind k);

struct AccessEvent {
  std::uint64_t cycle = 0;
  AccessKind kind = AccessKind::FmmRead;
  std::uint64_t address = 0;
  int tile_row = -1;  // -1 for chip-wide accesses (weight buffer, stream)
  int tile_col = -1;

  bool operator==(const AccessEvent&) const = default;
};

std::string trace_to_jsonl(const std::vector<AccessEvent>& trace);

// Half-open rectangle in global feature-map coordinates.
struct Rect {
  int y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  int h() const { return y1 - y0; }
  int w() const { return x1 - x0; }
  bool empty() const { return y1 <= y0 || x1 <= x0; }
  bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
  bool operator==(const Rect&) const = default;
};

// Word-addressed feature-map memory. Allocation takes the lowest free words,
// so a feature map may occupy scattered words (freed pixels get reused).
class FeatureMapMemory {
 public:
  explicit FeatureMapMemory(std::uint64_t words);

  // Physical addresses in logical order. Throws SegmentOverflow.
  std::vector<std::uint32_t> allocate(std::uint64_t n, int owner, int layer);
  void release(std::uint32_t addr, int owner);
  Half read(std::uint32_t addr, int owner) const;
  void write(std::uint32_t addr, Half v, int owner);
  void reassign(std::uint32_t addr, int from, int to);

  std::uint64_t capacity() const { return words_.size(); }
  std::uint64_t used() const { return used_; }
  std::uint64_t peak() const { return peak_; }

 private:
  static constexpr int kFree = -100;
  std::vector<Half> words_;
  std::vector<int> owner_;
  std::uint64_t used_ = 0;
  std::uint64_t peak_ = 0;
  std::uint64_t scan_from_ = 0;
};

// Source of pixels owned by other chips (border and corner memories).
class HaloSource {
 public:
  virtual ~HaloSource() = default;
  // (fm, c, y, x) lies inside the feature map but outside this chip's slice.
  virtual Half read_halo(int fm, int c, int y, int x, AccessKind* kind, std::uint64_t* address) = 0;
};

struct EngineOptions {
  bool trace = false;
  std::uint64_t max_trace_events = 20'000'000;
};

struct LayerRunStats {
  std::uint64_t conv_cycles = 0;
  std::uint64_t epilogue_cycles = 0;
  int chunks = 1;
  std::uint64_t wbuf_peak_bits = 0;
  std::uint64_t overflows = 0;  // infinite outputs produced
  bool in_place = false;
};

// One chip's execution state: FMM, weight buffer, stream cursor and trace.
class Engine {
 public:
  // owned[fm + 1] is the slice of each feature map held by this chip; empty
  // means the whole feature map (single chip).
  Engine(const ResolvedNetwork& net, const WeightStream& stream, const ChipConfig& cfg, EngineOptions opt = {},
         std::vector<Rect> owned = {});

  void load_input(const FeatureMap& slice);
  void run_layer(int l, HaloSource* halo = nullptr);
  void run_all(HaloSource* halo = nullptr);

  bool resident(int fm) const;
  FeatureMap read_slice(int fm) const;
  Half read_pixel(int fm, int c, int y, int x) const;
  const Rect& owned(int fm) const { return owned_[fm + 1]; }

  std::uint64_t cycles() const { return cycle_; }
  std::uint64_t fmm_used() const { return fmm_.used(); }
  std::uint64_t fmm_peak() const { return fmm_.peak(); }
  std::uint64_t wbuf_peak_bits() const { return wbuf_peak_; }
  std::uint64_t stream_bits_consumed() const { return stream_consumed_; }
  std::uint64_t overflow_warnings() const { return overflows_; }
  const std::vector<LayerRunStats>& layer_stats() const { return stats_; }
  const std::vector<AccessEvent>& trace() const { return trace_; }
  bool trace_truncated() const { return trace_truncated_; }

 private:
  struct Resident {
    bool live = false;
    std::vector<std::uint32_t> addr;  // per logical word of the owned slice
    std::vector<std::uint8_t> kept;   // per slice pixel; empty = all kept
  };

  void apply_retention(int l);
  void free_fm(int fm);
  std::size_t slice_index(int fm, int c, int y, int x) const;
  void emit(AccessKind k, std::uint64_t addr, int tr, int tc);

  const ResolvedNetwork& net_;
  const WeightStream& stream_;
  ChipConfig cfg_;
  EngineOptions opt_;
  std::vector<Rect> owned_;
  FeatureMapMemory fmm_;
  std::vector<Resident> fms_;
  std::uint64_t cycle_ = 0;
  std::uint64_t wbuf_peak_ = 0;
  std::uint64_t stream_consumed_ = 0;
  std::uint64_t overflows_ = 0;
  std::vector<LayerRunStats> stats_;
  std::vector<AccessEvent> trace_;
  bool trace_truncated_ = false;
  bool input_loaded_ = false;
  int next_layer_ = 0;

  friend struct EngineAccess;
};

struct NetworkRun {
  FeatureMap output;
  std::vector<AccessEvent> trace;
  bool trace_truncated = false;
  std::uint64_t cycles = 0;
  std::uint64_t fmm_peak_words = 0;
  std::uint64_t overflow_warnings = 0;
  std::vector<LayerRunStats> layers;
};

// Runs the whole network on one chip. Checks the plan fits fmm_words first.
NetworkRun run_network(const ResolvedNetwork& net, const NetworkWeights& weights, const FeatureMap& input,
                       const ChipConfig& cfg, EngineOptions opt = {});

// Single layer on a standalone chip; bypass may be null.
FeatureMap run_conv_layer(const FeatureMap& in, const LayerDescriptor& layer, const LayerWeights& weights,
                          const FeatureMap* bypass, const ChipConfig& cfg, EngineOptions opt = {},
                          LayerRunStats* stats = nullptr);

// Chip-sized config with an FMM large enough for any plan of `net`.
ChipConfig ideal_chip(const ResolvedNetwork& net, ChipConfig base = {});

}  // namespace fmstream
