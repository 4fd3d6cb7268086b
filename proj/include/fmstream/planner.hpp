// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmstream/network.hpp"

namespace fmstream {

// Pixels of `fm` still read by layers >= from_layer, as an h*w mask.
// Returns an empty vector when every pixel is still needed.
std::vector<std::uint8_t> retained_pixels(const ResolvedNetwork& net, int fm, int from_layer);
// Words of `fm` retained at the start of layer from_layer (0 when dead).
std::uint64_t retained_words(const ResolvedNetwork& net, int fm, int from_layer);

// Last layer reading fm as input or bypass; -2 when unread.
int last_reader(const ResolvedNetwork& net, int fm);
// Output of l overwrites its bypass source in place.
bool writes_in_place(const ResolvedNetwork& net, int l);
// fm stays resident after layer l finished.
bool live_after(const ResolvedNetwork& net, int fm, int l);

struct LivenessStep {
  int layer = -1;  // -1 is the input load
  std::uint64_t words = 0;
  bool in_place = false;
  std::vector<std::pair<int, std::uint64_t>> resident;  // (fm, words), output last
};

struct Liveness {
  std::vector<LivenessStep> steps;  // load step first
  std::uint64_t peak_words = 0;
  int peak_layer = -1;
};

Liveness analyze_liveness(const ResolvedNetwork& net);

enum class BlockKind { Basic, StridedBasic, Bottleneck, StridedBottleneck };
const char* block_kind_name(BlockKind k);

struct BlockMatch {
  BlockKind kind;
  int first_layer = 0;
  int last_layer = 0;
  int input_fm = kNetworkInput;
  std::uint64_t closed_form_words = 0;
};

std::vector<BlockMatch> recognize_blocks(const ResolvedNetwork& net);
std::uint64_t block_closed_form(const ResolvedNetwork& net, const BlockMatch& b);

struct WclResult {
  std::uint64_t words = 0;
  int layer = -1;     // step that attains the maximum (-1: input load)
  int input_fm = kNetworkInput;  // feature map read by that layer
  std::string source;  // "load", "layer", or a block kind name
};

WclResult wcl_words(const ResolvedNetwork& net);

// Halo words for the transition at layer l (input of l and its output).
std::uint64_t border_words_at(const ResolvedNetwork& net, int l);
std::uint64_t corner_words_at(const ResolvedNetwork& net, int l);
std::uint64_t border_memory_bits(const ResolvedNetwork& net);
std::uint64_t corner_memory_bits(const ResolvedNetwork& net);

struct SegmentUse {
  int input_segment = -1;
  int output_segment = -1;
  int bypass_segment = -1;  // -1 when the layer has no bypass
  bool in_place = false;
};

struct SegmentPlan {
  std::vector<SegmentUse> layers;
  int input_segment = 0;
  std::vector<std::uint64_t> segment_words;  // M1, M2, ...
  std::uint64_t peak_words = 0;
};

struct MemoryReport {
  WclResult wcl;
  std::uint64_t wcl_bits = 0;
  std::uint64_t border_bits = 0;         // maximized over all transitions
  std::uint64_t border_bits_at_wcl = 0;  // at the worst-case layer only
  std::uint64_t corner_bits = 0;
  bool fits_fmm = false;
  bool fits_bm = false;
  bool fits_cm = false;
  std::int64_t deficit_words = 0;
  SegmentPlan plan;
  std::vector<BlockMatch> blocks;
  Liveness liveness;
};

SegmentPlan build_segment_plan(const ResolvedNetwork& net);
// Throws DoesNotFit naming the blocking layer and the deficit in words.
SegmentPlan plan_segments(const ResolvedNetwork& net, const ChipConfig& cfg);
MemoryReport memory_report(const ResolvedNetwork& net, const ChipConfig& cfg);

std::string memory_report_json(const ResolvedNetwork& net, const MemoryReport& r);
std::string memory_report_table(const ResolvedNetwork& net, const MemoryReport& r);

}  // namespace fmstream
