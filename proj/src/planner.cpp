// SPDX-License-Identifier: Apache-2.0
#include "fmstream/planner.hpp"

#include <algorithm>
#include <iomanip>
#include <json.hpp>
#include <set>
#include <sstream>

namespace fmstream {

namespace {

std::vector<std::uint8_t> axis_mask(int extent, int out, int k, int stride, int pad) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(extent), 0);
  for (int y = 0; y < out; ++y)
    for (int d = 0; d < k; ++d) {
      const int r = stride * y - pad + d;
      if (r >= 0 && r < extent) m[r] = 1;
    }
  return m;
}

bool all_set(const std::vector<std::uint8_t>& m) {
  return std::all_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
}

}  // namespace

int last_reader(const ResolvedNetwork& net, int fm) {
  int last = -2;
  for (int l = 0; l < net.layer_count(); ++l)
    if (net.input_of(l) == fm || (net.layer(l).bypass && *net.layer(l).bypass == fm)) last = l;
  return last;
}

std::vector<std::uint8_t> retained_pixels(const ResolvedNetwork& net, int fm, int from_layer) {
  const Shape& s = net.shape(fm);
  const std::size_t pixels = static_cast<std::size_t>(s.h) * s.w;
  std::vector<std::uint8_t> keep;
  bool any = false;
  for (int l = std::max(from_layer, 0); l < net.layer_count(); ++l) {
    const LayerDescriptor& L = net.layer(l);
    if (L.bypass && *L.bypass == fm) return {};
    if (net.input_of(l) != fm) continue;
    const Shape& o = net.out_shape(l);
    auto rows = axis_mask(s.h, o.h, L.kh, L.stride, L.pad_h());
    auto cols = axis_mask(s.w, o.w, L.kw, L.stride, L.pad_w());
    if (all_set(rows) && all_set(cols)) return {};
    if (!any) keep.assign(pixels, 0);
    any = true;
    for (int y = 0; y < s.h; ++y) {
      if (!rows[y]) continue;
      for (int x = 0; x < s.w; ++x)
        if (cols[x]) keep[static_cast<std::size_t>(y) * s.w + x] = 1;
    }
  }
  if (!any) {
    if (fm == net.graph.output_fm()) return {};
    keep.assign(pixels, 0);
  }
  return keep;
}

std::uint64_t retained_words(const ResolvedNetwork& net, int fm, int from_layer) {
  auto keep = retained_pixels(net, fm, from_layer);
  const Shape& s = net.shape(fm);
  if (keep.empty()) return static_cast<std::uint64_t>(s.size());
  const auto count = static_cast<std::uint64_t>(std::count(keep.begin(), keep.end(), 1));
  return count * static_cast<std::uint64_t>(s.n);
}

bool writes_in_place(const ResolvedNetwork& net, int l) {
  const LayerDescriptor& L = net.layer(l);
  if (!L.bypass) return false;
  const int b = *L.bypass;
  if (b == net.input_of(l)) return false;
  return last_reader(net, b) == l;
}

bool live_after(const ResolvedNetwork& net, int fm, int l) {
  if (fm == net.graph.output_fm()) return true;
  return last_reader(net, fm) > l;
}

Liveness analyze_liveness(const ResolvedNetwork& net) {
  Liveness lv;
  LivenessStep load;
  load.layer = -1;
  load.words = static_cast<std::uint64_t>(net.shape(kNetworkInput).size());
  load.resident.push_back({kNetworkInput, load.words});
  lv.steps.push_back(load);
  lv.peak_words = load.words;
  lv.peak_layer = -1;

  std::vector<int> last(static_cast<std::size_t>(net.layer_count()) + 1);
  for (int f = kNetworkInput; f < net.layer_count(); ++f) last[f + 1] = last_reader(net, f);

  for (int l = 0; l < net.layer_count(); ++l) {
    LivenessStep st;
    st.layer = l;
    st.in_place = writes_in_place(net, l);
    for (int f = kNetworkInput; f < l; ++f) {
      if (last[f + 1] < l) continue;  // dead (the final output is never an earlier fm)
      const std::uint64_t w = retained_words(net, f, l);
      if (w == 0) continue;
      st.resident.push_back({f, w});
      st.words += w;
    }
    const std::uint64_t out = static_cast<std::uint64_t>(net.out_shape(l).size());
    if (!st.in_place) st.words += out;
    st.resident.push_back({l, out});
    if (st.words > lv.peak_words) {
      lv.peak_words = st.words;
      lv.peak_layer = l;
    }
    lv.steps.push_back(std::move(st));
  }
  return lv;
}

const char* block_kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::Basic: return "basic";
    case BlockKind::StridedBasic: return "strided-basic";
    case BlockKind::Bottleneck: return "bottleneck";
    case BlockKind::StridedBottleneck: return "strided-bottleneck";
  }
  return "?";
}

namespace {

bool is_conv(const LayerDescriptor& L, int k, int stride) {
  return L.kh == k && L.kw == k && L.stride == stride && L.groups == 1 && L.pad == Pad::Same;
}

// All readers of fm lie inside [first, last].
bool readers_within(const ResolvedNetwork& net, int fm, int first, int last) {
  for (int l : net.conv_readers(fm))
    if (l < first || l > last) return false;
  for (int l : net.bypass_readers(fm))
    if (l < first || l > last) return false;
  return fm != net.graph.output_fm() || fm >= last;
}

std::uint64_t even_words(const Shape& s) {
  return static_cast<std::uint64_t>(s.n) * ((s.h + 1) / 2) * ((s.w + 1) / 2);
}

}  // namespace

std::uint64_t block_closed_form(const ResolvedNetwork& net, const BlockMatch& b) {
  const auto sz = [&](int fm) { return static_cast<std::uint64_t>(net.shape(fm).size()); };
  const int f = b.first_layer;
  const std::uint64_t X = sz(b.input_fm);
  switch (b.kind) {
    case BlockKind::Basic:
      return X + sz(f);
    case BlockKind::StridedBasic: {
      const std::uint64_t A = sz(f), P = sz(f + 1);
      return std::max({X + A, even_words(net.shape(b.input_fm)) + A + P, A + P});
    }
    case BlockKind::Bottleneck:
      return X + sz(f) + sz(f + 1);
    case BlockKind::StridedBottleneck: {
      const std::uint64_t R = sz(f), P = sz(f + 1), Cm = sz(f + 2);
      const std::uint64_t Xe = even_words(net.shape(b.input_fm));
      return std::max({Xe + R, Xe + R + P, R + P + Cm, P + Cm});
    }
  }
  return 0;
}

std::vector<BlockMatch> recognize_blocks(const ResolvedNetwork& net) {
  std::vector<BlockMatch> out;
  const int n = net.layer_count();
  int l = 0;
  while (l < n) {
    std::optional<BlockMatch> m;
    const int X = net.input_of(l);
    auto L = [&](int i) -> const LayerDescriptor& { return net.layer(i); };
    auto no_epi_bypass = [&](int i) { return !L(i).bypass.has_value(); };
    // basic: a(3x3 s1, X) -> b(3x3 s1, a) + X
    if (l + 1 < n && is_conv(L(l), 3, 1) && no_epi_bypass(l) && is_conv(L(l + 1), 3, 1) &&
        net.input_of(l + 1) == l && L(l + 1).bypass == X && readers_within(net, l, l, l + 1) &&
        readers_within(net, X, l, l + 1)) {
      m = BlockMatch{BlockKind::Basic, l, l + 1, X, 0};
    }
    // strided basic: a(3x3 s2, X), p(1x1 s2, X), b(3x3 s1, a) + p
    if (!m && l + 2 < n && is_conv(L(l), 3, 2) && no_epi_bypass(l) && is_conv(L(l + 1), 1, 2) &&
        net.input_of(l + 1) == X && no_epi_bypass(l + 1) && is_conv(L(l + 2), 3, 1) &&
        net.input_of(l + 2) == l && L(l + 2).bypass == l + 1 && readers_within(net, l, l, l + 2) &&
        readers_within(net, l + 1, l, l + 2) && readers_within(net, X, l, l + 2)) {
      m = BlockMatch{BlockKind::StridedBasic, l, l + 2, X, 0};
    }
    // bottleneck: r(1x1 s1, X), c(3x3 s1, r), e(1x1 s1, c) + X
    if (!m && l + 2 < n && is_conv(L(l), 1, 1) && no_epi_bypass(l) && is_conv(L(l + 1), 3, 1) &&
        net.input_of(l + 1) == l && no_epi_bypass(l + 1) && is_conv(L(l + 2), 1, 1) &&
        net.input_of(l + 2) == l + 1 && L(l + 2).bypass == X && readers_within(net, l, l, l + 2) &&
        readers_within(net, l + 1, l, l + 2) && readers_within(net, X, l, l + 2)) {
      m = BlockMatch{BlockKind::Bottleneck, l, l + 2, X, 0};
    }
    // strided bottleneck: r(1x1 s2, X), p(1x1 s2, X), c(3x3 s1, r), e(1x1 s1, c) + p
    if (!m && l + 3 < n && is_conv(L(l), 1, 2) && no_epi_bypass(l) && is_conv(L(l + 1), 1, 2) &&
        net.input_of(l + 1) == X && no_epi_bypass(l + 1) && is_conv(L(l + 2), 3, 1) &&
        net.input_of(l + 2) == l && no_epi_bypass(l + 2) && is_conv(L(l + 3), 1, 1) &&
        net.input_of(l + 3) == l + 2 && L(l + 3).bypass == l + 1 && readers_within(net, l, l, l + 3) &&
        readers_within(net, l + 1, l, l + 3) && readers_within(net, l + 2, l, l + 3) &&
        readers_within(net, X, l, l + 3)) {
      m = BlockMatch{BlockKind::StridedBottleneck, l, l + 3, X, 0};
    }
    if (m) {
      m->closed_form_words = block_closed_form(net, *m);
      out.push_back(*m);
      l = m->last_layer + 1;
    } else {
      ++l;
    }
  }
  return out;
}

WclResult wcl_words(const ResolvedNetwork& net) {
  const Liveness lv = analyze_liveness(net);
  const auto blocks = recognize_blocks(net);
  std::vector<int> block_of(static_cast<std::size_t>(net.layer_count()), -1);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    for (int l = blocks[b].first_layer; l <= blocks[b].last_layer; ++l) block_of[l] = static_cast<int>(b);

  WclResult best;
  best.words = lv.steps[0].words;
  best.layer = -1;
  best.source = "load";
  auto consider = [&](std::uint64_t w, int layer, const std::string& src) {
    if (w > best.words) {
      best.words = w;
      best.layer = layer;
      best.input_fm = layer >= 0 ? net.input_of(layer) : kNetworkInput;
      best.source = src;
    }
  };
  for (int l = 0; l < net.layer_count(); ++l)
    if (block_of[l] < 0) consider(lv.steps[l + 1].words, l, "layer");

  for (const auto& b : blocks) {
    // Feature maps resident from outside the block are added on top of the closed form.
    std::uint64_t outside = 0;
    int peak_layer = b.first_layer;
    std::uint64_t peak_words = 0;
    for (int l = b.first_layer; l <= b.last_layer; ++l) {
      std::uint64_t o = 0;
      for (auto [fm, w] : lv.steps[l + 1].resident)
        if (fm != b.input_fm && (fm < b.first_layer || fm > b.last_layer)) o += w;
      outside = std::max(outside, o);
      if (lv.steps[l + 1].words > peak_words) {
        peak_words = lv.steps[l + 1].words;
        peak_layer = l;
      }
    }
    consider(b.closed_form_words + outside, peak_layer, block_kind_name(b.kind));
  }
  return best;
}

namespace {

// Largest kernel among conv readers of layer l's output; own kernel if unread.
std::pair<int, int> next_kernel(const ResolvedNetwork& net, int l) {
  int kh = 0, kw = 0;
  for (int r : net.conv_readers(l)) {
    kh = std::max(kh, net.layer(r).kh);
    kw = std::max(kw, net.layer(r).kw);
  }
  if (net.conv_readers(l).empty()) return {net.layer(l).kh, net.layer(l).kw};
  return {kh, kw};
}

}  // namespace

std::uint64_t border_words_at(const ResolvedNetwork& net, int l) {
  const Shape& in = net.in_shape(l);
  const Shape& out = net.out_shape(l);
  const LayerDescriptor& L = net.layer(l);
  auto [nkh, nkw] = next_kernel(net, l);
  const std::uint64_t top_bottom = 2ull * (static_cast<std::uint64_t>(in.n) * in.w * (L.kh / 2) +
                                           static_cast<std::uint64_t>(out.n) * out.w * (nkh / 2));
  const std::uint64_t left_right = 2ull * (static_cast<std::uint64_t>(in.n) * in.h * (L.kw / 2) +
                                           static_cast<std::uint64_t>(out.n) * out.h * (nkw / 2));
  return top_bottom + left_right;
}

std::uint64_t corner_words_at(const ResolvedNetwork& net, int l) {
  const LayerDescriptor& L = net.layer(l);
  auto [nkh, nkw] = next_kernel(net, l);
  return 4ull * (static_cast<std::uint64_t>(net.in_shape(l).n) * (L.kh / 2) * (L.kw / 2) +
                 static_cast<std::uint64_t>(net.out_shape(l).n) * (nkh / 2) * (nkw / 2));
}

std::uint64_t border_memory_bits(const ResolvedNetwork& net) {
  std::uint64_t w = 0;
  for (int l = 0; l < net.layer_count(); ++l) w = std::max(w, border_words_at(net, l));
  return 16 * w;
}

std::uint64_t corner_memory_bits(const ResolvedNetwork& net) {
  std::uint64_t w = 0;
  for (int l = 0; l < net.layer_count(); ++l) w = std::max(w, corner_words_at(net, l));
  return 16 * w;
}

SegmentPlan build_segment_plan(const ResolvedNetwork& net) {
  SegmentPlan plan;
  std::vector<int> occupant;  // fm per slot, -2 when free
  std::vector<int> slot_of(static_cast<std::size_t>(net.layer_count()) + 1, -1);
  auto size = [&](int fm) { return static_cast<std::uint64_t>(net.shape(fm).size()); };
  auto place = [&](int fm, int slot) {
    if (slot == static_cast<int>(occupant.size())) {
      occupant.push_back(-2);
      plan.segment_words.push_back(0);
    }
    occupant[slot] = fm;
    slot_of[fm + 1] = slot;
    plan.segment_words[slot] = std::max(plan.segment_words[slot], size(fm));
  };
  place(kNetworkInput, 0);
  plan.input_segment = 0;

  for (int l = 0; l < net.layer_count(); ++l) {
    for (std::size_t s = 0; s < occupant.size(); ++s) {
      const int fm = occupant[s];
      if (fm != -2 && last_reader(net, fm) < l && fm != net.graph.output_fm()) occupant[s] = -2;
    }
    SegmentUse use;
    use.input_segment = slot_of[net.input_of(l) + 1];
    if (net.layer(l).bypass) use.bypass_segment = slot_of[*net.layer(l).bypass + 1];
    use.in_place = writes_in_place(net, l);
    if (use.in_place) {
      place(l, use.bypass_segment);
      use.output_segment = use.bypass_segment;
    } else {
      int slot = static_cast<int>(occupant.size());
      for (std::size_t s = 0; s < occupant.size(); ++s)
        if (occupant[s] == -2) {
          slot = static_cast<int>(s);
          break;
        }
      place(l, slot);
      use.output_segment = slot;
    }
    plan.layers.push_back(use);
  }
  plan.peak_words = analyze_liveness(net).peak_words;
  return plan;
}

SegmentPlan plan_segments(const ResolvedNetwork& net, const ChipConfig& cfg) {
  const Liveness lv = analyze_liveness(net);
  if (lv.peak_words > cfg.fmm_words) {
    std::ostringstream os;
    os << "feature maps need " << lv.peak_words << " words at "
       << (lv.peak_layer < 0 ? std::string("input load") : "layer " + std::to_string(lv.peak_layer)) << "; FMM holds "
       << cfg.fmm_words << " (deficit " << (lv.peak_words - cfg.fmm_words) << " words)";
    throw Error(ErrorCode::DoesNotFit, os.str(), lv.peak_layer < 0 ? Error::kNoLayer : lv.peak_layer);
  }
  return build_segment_plan(net);
}

MemoryReport memory_report(const ResolvedNetwork& net, const ChipConfig& cfg) {
  MemoryReport r;
  r.liveness = analyze_liveness(net);
  r.wcl = wcl_words(net);
  r.wcl_bits = 16 * r.wcl.words;
  r.border_bits = border_memory_bits(net);
  r.corner_bits = corner_memory_bits(net);
  r.border_bits_at_wcl = r.wcl.layer >= 0 ? 16 * border_words_at(net, r.wcl.layer) : 0;
  const std::uint64_t need = std::max(r.wcl.words, r.liveness.peak_words);
  r.fits_fmm = need <= cfg.fmm_words;
  r.deficit_words = static_cast<std::int64_t>(need) - static_cast<std::int64_t>(cfg.fmm_words);
  r.fits_bm = r.border_bits <= cfg.bm_bits;
  r.fits_cm = r.corner_bits <= cfg.cm_bits;
  r.plan = build_segment_plan(net);
  r.blocks = recognize_blocks(net);
  return r;
}

std::string memory_report_json(const ResolvedNetwork& net, const MemoryReport& r) {
  using nlohmann::json;
  json j;
  j["network"] = net.graph.name;
  j["wcl_words"] = r.wcl.words;
  j["wcl_bits"] = r.wcl_bits;
  j["wcl_layer"] = r.wcl.layer;
  j["wcl_input_fm"] = r.wcl.input_fm;
  j["wcl_source"] = r.wcl.source;
  j["liveness_peak_words"] = r.liveness.peak_words;
  j["border_bits"] = r.border_bits;
  j["border_bits_at_wcl"] = r.border_bits_at_wcl;
  j["corner_bits"] = r.corner_bits;
  j["fits"] = {{"fmm", r.fits_fmm}, {"bm", r.fits_bm}, {"cm", r.fits_cm}};
  j["deficit_words"] = r.deficit_words > 0 ? r.deficit_words : 0;
  json segs = json::array();
  for (std::size_t s = 0; s < r.plan.segment_words.size(); ++s)
    segs.push_back({{"segment", "M" + std::to_string(s + 1)}, {"words", r.plan.segment_words[s]}});
  j["segments"] = segs;
  json layers = json::array();
  for (int l = 0; l < net.layer_count(); ++l) {
    const auto& u = r.plan.layers[l];
    json lj = {{"layer", l},
               {"input", "M" + std::to_string(u.input_segment + 1)},
               {"output", "M" + std::to_string(u.output_segment + 1)},
               {"in_place", u.in_place},
               {"resident_words", r.liveness.steps[l + 1].words}};
    lj["bypass"] = u.bypass_segment >= 0 ? json("M" + std::to_string(u.bypass_segment + 1)) : json(nullptr);
    layers.push_back(lj);
  }
  j["layers"] = layers;
  json blocks = json::array();
  for (const auto& b : r.blocks)
    blocks.push_back({{"kind", block_kind_name(b.kind)},
                      {"first_layer", b.first_layer},
                      {"last_layer", b.last_layer},
                      {"closed_form_words", b.closed_form_words}});
  j["blocks"] = blocks;
  return j.dump(2) + "\n";
}

std::string memory_report_table(const ResolvedNetwork& net, const MemoryReport& r) {
  std::ostringstream os;
  os << "network: " << (net.graph.name.empty() ? "(unnamed)" : net.graph.name) << "\n";
  os << std::left << std::setw(7) << "layer" << std::setw(10) << "kernel" << std::setw(16) << "in (n,h,w)"
     << std::setw(16) << "out (n,h,w)" << std::setw(6) << "in" << std::setw(6) << "out" << std::setw(8) << "bypass"
     << "resident words\n";
  auto shape_str = [](const Shape& s) {
    return std::to_string(s.n) + "," + std::to_string(s.h) + "," + std::to_string(s.w);
  };
  for (int l = 0; l < net.layer_count(); ++l) {
    const auto& L = net.layer(l);
    const auto& u = r.plan.layers[l];
    std::string k = std::to_string(L.kh) + "x" + std::to_string(L.kw) + "/" + std::to_string(L.stride);
    std::string byp = u.bypass_segment >= 0 ? "M" + std::to_string(u.bypass_segment + 1) + (u.in_place ? "*" : "")
                                            : "-";
    os << std::setw(7) << l << std::setw(10) << k << std::setw(16) << shape_str(net.in_shape(l)) << std::setw(16)
       << shape_str(net.out_shape(l)) << std::setw(6) << ("M" + std::to_string(u.input_segment + 1)) << std::setw(6)
       << ("M" + std::to_string(u.output_segment + 1)) << std::setw(8) << byp << r.liveness.steps[l + 1].words
       << "\n";
  }
  os << "segments:";
  for (std::size_t s = 0; s < r.plan.segment_words.size(); ++s)
    os << " M" << s + 1 << "=" << r.plan.segment_words[s];
  os << "\n";
  os << "worst-case layer: " << r.wcl.words << " words (" << r.wcl_bits << " bit) at "
     << (r.wcl.layer < 0 ? std::string("input load") : "layer " + std::to_string(r.wcl.layer)) << " [" << r.wcl.source
     << "]\n";
  os << "border memory: " << r.border_bits << " bit (at worst-case layer " << r.border_bits_at_wcl << ")\n";
  os << "corner memory: " << r.corner_bits << " bit\n";
  os << "fits: fmm=" << (r.fits_fmm ? "yes" : "no") << " bm=" << (r.fits_bm ? "yes" : "no")
     << " cm=" << (r.fits_cm ? "yes" : "no");
  if (!r.fits_fmm) os << " (deficit " << r.deficit_words << " words)";
  os << "\n";
  return os.str();
}

}  // namespace fmstream
