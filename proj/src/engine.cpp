// SPDX-License-Identifier: Apache-2.0
#include "fmstream/engine.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "fmstream/planner.hpp"

#if defined(__F16C__) && defined(__AVX2__)
#include <immintrin.h>
#define FMSTREAM_F16C 1
#endif

namespace fmstream {

const char* access_kind_name(AccessKind k) {
  switch (k) {
    case AccessKind::FmmRead: return "fmm-read";
    case AccessKind::FmmWrite: return "fmm-write";
    case AccessKind::WbufRead: return "wbuf-read";
    case AccessKind::StreamConsume: return "stream-consume";
    case AccessKind::BmRead: return "bm-read";
    case AccessKind::CmRead: return "cm-read";
  }
  return "?";
}

std::string trace_to_jsonl(const std::vector<AccessEvent>& trace) {
  std::ostringstream os;
  for (const auto& e : trace)
    os << "{\"cycle\":" << e.cycle << ",\"kind\":\"" << access_kind_name(e.kind) << "\",\"address\":" << e.address
       << ",\"tile\":[" << e.tile_row << "," << e.tile_col << "]}\n";
  return os.str();
}

// ---------------------------------------------------------------- FMM

FeatureMapMemory::FeatureMapMemory(std::uint64_t words)
    : words_(static_cast<std::size_t>(words)), owner_(static_cast<std::size_t>(words), kFree) {}

std::vector<std::uint32_t> FeatureMapMemory::allocate(std::uint64_t n, int owner, int layer) {
  if (used_ + n > words_.size()) {
    std::ostringstream os;
    os << "FMM overflow: need " << n << " words, " << (words_.size() - used_) << " of " << words_.size()
       << " free";
    throw Error(ErrorCode::SegmentOverflow, os.str(), layer);
  }
  std::vector<std::uint32_t> out;
  out.reserve(static_cast<std::size_t>(n));
  std::uint64_t a = scan_from_;
  while (out.size() < n) {
    if (owner_[a] == kFree) {
      owner_[a] = owner;
      out.push_back(static_cast<std::uint32_t>(a));
    }
    ++a;
  }
  used_ += n;
  peak_ = std::max(peak_, used_);
  // Everything below the first free word stays allocated until a release.
  while (scan_from_ < owner_.size() && owner_[scan_from_] != kFree) ++scan_from_;
  return out;
}

void FeatureMapMemory::release(std::uint32_t addr, int owner) {
  if (owner_[addr] != owner)
    throw Error(ErrorCode::Internal, "FMM release of word " + std::to_string(addr) + " not owned by fm " +
                                         std::to_string(owner));
  owner_[addr] = kFree;
  --used_;
  if (addr < scan_from_) scan_from_ = addr;
}

Half FeatureMapMemory::read(std::uint32_t addr, int owner) const {
  if (owner_[addr] != owner)
    throw Error(ErrorCode::Internal, "FMM read of word " + std::to_string(addr) + " owned by " +
                                         std::to_string(owner_[addr]) + ", expected " + std::to_string(owner));
  return words_[addr];
}

void FeatureMapMemory::write(std::uint32_t addr, Half v, int owner) {
  if (owner_[addr] != owner)
    throw Error(ErrorCode::Internal, "FMM write of word " + std::to_string(addr) + " owned by " +
                                         std::to_string(owner_[addr]) + ", expected " + std::to_string(owner));
  words_[addr] = v;
}

void FeatureMapMemory::reassign(std::uint32_t addr, int from, int to) {
  if (owner_[addr] != from) throw Error(ErrorCode::Internal, "FMM reassign of foreign word");
  owner_[addr] = to;
}

// ---------------------------------------------------------------- vector helpers

namespace {

inline std::uint16_t canon_scalar(std::uint16_t h) {
  return ((h & 0x7FFF) > 0x7C00) ? kCanonicalNaN : h;
}

#ifdef FMSTREAM_F16C
inline __m128i canon(__m128i h) {
  const __m128i a = _mm_and_si128(h, _mm_set1_epi16(0x7FFF));
  const __m128i nan = _mm_cmpgt_epi16(a, _mm_set1_epi16(0x7C00));
  return _mm_blendv_epi8(h, _mm_set1_epi16(static_cast<short>(kCanonicalNaN)), nan);
}
inline __m256 load_h(const std::uint16_t* p) {
  return _mm256_cvtph_ps(_mm_loadu_si128(reinterpret_cast<const __m128i*>(p)));
}
inline void store_h(std::uint16_t* p, __m256 v) {
  _mm_storeu_si128(reinterpret_cast<__m128i*>(p), canon(_mm256_cvtps_ph(v, _MM_FROUND_TO_NEAREST_INT)));
}
#endif

inline std::uint16_t round_sum(std::uint16_t a, float b) {
  return canon_scalar(to_half(to_double(Half{a}) + static_cast<double>(b)).bits);
}

// acc[i] = round(acc[i] +/- x[i])
void mac_row(std::uint16_t* acc, const float* x, bool positive, std::size_t n) {
  std::size_t i = 0;
#ifdef FMSTREAM_F16C
  const __m256 flip = positive ? _mm256_setzero_ps() : _mm256_set1_ps(-0.0f);
  for (; i + 8 <= n; i += 8) store_h(acc + i, _mm256_add_ps(load_h(acc + i), _mm256_xor_ps(_mm256_loadu_ps(x + i), flip)));
#endif
  for (; i < n; ++i) acc[i] = round_sum(acc[i], positive ? x[i] : -x[i]);
}

void mul_scalar(std::uint16_t* v, Half s, std::size_t n) {
  std::size_t i = 0;
#ifdef FMSTREAM_F16C
  const __m256 f = _mm256_set1_ps(to_float(s));
  for (; i + 8 <= n; i += 8) store_h(v + i, _mm256_mul_ps(load_h(v + i), f));
#endif
  for (; i < n; ++i) v[i] = canon_scalar(mul(Half{v[i]}, s).bits);
}

void add_scalar(std::uint16_t* v, Half s, std::size_t n) {
  std::size_t i = 0;
#ifdef FMSTREAM_F16C
  const __m256 f = _mm256_set1_ps(to_float(s));
  for (; i + 8 <= n; i += 8) store_h(v + i, _mm256_add_ps(load_h(v + i), f));
#endif
  for (; i < n; ++i) v[i] = canon_scalar(add(Half{v[i]}, s).bits);
}

void add_vec(std::uint16_t* v, const std::uint16_t* b, std::size_t n) {
  std::size_t i = 0;
#ifdef FMSTREAM_F16C
  for (; i + 8 <= n; i += 8) store_h(v + i, _mm256_add_ps(load_h(v + i), load_h(b + i)));
#endif
  for (; i < n; ++i) v[i] = canon_scalar(add(Half{v[i]}, Half{b[i]}).bits);
}

void relu_vec(std::uint16_t* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) v[i] = relu(Half{v[i]}).bits;
}

// ---------------------------------------------------------------- conv kernel

struct PixelAddr {
  AccessKind kind;
  std::uint64_t address;
  bool zero_pad;
};

struct KernelIo {
  std::function<Half(int c, int y, int x)> input;  // inside the global input bounds
  std::function<Half(int co, int y, int x)> bypass;
  std::function<Half(int co, int y, int x)> read_out;
  std::function<void(int co, int y, int x, Half v)> write_out;
  // Trace only.
  std::function<PixelAddr(int c, int y, int x)> input_addr;
  std::function<std::uint64_t(int fm_kind, int co, int y, int x)> out_addr;  // fm_kind 0 out, 1 bypass
};

struct Tracer {
  std::vector<AccessEvent>* events = nullptr;
  std::uint64_t max_events = 0;
  bool* truncated = nullptr;

  bool on() const { return events != nullptr && !*truncated; }
  void emit(std::uint64_t cycle, AccessKind k, std::uint64_t addr, int tr, int tc) {
    if (!on()) return;
    if (events->size() >= max_events) {
      *truncated = true;
      return;
    }
    events->push_back({cycle, k, addr, tr, tc});
  }
};

int chunk_size(const ChipConfig& cfg, const LayerDescriptor& L, int layer) {
  const std::uint64_t per = static_cast<std::uint64_t>(L.kh) * L.kw * cfg.C;
  const std::uint64_t c = cfg.wbuf_bits / per;
  if (c == 0)
    throw Error(ErrorCode::WbufOverflow,
                "weight buffer of " + std::to_string(cfg.wbuf_bits) + " bits cannot hold one input channel", layer);
  return static_cast<int>(std::min<std::uint64_t>(c, 1u << 30));
}


struct KernelParams {
  const LayerDescriptor* L = nullptr;
  int layer = 0;
  Shape in_shape;  // global input shape (zero padding outside)
  Rect out;        // output pixels computed here
  const std::vector<Half>* scale = nullptr;
  const std::vector<Half>* bias = nullptr;
};

LayerRunStats conv_kernel(const KernelParams& kp, const WeightStream& ws, const ChipConfig& cfg, KernelIo& io,
                          Tracer& tr, std::uint64_t& cycle) {
  const LayerDescriptor& L = *kp.L;
  const Rect& O = kp.out;
  const Shape& in_shape = kp.in_shape;
  LayerRunStats st;
  if (O.empty()) return st;
  const int s = L.stride, kh = L.kh, kw = L.kw, taps = kh * kw;
  const int ph = L.pad_h(), pw = L.pad_w();
  const int oh = O.h(), ow = O.w();
  const std::size_t P = static_cast<std::size_t>(oh) * ow;
  const int cin_g = in_shape.n / L.groups;
  const int cout_g = L.n_out / L.groups;
  const int C = cfg.C;
  const int chunk = std::min(cin_g, chunk_size(cfg, L, kp.layer));
  if (ws.tile_channels != C)
    throw Error(ErrorCode::InvalidArgument,
                "weight stream tiled for C=" + std::to_string(ws.tile_channels) + ", chip has C=" + std::to_string(C),
                kp.layer);
  const std::uint64_t base_bit = ws.layers.at(static_cast<std::size_t>(kp.layer)).bit_offset;

  // Input window; only rows/cols some tap touches are fetched.
  const int wy0 = s * O.y0 - ph, wx0 = s * O.x0 - pw;
  const int wh = s * (oh - 1) + kh, ww = s * (ow - 1) + kw;
  std::vector<std::uint8_t> row_tap(static_cast<std::size_t>(wh), 0), col_tap(static_cast<std::size_t>(ww), 0);
  for (int y = 0; y < oh; ++y)
    for (int d = 0; d < kh; ++d) row_tap[s * y + d] = 1;
  for (int x = 0; x < ow; ++x)
    for (int d = 0; d < kw; ++d) col_tap[s * x + d] = 1;
  std::vector<float> window(static_cast<std::size_t>(in_shape.n) * wh * ww, 0.0f);
  for (int c = 0; c < in_shape.n; ++c)
    for (int r = 0; r < wh; ++r) {
      const int gy = wy0 + r;
      if (!row_tap[r] || gy < 0 || gy >= in_shape.h) continue;
      float* row = &window[(static_cast<std::size_t>(c) * wh + r) * ww];
      for (int q = 0; q < ww; ++q) {
        const int gx = wx0 + q;
        if (!col_tap[q] || gx < 0 || gx >= in_shape.w) continue;
        row[q] = to_float(io.input(c, gy, gx));
      }
    }

  const int th = (oh + cfg.M - 1) / cfg.M, tw = (ow + cfg.N - 1) / cfg.N;
  const std::uint64_t slots = static_cast<std::uint64_t>(th) * tw;
  const int tiles = (L.n_out + C - 1) / C;
  st.chunks = (cin_g + chunk - 1) / chunk;
  std::vector<float> planes;
  std::vector<std::uint16_t> acc(P), other(P);

  for (int t = 0; t < tiles; ++t) {
    const int co0 = t * C, co1 = std::min(L.n_out, co0 + C);
    const int lanes = co1 - co0;
    const int g0 = co0 / cout_g, g1 = (co1 - 1) / cout_g;
    const int ng = g1 - g0 + 1;
    for (int c0 = 0; c0 < cin_g; c0 += chunk) {
      const int c1 = std::min(cin_g, c0 + chunk);
      const int len = c1 - c0;
      const bool first = c0 == 0, last = c1 == cin_g;
      const std::uint64_t wbits = static_cast<std::uint64_t>(taps) * len * C;
      if (wbits > cfg.wbuf_bits) throw Error(ErrorCode::WbufOverflow, "weight chunk exceeds buffer", kp.layer);
      st.wbuf_peak_bits = std::max(st.wbuf_peak_bits, wbits);
      auto word_bit = [&](int tap, int ci) {
        return base_bit + ((static_cast<std::uint64_t>(t) * taps + tap) * cin_g + ci) * C;
      };
      const bool has_bypass_stage = first ? static_cast<bool>(io.bypass) : true;
      const int stages = (L.scale ? 1 : 0) + (has_bypass_stage ? 1 : 0) + (last && L.bias ? 1 : 0);

      // Schedule, for cycle accounting and the optional trace.
      const std::uint64_t conv_cycles = slots * taps * len;
      const std::uint64_t epi_cycles = slots * static_cast<std::uint64_t>(stages) * lanes;
      st.conv_cycles += conv_cycles;
      st.epilogue_cycles += epi_cycles;
      if (!tr.on()) {
        cycle += conv_cycles + epi_cycles;
      } else {
        for (int w = 0; w < taps * len; ++w) tr.emit(cycle, AccessKind::StreamConsume, static_cast<std::uint64_t>(w), -1, -1);
        for (int py = 0; py < th; ++py)
          for (int px = 0; px < tw; ++px) {
            for (int dy = 0; dy < kh; ++dy)
              for (int dx = 0; dx < kw; ++dx)
                for (int ci = 0; ci < len; ++ci, ++cycle) {
                  tr.emit(cycle, AccessKind::WbufRead, static_cast<std::uint64_t>((dy * kw + dx) * len + ci), -1, -1);
                  for (int r = 0; r < cfg.M; ++r)
                    for (int q = 0; q < cfg.N; ++q) {
                      const int y = r * th + py, x = q * tw + px;
                      if (y >= oh || x >= ow) continue;
                      const int gy = s * (O.y0 + y) - ph + dy, gx = s * (O.x0 + x) - pw + dx;
                      if (gy < 0 || gy >= in_shape.h || gx < 0 || gx >= in_shape.w) continue;
                      for (int g = g0; g <= g1; ++g) {
                        PixelAddr a = io.input_addr(g * cin_g + c0 + ci, gy, gx);
                        tr.emit(cycle, a.kind, a.address, r, q);
                      }
                    }
                }
            for (int co = co0; co < co1; ++co) {
              for (int k = 0; k < stages; ++k, ++cycle) {
                const bool reads = has_bypass_stage && k == (L.scale ? 1 : 0);
                if (!reads) continue;
                for (int r = 0; r < cfg.M; ++r)
                  for (int q = 0; q < cfg.N; ++q) {
                    const int y = r * th + py, x = q * tw + px;
                    if (y >= oh || x >= ow) continue;
                    tr.emit(cycle, AccessKind::FmmRead, io.out_addr(first ? 1 : 0, co, O.y0 + y, O.x0 + x), r, q);
                  }
              }
              for (int r = 0; r < cfg.M; ++r)
                for (int q = 0; q < cfg.N; ++q) {
                  const int y = r * th + py, x = q * tw + px;
                  if (y >= oh || x >= ow) continue;
                  tr.emit(cycle, AccessKind::FmmWrite, io.out_addr(0, co, O.y0 + y, O.x0 + x), r, q);
                }
            }
          }
      }

      // Planes: [group - g0][tap][ci - c0][pixel]
      planes.assign(static_cast<std::size_t>(ng) * taps * len * P, 0.0f);
      for (int g = 0; g < ng; ++g)
        for (int dy = 0; dy < kh; ++dy)
          for (int dx = 0; dx < kw; ++dx)
            for (int ci = 0; ci < len; ++ci) {
              const int c = (g0 + g) * cin_g + c0 + ci;
              float* dst = &planes[((static_cast<std::size_t>(g) * taps + dy * kw + dx) * len + ci) * P];
              for (int y = 0; y < oh; ++y) {
                const float* src = &window[(static_cast<std::size_t>(c) * wh + s * y + dy) * ww + dx];
                float* d = dst + static_cast<std::size_t>(y) * ow;
                if (s == 1) {
                  std::memcpy(d, src, sizeof(float) * static_cast<std::size_t>(ow));
                } else {
                  for (int x = 0; x < ow; ++x) d[x] = src[s * x];
                }
              }
            }

      for (int co = co0; co < co1; ++co) {
        const int lane = co - co0;
        const int g = co / cout_g - g0;
        std::fill(acc.begin(), acc.end(), std::uint16_t{0});
        for (int tap = 0; tap < taps; ++tap)
          for (int ci = 0; ci < len; ++ci) {
            const bool pos = ws.bit(word_bit(tap, c0 + ci) + static_cast<std::uint64_t>(lane));
            mac_row(acc.data(), &planes[((static_cast<std::size_t>(g) * taps + tap) * len + ci) * P], pos, P);
          }
        if (L.scale) mul_scalar(acc.data(), (*kp.scale)[co], P);
        if (has_bypass_stage) {
          std::size_t i = 0;
          for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x, ++i)
              other[i] = (first ? io.bypass(co, O.y0 + y, O.x0 + x) : io.read_out(co, O.y0 + y, O.x0 + x)).bits;
          add_vec(acc.data(), other.data(), P);
        }
        if (last) {
          if (L.bias) add_scalar(acc.data(), (*kp.bias)[co], P);
          if (L.relu) relu_vec(acc.data(), P);
          for (std::uint16_t v : acc)
            if ((v & 0x7FFF) == 0x7C00) ++st.overflows;
        }
        std::size_t i = 0;
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x, ++i) io.write_out(co, O.y0 + y, O.x0 + x, Half{acc[i]});
      }
    }
  }
  return st;
}

}  // namespace

// ---------------------------------------------------------------- Engine

Engine::Engine(const ResolvedNetwork& net, const WeightStream& stream, const ChipConfig& cfg, EngineOptions opt,
               std::vector<Rect> owned)
    : net_(net), stream_(stream), cfg_(cfg), opt_(opt), owned_(std::move(owned)), fmm_(cfg.fmm_words) {
  cfg_.check();
  const std::size_t n = static_cast<std::size_t>(net.layer_count()) + 1;
  if (owned_.empty()) {
    for (int fm = kNetworkInput; fm < net.layer_count(); ++fm) {
      const Shape& s = net.shape(fm);
      owned_.push_back(Rect{0, s.h, 0, s.w});
    }
  }
  if (owned_.size() != n) throw Error(ErrorCode::InvalidArgument, "slice table does not match the network");
  if (stream.layers.size() != static_cast<std::size_t>(net.layer_count()))
    throw Error(ErrorCode::ShapeMismatch, "weight stream layer count does not match the network");
  fms_.resize(n);
}

std::size_t Engine::slice_index(int fm, int c, int y, int x) const {
  const Rect& r = owned_[fm + 1];
  return (static_cast<std::size_t>(c) * r.h() + (y - r.y0)) * r.w() + (x - r.x0);
}

void Engine::emit(AccessKind k, std::uint64_t addr, int tr, int tc) {
  if (!opt_.trace || trace_truncated_) return;
  if (trace_.size() >= opt_.max_trace_events) {
    trace_truncated_ = true;
    return;
  }
  trace_.push_back({cycle_, k, addr, tr, tc});
}

bool Engine::resident(int fm) const { return fms_[fm + 1].live; }

void Engine::load_input(const FeatureMap& slice) {
  const Rect& r = owned_[0];
  const Shape& s = net_.shape(kNetworkInput);
  if (!(slice.shape == Shape{s.n, r.h(), r.w()}))
    throw Error(ErrorCode::ShapeMismatch, "input slice shape does not match the network input");
  if (input_loaded_) throw Error(ErrorCode::InvalidArgument, "input already loaded");
  Resident& res = fms_[0];
  res.addr = fmm_.allocate(static_cast<std::uint64_t>(slice.data.size()), kNetworkInput, Error::kNoLayer);
  res.live = true;
  for (std::size_t i = 0; i < slice.data.size(); ++i) {
    if (is_nan(slice.data[i])) throw Error(ErrorCode::Format, "NaN in input feature map");
    fmm_.write(res.addr[i], slice.data[i], kNetworkInput);
  }
  input_loaded_ = true;
}

void Engine::free_fm(int fm) {
  Resident& res = fms_[fm + 1];
  if (!res.live) return;
  const Rect& r = owned_[fm + 1];
  const std::size_t pixels = static_cast<std::size_t>(r.h()) * r.w();
  for (std::size_t i = 0; i < res.addr.size(); ++i)
    if (res.kept.empty() || res.kept[i % pixels]) fmm_.release(res.addr[i], fm);
  res = Resident{};
}

void Engine::apply_retention(int l) {
  for (int fm = kNetworkInput; fm < l; ++fm) {
    Resident& res = fms_[fm + 1];
    if (!res.live) continue;
    if (!live_after(net_, fm, l - 1)) {
      free_fm(fm);
      continue;
    }
    auto mask = retained_pixels(net_, fm, l);
    if (mask.empty()) continue;
    const Rect& r = owned_[fm + 1];
    const Shape& s = net_.shape(fm);
    const std::size_t pixels = static_cast<std::size_t>(r.h()) * r.w();
    if (res.kept.empty()) res.kept.assign(pixels, 1);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        const std::size_t p = static_cast<std::size_t>(y - r.y0) * r.w() + (x - r.x0);
        if (!res.kept[p] || mask[static_cast<std::size_t>(y) * s.w + x]) continue;
        res.kept[p] = 0;
        for (int c = 0; c < s.n; ++c) fmm_.release(res.addr[static_cast<std::size_t>(c) * pixels + p], fm);
      }
  }
}

void Engine::run_layer(int l, HaloSource* halo) {
  if (!input_loaded_) throw Error(ErrorCode::InvalidArgument, "input not loaded");
  if (l != next_layer_) throw Error(ErrorCode::InvalidArgument, "layers must run in order", l);
  const LayerDescriptor& L = net_.layer(l);
  apply_retention(l);

  const int in_fm = net_.input_of(l);
  if (!fms_[in_fm + 1].live) throw Error(ErrorCode::Internal, "input feature map not resident", l);
  std::optional<int> byp = L.bypass;
  if (byp && !fms_[*byp + 1].live)
    throw Error(ErrorCode::BypassSourceMissing, "bypass feature map " + std::to_string(*byp) + " not resident", l);

  const Rect& O = owned_[l + 1];
  const bool in_place = writes_in_place(net_, l);
  Resident& out = fms_[l + 1];
  if (in_place) {
    Resident& src = fms_[*byp + 1];
    if (!(owned_[*byp + 1] == O)) throw Error(ErrorCode::ShapeMismatch, "bypass slice differs from output slice", l);
    for (std::uint32_t a : src.addr) fmm_.reassign(a, *byp, l);
    out.addr = std::move(src.addr);
    src = Resident{};
  } else {
    out.addr = fmm_.allocate(static_cast<std::uint64_t>(L.n_out) * O.h() * O.w(), l, l);
  }
  out.live = true;

  const Rect in_rect = owned_[in_fm + 1];
  const Resident& in_res = fms_[in_fm + 1];
  const std::size_t in_pixels = static_cast<std::size_t>(in_rect.h()) * in_rect.w();
  KernelIo io;
  io.input = [&](int c, int y, int x) -> Half {
    if (in_rect.contains(y, x)) {
      const std::size_t i = slice_index(in_fm, c, y, x);
      if (!in_res.kept.empty() && !in_res.kept[i % in_pixels])
        throw Error(ErrorCode::Internal, "read of a released pixel", l);
      return fmm_.read(in_res.addr[i], in_fm);
    }
    if (!halo) throw Error(ErrorCode::Internal, "pixel outside the chip slice without a halo source", l);
    AccessKind k;
    std::uint64_t a;
    return halo->read_halo(in_fm, c, y, x, &k, &a);
  };
  io.input_addr = [&](int c, int y, int x) -> PixelAddr {
    if (in_rect.contains(y, x)) return {AccessKind::FmmRead, in_res.addr[slice_index(in_fm, c, y, x)], false};
    AccessKind k = AccessKind::BmRead;
    std::uint64_t a = 0;
    halo->read_halo(in_fm, c, y, x, &k, &a);
    return {k, a, false};
  };
  if (byp) {
    const int b = *byp;
    io.bypass = [&, b, in_place](int co, int y, int x) -> Half {
      if (in_place) return fmm_.read(out.addr[slice_index(l, co, y, x)], l);
      return fmm_.read(fms_[b + 1].addr[slice_index(b, co, y, x)], b);
    };
  }
  io.read_out = [&](int co, int y, int x) { return fmm_.read(out.addr[slice_index(l, co, y, x)], l); };
  io.write_out = [&](int co, int y, int x, Half v) { fmm_.write(out.addr[slice_index(l, co, y, x)], v, l); };
  io.out_addr = [&, byp, in_place](int kind, int co, int y, int x) -> std::uint64_t {
    if (kind == 1 && byp && !in_place) return fms_[*byp + 1].addr[slice_index(*byp, co, y, x)];
    return out.addr[slice_index(l, co, y, x)];
  };

  KernelParams kp;
  kp.L = &L;
  kp.layer = l;
  kp.in_shape = net_.in_shape(l);
  kp.out = O;
  kp.scale = &stream_.scale.at(static_cast<std::size_t>(l));
  kp.bias = &stream_.bias.at(static_cast<std::size_t>(l));
  if ((L.scale && kp.scale->size() != static_cast<std::size_t>(L.n_out)) ||
      (L.bias && kp.bias->size() != static_cast<std::size_t>(L.n_out)))
    throw Error(ErrorCode::ShapeMismatch, "scale/bias stream does not match the layer", l);
  Tracer tr{opt_.trace ? &trace_ : nullptr, opt_.max_trace_events, &trace_truncated_};
  LayerRunStats st = conv_kernel(kp, stream_, cfg_, io, tr, cycle_);
  st.in_place = in_place;
  wbuf_peak_ = std::max(wbuf_peak_, st.wbuf_peak_bits);
  stream_consumed_ += stream_.layers[static_cast<std::size_t>(l)].bit_count;
  overflows_ += st.overflows;
  stats_.push_back(st);
  ++next_layer_;
}

void Engine::run_all(HaloSource* halo) {
  for (int l = next_layer_; l < net_.layer_count(); ++l) run_layer(l, halo);
}

FeatureMap Engine::read_slice(int fm) const {
  const Resident& res = fms_[fm + 1];
  if (!res.live) throw Error(ErrorCode::Internal, "feature map " + std::to_string(fm) + " not resident");
  if (!res.kept.empty()) throw Error(ErrorCode::Internal, "feature map " + std::to_string(fm) + " partially released");
  const Rect& r = owned_[fm + 1];
  FeatureMap out(Shape{net_.shape(fm).n, r.h(), r.w()});
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = fmm_.read(res.addr[i], fm);
  return out;
}

Half Engine::read_pixel(int fm, int c, int y, int x) const {
  const Resident& res = fms_[fm + 1];
  if (!res.live || !owned_[fm + 1].contains(y, x))
    throw Error(ErrorCode::Internal, "pixel not held by this chip");
  return fmm_.read(res.addr[slice_index(fm, c, y, x)], fm);
}

// ---------------------------------------------------------------- wrappers

ChipConfig ideal_chip(const ResolvedNetwork& net, ChipConfig base) {
  base.fmm_words = std::max<std::uint64_t>(1, analyze_liveness(net).peak_words);
  return base;
}

NetworkRun run_network(const ResolvedNetwork& net, const NetworkWeights& weights, const FeatureMap& input,
                       const ChipConfig& cfg, EngineOptions opt) {
  check_weights(net, weights);
  if (!(input.shape == net.shape(kNetworkInput)))
    throw Error(ErrorCode::ShapeMismatch, "input feature map shape does not match the network");
  plan_segments(net, cfg);
  const WeightStream ws = encode_weight_stream(weights, cfg.C);
  Engine e(net, ws, cfg, opt);
  e.load_input(input);
  e.run_all();
  NetworkRun run;
  run.output = e.read_slice(net.graph.output_fm());
  run.trace = e.trace();
  run.trace_truncated = e.trace_truncated();
  run.cycles = e.cycles();
  run.fmm_peak_words = e.fmm_peak();
  run.overflow_warnings = e.overflow_warnings();
  run.layers = e.layer_stats();
  return run;
}

FeatureMap run_conv_layer(const FeatureMap& in, const LayerDescriptor& layer, const LayerWeights& weights,
                          const FeatureMap* bypass, const ChipConfig& cfg, EngineOptions opt, LayerRunStats* stats) {
  NetworkGraph g;
  g.input = in.shape;
  LayerDescriptor L = layer;
  L.bypass.reset();
  L.input.reset();
  g.layers.push_back(L);
  ResolvedNetwork net(g);
  check_weights(net, {weights});
  const Shape out_shape = net.out_shape(0);
  if (layer.bypass.has_value() != (bypass != nullptr))
    throw Error(ErrorCode::BypassSourceMissing, "bypass flag and bypass feature map disagree", 0);
  if (bypass && !(bypass->shape == out_shape))
    throw Error(ErrorCode::ShapeMismatch, "bypass shape differs from output shape", 0);
  const WeightStream ws = encode_weight_stream({weights}, cfg.C);

  FeatureMap out(out_shape);
  KernelIo io;
  io.input = [&](int c, int y, int x) { return in.at(c, y, x); };
  io.input_addr = [&](int c, int y, int x) {
    return PixelAddr{AccessKind::FmmRead, in.index(c, y, x), false};
  };
  if (bypass) io.bypass = [&](int co, int y, int x) { return bypass->at(co, y, x); };
  io.read_out = [&](int co, int y, int x) { return out.at(co, y, x); };
  io.write_out = [&](int co, int y, int x, Half v) { out.at(co, y, x) = v; };
  io.out_addr = [&](int, int co, int y, int x) -> std::uint64_t {
    return static_cast<std::uint64_t>(in.data.size()) + out.index(co, y, x);
  };
  KernelParams kp;
  kp.L = &L;
  kp.layer = 0;
  kp.in_shape = in.shape;
  kp.out = Rect{0, out_shape.h, 0, out_shape.w};
  kp.scale = &ws.scale[0];
  kp.bias = &ws.bias[0];
  std::vector<AccessEvent> events;
  bool truncated = false;
  Tracer tr{opt.trace ? &events : nullptr, opt.max_trace_events, &truncated};
  std::uint64_t cycle = 0;
  LayerRunStats st = conv_kernel(kp, ws, cfg, io, tr, cycle);
  if (stats) *stats = st;
  return out;
}

}  // namespace fmstream
