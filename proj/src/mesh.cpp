// SPDX-License-Identifier: Apache-2.0
#include "fmstream/mesh.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "fmstream/planner.hpp"
#include "fmstream/serialize.hpp"

namespace fmstream {

namespace {

int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

std::vector<int> even_bounds(int extent, int parts) {
  const int step = (extent + parts - 1) / parts;
  std::vector<int> b(static_cast<std::size_t>(parts) + 1);
  for (int i = 0; i <= parts; ++i) b[i] = std::min(extent, i * step);
  return b;
}

std::vector<int> follow_bounds(const std::vector<int>& in, int k, int stride, int pad, int out_extent) {
  const int off = k / 2 - pad;
  std::vector<int> b(in.size());
  b.front() = 0;
  b.back() = out_extent;
  for (std::size_t i = 1; i + 1 < in.size(); ++i) b[i] = std::clamp(ceil_div(in[i] - off, stride), 0, out_extent);
  for (std::size_t i = 1; i < b.size(); ++i) b[i] = std::max(b[i], b[i - 1]);
  return b;
}

int owner_index(const std::vector<int>& bounds, int v) {
  auto it = std::upper_bound(bounds.begin(), bounds.end(), v);
  return static_cast<int>(it - bounds.begin()) - 1;
}

Direction travel(int from_row, int from_col, int to_row, int to_col) {
  if (to_row > from_row) return Direction::South;
  if (to_row < from_row) return Direction::North;
  return to_col > from_col ? Direction::East : Direction::West;
}

}  // namespace

MeshConfig parse_mesh(const std::string& text) {
  MeshConfig m;
  const auto x = text.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument("");
    std::size_t used = 0;
    m.rows = std::stoi(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("");
    const std::string rest = text.substr(x + 1);
    m.cols = std::stoi(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "mesh must look like 2x2, got '" + text + "'");
  }
  if (m.rows < 1 || m.cols < 1 || m.rows > 64 || m.cols > 64)
    throw Error(ErrorCode::InvalidArgument, "mesh dimensions must be between 1 and 64");
  return m;
}

const char* chip_type_name(ChipType t) {
  switch (t) {
    case ChipType::Single: return "Single";
    case ChipType::NW: return "NW";
    case ChipType::N: return "N";
    case ChipType::NE: return "NE";
    case ChipType::W: return "W";
    case ChipType::Center: return "Center";
    case ChipType::E: return "E";
    case ChipType::SW: return "SW";
    case ChipType::S: return "S";
    case ChipType::SE: return "SE";
    case ChipType::RowWest: return "RowWest";
    case ChipType::RowCenter: return "RowCenter";
    case ChipType::RowEast: return "RowEast";
    case ChipType::ColNorth: return "ColNorth";
    case ChipType::ColCenter: return "ColCenter";
    case ChipType::ColSouth: return "ColSouth";
  }
  return "?";
}

ChipType assign_chip_type(int row, int col, int rows, int cols) {
  if (row < 0 || col < 0 || row >= rows || col >= cols)
    throw Error(ErrorCode::InvalidArgument, "chip position outside the mesh");
  if (rows == 1 && cols == 1) return ChipType::Single;
  if (rows == 1) return col == 0 ? ChipType::RowWest : col == cols - 1 ? ChipType::RowEast : ChipType::RowCenter;
  if (cols == 1) return row == 0 ? ChipType::ColNorth : row == rows - 1 ? ChipType::ColSouth : ChipType::ColCenter;
  const int v = row == 0 ? 0 : row == rows - 1 ? 2 : 1;
  const int h = col == 0 ? 0 : col == cols - 1 ? 2 : 1;
  static constexpr ChipType grid[3][3] = {{ChipType::NW, ChipType::N, ChipType::NE},
                                          {ChipType::W, ChipType::Center, ChipType::E},
                                          {ChipType::SW, ChipType::S, ChipType::SE}};
  return grid[v][h];
}

const char* direction_name(Direction d) {
  switch (d) {
    case Direction::North: return "N";
    case Direction::South: return "S";
    case Direction::East: return "E";
    case Direction::West: return "W";
  }
  return "?";
}

const char* read_source_name(ReadSource s) {
  switch (s) {
    case ReadSource::Fmm: return "fmm";
    case ReadSource::BmHorizontal: return "bm-horizontal";
    case ReadSource::BmVertical: return "bm-vertical";
    case ReadSource::Cm: return "cm";
    case ReadSource::ZeroPad: return "zero-pad";
  }
  return "?";
}

// ---------------------------------------------------------------- partition

Rect MeshPartition::slice(int fm, int r, int c) const {
  const auto& rb = row_bounds[fm + 1];
  const auto& cb = col_bounds[fm + 1];
  return Rect{rb[r], rb[r + 1], cb[c], cb[c + 1]};
}

int MeshPartition::row_of(int fm, int y) const { return owner_index(row_bounds[fm + 1], y); }
int MeshPartition::col_of(int fm, int x) const { return owner_index(col_bounds[fm + 1], x); }

MeshPartition partition_mesh(const ResolvedNetwork& net, int rows, int cols) {
  if (rows < 1 || cols < 1) throw Error(ErrorCode::InvalidArgument, "mesh dimensions must be positive");
  MeshPartition p;
  p.rows = rows;
  p.cols = cols;
  const Shape& in = net.shape(kNetworkInput);
  p.row_bounds.push_back(even_bounds(in.h, rows));
  p.col_bounds.push_back(even_bounds(in.w, cols));
  for (int l = 0; l < net.layer_count(); ++l) {
    const LayerDescriptor& L = net.layer(l);
    const int src = net.input_of(l) + 1;
    const Shape& o = net.out_shape(l);
    p.row_bounds.push_back(follow_bounds(p.row_bounds[src], L.kh, L.stride, L.pad_h(), o.h));
    p.col_bounds.push_back(follow_bounds(p.col_bounds[src], L.kw, L.stride, L.pad_w(), o.w));
    if (L.bypass) {
      const int b = *L.bypass + 1;
      if (p.row_bounds[b] != p.row_bounds.back() || p.col_bounds[b] != p.col_bounds.back())
        throw Error(ErrorCode::ShapeMismatch,
                    "bypass source " + std::to_string(*L.bypass) + " is split differently across chips", l);
    }
  }
  return p;
}

// ---------------------------------------------------------------- tiling

TiledInput tile_input(const FeatureMap& fm, int rows, int cols) {
  if (rows < 1 || cols < 1) throw Error(ErrorCode::InvalidArgument, "mesh dimensions must be positive");
  TiledInput t;
  t.original = fm.shape;
  t.rows = rows;
  t.cols = cols;
  const int sh = (fm.shape.h + rows - 1) / rows, sw = (fm.shape.w + cols - 1) / cols;
  t.padded = Shape{fm.shape.n, sh * rows, sw * cols};
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      FeatureMap s(Shape{fm.shape.n, sh, sw});
      for (int ch = 0; ch < fm.shape.n; ++ch)
        for (int y = 0; y < sh; ++y)
          for (int x = 0; x < sw; ++x) {
            const int gy = r * sh + y, gx = c * sw + x;
            if (gy < fm.shape.h && gx < fm.shape.w) s.at(ch, y, x) = fm.at(ch, gy, gx);
          }
      t.slices.push_back(std::move(s));
    }
  return t;
}

FeatureMap reassemble(const TiledInput& t) {
  if (t.slices.size() != static_cast<std::size_t>(t.rows) * t.cols)
    throw Error(ErrorCode::ShapeMismatch, "slice count does not match the mesh");
  FeatureMap out(t.original);
  const int sh = t.padded.h / t.rows, sw = t.padded.w / t.cols;
  for (int r = 0; r < t.rows; ++r)
    for (int c = 0; c < t.cols; ++c) {
      const FeatureMap& s = t.slices[static_cast<std::size_t>(r) * t.cols + c];
      if (!(s.shape == Shape{t.padded.n, sh, sw})) throw Error(ErrorCode::ShapeMismatch, "slice shape mismatch");
      for (int ch = 0; ch < s.shape.n; ++ch)
        for (int y = 0; y < sh; ++y)
          for (int x = 0; x < sw; ++x) {
            const int gy = r * sh + y, gx = c * sw + x;
            if (gy < t.original.h && gx < t.original.w) out.at(ch, gy, gx) = s.at(ch, y, x);
          }
    }
  return out;
}

// ---------------------------------------------------------------- halo

ReadSource resolve_read(const MeshPartition& p, int fm, int r, int c, int y, int x, int h, int w) {
  if (y < 0 || y >= h || x < 0 || x >= w) return ReadSource::ZeroPad;
  const int dr = p.row_of(fm, y) - r, dc = p.col_of(fm, x) - c;
  if (dr == 0 && dc == 0) return ReadSource::Fmm;
  if (dr < -1 || dr > 1 || dc < -1 || dc > 1) {
    std::ostringstream os;
    os << "chip (" << r << "," << c << ") needs pixel (" << y << "," << x << ") of feature map " << fm
       << " from a non-adjacent chip; slices are too small for this mesh";
    throw Error(ErrorCode::SliceTooSmall, os.str(), fm);
  }
  if (dc == 0) return ReadSource::BmVertical;
  if (dr == 0) return ReadSource::BmHorizontal;
  return ReadSource::Cm;
}

std::vector<std::pair<int, int>> halo_need(const ResolvedNetwork& net, const MeshPartition& p, int fm, int r,
                                           int c) {
  const Shape& s = net.shape(fm);
  const Rect own = p.slice(fm, r, c);
  std::vector<std::pair<int, int>> out;
  for (int l : net.conv_readers(fm)) {
    const LayerDescriptor& L = net.layer(l);
    const Rect O = p.slice(l, r, c);
    if (O.empty()) continue;
    std::vector<int> rows, cols;
    for (int o = O.y0; o < O.y1; ++o)
      for (int d = 0; d < L.kh; ++d) rows.push_back(L.stride * o - L.pad_h() + d);
    for (int o = O.x0; o < O.x1; ++o)
      for (int d = 0; d < L.kw; ++d) cols.push_back(L.stride * o - L.pad_w() + d);
    std::sort(rows.begin(), rows.end());
    rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    for (int y : rows) {
      if (y < 0 || y >= s.h) continue;
      const bool row_in = y >= own.y0 && y < own.y1;
      for (int x : cols) {
        if (x < 0 || x >= s.w) continue;
        // Own rows only contribute their off-slice columns.
        if (row_in && x >= own.x0 && x < own.x1) continue;
        out.emplace_back(y, x);
      }
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<BorderMessage> exchange_messages(const ResolvedNetwork& net, const MeshPartition& p, int fm,
                                             const std::function<Half(int, int, int, int, int)>& value) {
  const Shape& s = net.shape(fm);
  struct Hop {
    bool forward = false;
    bool transit = false;
  };
  // (sender, receiver, y, x) -> first-hop flags; relays kept separately.
  std::map<std::tuple<int, int, int, int>, Hop> direct;
  std::vector<std::tuple<int, int, int, int>> relays;  // (via, receiver, y, x)
  const int cols = p.cols;
  for (int r = 0; r < p.rows; ++r)
    for (int c = 0; c < p.cols; ++c) {
      const int me = r * cols + c;
      for (auto [y, x] : halo_need(net, p, fm, r, c)) {
        const ReadSource src = resolve_read(p, fm, r, c, y, x, s.h, s.w);
        const int orow = p.row_of(fm, y), ocol = p.col_of(fm, x);
        const int owner = orow * cols + ocol;
        if (src != ReadSource::Cm) {
          direct[{owner, me, y, x}].transit = false;  // keeps a forward flag set by a corner
          continue;
        }
        // Diagonal: vertical hop to the chip in the receiver's row, then a relay.
        const int via = r * cols + ocol;
        auto [it, inserted] = direct.try_emplace({owner, via, y, x}, Hop{true, true});
        it->second.forward = true;
        relays.emplace_back(via, me, y, x);
      }
    }
  std::vector<BorderMessage> first, second;
  for (const auto& [key, hop] : direct) {
    const auto [from, to, y, x] = key;
    const int fr = from / cols, fc = from % cols, tr = to / cols, tc = to % cols;
    const Rect own = p.slice(fm, fr, fc);
    for (int ch = 0; ch < s.n; ++ch) {
      BorderMessage m;
      m.fm = fm;
      m.from_row = fr;
      m.from_col = fc;
      m.to_row = tr;
      m.to_col = tc;
      m.direction = travel(fr, fc, tr, tc);
      m.channel = ch;
      m.owner_row = fr;
      m.owner_col = fc;
      m.y = y - own.y0;
      m.x = x - own.x0;
      m.payload = value(fr, fc, ch, y, x);
      m.corner_forward = hop.forward;
      m.transit_only = hop.transit;
      first.push_back(m);
    }
  }
  std::sort(relays.begin(), relays.end());
  for (const auto& [via, to, y, x] : relays) {
    const int fr = via / cols, fc = via % cols, tr = to / cols, tc = to % cols;
    const int orow = p.row_of(fm, y), ocol = p.col_of(fm, x);
    const Rect owner_slice = p.slice(fm, orow, ocol);
    for (int ch = 0; ch < s.n; ++ch) {
      BorderMessage m;
      m.fm = fm;
      m.from_row = fr;
      m.from_col = fc;
      m.to_row = tr;
      m.to_col = tc;
      m.direction = travel(fr, fc, tr, tc);
      m.channel = ch;
      m.owner_row = orow;
      m.owner_col = ocol;
      m.y = y - owner_slice.y0;
      m.x = x - owner_slice.x0;
      m.payload = value(orow, ocol, ch, y, x);
      m.relay = true;
      second.push_back(m);
    }
  }
  auto order = [](const BorderMessage& a, const BorderMessage& b) {
    return std::make_tuple(a.from_row, a.from_col, static_cast<int>(a.direction), a.channel, a.y, a.x) <
           std::make_tuple(b.from_row, b.from_col, static_cast<int>(b.direction), b.channel, b.y, b.x);
  };
  std::stable_sort(first.begin(), first.end(), order);
  std::stable_sort(second.begin(), second.end(), order);
  first.insert(first.end(), second.begin(), second.end());
  return first;
}

// ---------------------------------------------------------------- mesh run

namespace {

std::uint64_t halo_key(int fm, int c, int y, int x) {
  return (static_cast<std::uint64_t>(fm + 1) << 48) | (static_cast<std::uint64_t>(c) << 32) |
         (static_cast<std::uint64_t>(y) << 16) | static_cast<std::uint64_t>(x);
}

class HaloStore {
 public:
  struct Entry {
    Half value;
    std::uint32_t address = 0;
    bool read = false;
  };

  bool insert(std::uint64_t key, Half v) {
    std::uint32_t addr;
    if (!free_.empty()) {
      addr = free_.back();
      free_.pop_back();
    } else {
      addr = next_++;
    }
    auto [it, ok] = map_.try_emplace(key, Entry{v, addr, false});
    if (!ok) {
      free_.push_back(addr);
      return false;
    }
    return true;
  }
  Entry* find(std::uint64_t key) {
    auto it = map_.find(key);
    return it == map_.end() ? nullptr : &it->second;
  }
  // Drops every entry of fm; returns the number that were never read.
  std::uint64_t release(int fm) {
    std::uint64_t unread = 0;
    for (auto it = map_.begin(); it != map_.end();) {
      if (static_cast<int>(it->first >> 48) - 1 == fm) {
        if (!it->second.read) ++unread;
        free_.push_back(it->second.address);
        it = map_.erase(it);
      } else {
        ++it;
      }
    }
    return unread;
  }
  std::uint64_t size() const { return map_.size(); }

 private:
  std::unordered_map<std::uint64_t, Entry> map_;
  std::vector<std::uint32_t> free_;
  std::uint32_t next_ = 0;
};

class ChipHalo final : public HaloSource {
 public:
  ChipHalo(const ResolvedNetwork& net, const MeshPartition& p, int r, int c) : net_(net), p_(p), r_(r), c_(c) {}

  Half read_halo(int fm, int ch, int y, int x, AccessKind* kind, std::uint64_t* address) override {
    const Shape& s = net_.shape(fm);
    const ReadSource src = resolve_read(p_, fm, r_, c_, y, x, s.h, s.w);
    HaloStore* store = nullptr;
    std::uint64_t base = 0;
    switch (src) {
      case ReadSource::BmVertical: store = &vertical; break;
      case ReadSource::BmHorizontal:
        store = &horizontal;
        base = std::uint64_t{1} << 32;  // second physical block
        break;
      case ReadSource::Cm: store = &corner; break;
      default: throw Error(ErrorCode::Internal, "halo read of a local pixel", fm);
    }
    HaloStore::Entry* e = store->find(halo_key(fm, ch, y, x));
    if (!e) {
      std::ostringstream os;
      os << "chip (" << r_ << "," << c_ << ") never received pixel (" << ch << "," << y << "," << x
         << ") of feature map " << fm;
      throw Error(src == ReadSource::Cm ? ErrorCode::CmMiss : ErrorCode::BmMiss, os.str(), fm);
    }
    e->read = true;
    if (kind) *kind = src == ReadSource::Cm ? AccessKind::CmRead : AccessKind::BmRead;
    if (address) *address = base + e->address;
    return e->value;
  }

  HaloStore vertical, horizontal, corner;

 private:
  const ResolvedNetwork& net_;
  const MeshPartition& p_;
  int r_, c_;
};

}  // namespace

MeshRun run_mesh_network(const ResolvedNetwork& net, const NetworkWeights& weights, const FeatureMap& input,
                         const MeshConfig& mesh, const ChipConfig& cfg, MeshOptions opt) {
  check_weights(net, weights);
  cfg.check();
  if (!(input.shape == net.shape(kNetworkInput)))
    throw Error(ErrorCode::ShapeMismatch, "input feature map shape does not match the network");
  const MeshPartition part = partition_mesh(net, mesh.rows, mesh.cols);
  const WeightStream ws = encode_weight_stream(weights, cfg.C);
  const int chips = mesh.chips();
  const int L = net.layer_count();

  MeshRun run;
  std::vector<std::unique_ptr<Engine>> eng;
  std::vector<std::unique_ptr<ChipHalo>> halo;
  for (int r = 0; r < mesh.rows; ++r)
    for (int c = 0; c < mesh.cols; ++c) {
      std::vector<Rect> owned;
      for (int fm = kNetworkInput; fm < L; ++fm) owned.push_back(part.slice(fm, r, c));
      eng.push_back(std::make_unique<Engine>(net, ws, cfg, opt.engine, owned));
      halo.push_back(std::make_unique<ChipHalo>(net, part, r, c));
      run.chip_types.push_back(assign_chip_type(r, c, mesh.rows, mesh.cols));
      const Rect s = owned.front();
      FeatureMap slice(Shape{input.shape.n, s.h(), s.w()});
      for (int ch = 0; ch < input.shape.n; ++ch)
        for (int y = s.y0; y < s.y1; ++y)
          for (int x = s.x0; x < s.x1; ++x) slice.at(ch, y - s.y0, x - s.x0) = input.at(ch, y, x);
      eng.back()->load_input(slice);
    }

  std::vector<int> last_conv(static_cast<std::size_t>(L) + 1, -2);
  for (int fm = kNetworkInput; fm < L; ++fm) {
    auto rd = net.conv_readers(fm);
    if (!rd.empty()) last_conv[fm + 1] = rd.back();
  }
  const std::uint64_t cap_ns = mesh.link_buffer_ns ? mesh.link_buffer_ns : static_cast<std::uint64_t>(cfg.N) * cfg.C;
  const std::uint64_t cap_ew = mesh.link_buffer_ew ? mesh.link_buffer_ew : static_cast<std::uint64_t>(cfg.M) * cfg.C;

  auto exchange = [&](int fm) {
    if (chips == 1 || net.conv_readers(fm).empty()) return;
    auto value = [&](int r, int c, int ch, int y, int x) { return eng[r * mesh.cols + c]->read_pixel(fm, ch, y, x); };
    const auto msgs = exchange_messages(net, part, fm, value);
    std::map<std::pair<int, int>, std::uint64_t> per_edge;
    std::map<std::tuple<int, int, int, int, int>, std::uint64_t> waves;  // (sender, dir, tile, py, px)
    std::map<std::tuple<int, int, int, int, int>, int> pending;  // corner forwards awaiting a relay
    for (const BorderMessage& m : msgs) {
      const int from = m.from_row * mesh.cols + m.from_col, to = m.to_row * mesh.cols + m.to_col;
      ++per_edge[{from, to}];
      ++run.messages;
      const Rect os = part.slice(fm, m.owner_row, m.owner_col);
      const int gy = m.y + os.y0, gx = m.x + os.x0;
      if (m.corner_forward) ++pending[{to, m.channel, gy, gx, 0}];
      if (m.relay) {
        ++run.corner_relays;
        auto it = pending.find({from, m.channel, gy, gx, 0});
        if (it == pending.end() || it->second == 0)
          throw Error(ErrorCode::UnresolvedFlag, "relay of a corner pixel that was never forwarded", fm);
        if (m.from_col != m.owner_col || m.from_row == m.owner_row)
          throw Error(ErrorCode::Internal, "corner pixel did not take a vertical first hop", fm);
      }
      if (!m.transit_only) {
        ChipHalo& h = *halo[to];
        HaloStore& store = m.relay ? h.corner
                           : (m.direction == Direction::North || m.direction == Direction::South) ? h.vertical
                                                                                                   : h.horizontal;
        if (!store.insert(halo_key(fm, m.channel, gy, gx), m.payload))
          throw Error(ErrorCode::Internal, "halo pixel delivered twice", fm);
      }
      if (!m.relay && fm >= 0) {
        const int th = std::max(1, (os.h() + cfg.M - 1) / cfg.M), tw = std::max(1, (os.w() + cfg.N - 1) / cfg.N);
        ++waves[{from, static_cast<int>(m.direction), m.channel / cfg.C, m.y % th, m.x % tw}];
      }
    }
    // Each forward is consumed by exactly as many relays as chips it feeds.
    for (const BorderMessage& m : msgs)
      if (m.relay) {
        const Rect os = part.slice(fm, m.owner_row, m.owner_col);
        --pending[{m.from_row * mesh.cols + m.from_col, m.channel, m.y + os.y0, m.x + os.x0, 0}];
      }
    for (const auto& [k, n] : pending)
      if (n > 0) throw Error(ErrorCode::UnresolvedFlag, "corner pixel forwarded but never relayed", fm);
    for (const auto& [k, n] : waves) {
      const Direction d = static_cast<Direction>(std::get<1>(k));
      const std::uint64_t cap = (d == Direction::North || d == Direction::South) ? cap_ns : cap_ew;
      run.max_wave_pixels = std::max(run.max_wave_pixels, n);
      if (opt.check_buffers && n > cap) {
        std::ostringstream os;
        os << "link buffer overflow: " << n << " pixels in one wave towards " << direction_name(d) << " (capacity "
           << cap << ")";
        throw Error(ErrorCode::BufferOverflow, os.str(), fm);
      }
    }
    for (const auto& [edge, n] : per_edge) {
      TrafficRow t;
      t.fm = fm;
      t.from_row = edge.first / mesh.cols;
      t.from_col = edge.first % mesh.cols;
      t.to_row = edge.second / mesh.cols;
      t.to_col = edge.second % mesh.cols;
      t.pixels = n;
      run.halo_payload_bits += t.payload_bits();
      run.traffic.push_back(t);
    }
    for (int i = 0; i < chips; ++i) {
      const std::uint64_t bm = 16 * (halo[i]->vertical.size() + halo[i]->horizontal.size());
      const std::uint64_t cm = 16 * halo[i]->corner.size();
      run.bm_peak_bits = std::max(run.bm_peak_bits, bm);
      run.cm_peak_bits = std::max(run.cm_peak_bits, cm);
      if (opt.check_buffers && bm > cfg.bm_bits)
        throw Error(ErrorCode::BufferOverflow,
                    "border memory overflow: " + std::to_string(bm) + " of " + std::to_string(cfg.bm_bits) + " bits",
                    fm);
      if (opt.check_buffers && cm > cfg.cm_bits)
        throw Error(ErrorCode::BufferOverflow,
                    "corner memory overflow: " + std::to_string(cm) + " of " + std::to_string(cfg.cm_bits) + " bits",
                    fm);
    }
  };

  auto release = [&](int l) {
    for (int fm = kNetworkInput; fm < l; ++fm) {
      if (last_conv[fm + 1] != l) continue;
      for (auto& h : halo) {
        const std::uint64_t unread = h->vertical.release(fm) + h->horizontal.release(fm) + h->corner.release(fm);
        if (unread)
          throw Error(ErrorCode::UnresolvedFlag,
                      std::to_string(unread) + " halo pixels of feature map " + std::to_string(fm) + " never read", l);
      }
    }
  };

  exchange(kNetworkInput);
  run.chip_cycles.assign(static_cast<std::size_t>(chips), 0);
  for (int l = 0; l < L; ++l) {
    std::uint64_t slowest = 0;
    for (int i = 0; i < chips; ++i) {
      const std::uint64_t before = eng[i]->cycles();
      eng[i]->run_layer(l, halo[i].get());
      slowest = std::max(slowest, eng[i]->cycles() - before);
    }
    run.latency_cycles += slowest;
    exchange(l);
    release(l);
  }

  const int out_fm = net.graph.output_fm();
  run.output = FeatureMap(net.shape(out_fm));
  for (int r = 0; r < mesh.rows; ++r)
    for (int c = 0; c < mesh.cols; ++c) {
      Engine& e = *eng[r * mesh.cols + c];
      run.chip_cycles[r * mesh.cols + c] = e.cycles();
      const Rect s = part.slice(out_fm, r, c);
      if (out_fm == kNetworkInput) continue;
      const FeatureMap slice = e.read_slice(out_fm);
      for (int ch = 0; ch < slice.shape.n; ++ch)
        for (int y = 0; y < s.h(); ++y)
          for (int x = 0; x < s.w(); ++x) run.output.at(ch, s.y0 + y, s.x0 + x) = slice.at(ch, y, x);
    }
  if (out_fm == kNetworkInput) run.output = input;
  return run;
}

std::string traffic_csv(const std::vector<TrafficRow>& rows) {
  std::ostringstream os;
  os << "layer,edge,pixels,payload_bits,wire_bits\n";
  for (const auto& t : rows) {
    if (t.fm == kNetworkInput)
      os << "input";
    else
      os << t.fm;
    os << ",r" << t.from_row << "c" << t.from_col << "->r" << t.to_row << "c" << t.to_col << "," << t.pixels << ","
       << t.payload_bits() << "," << t.wire_bits() << "\n";
  }
  return os.str();
}

}  // namespace fmstream
