// SPDX-License-Identifier: Apache-2.0
#include "fmstream/serialize.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace fmstream {

using nlohmann::json;

namespace {

[[noreturn]] void format_error(const std::string& msg, int layer = Error::kNoLayer) {
  throw Error(ErrorCode::Format, msg, layer);
}

std::vector<Half> half_array(const json& j, int layer, const char* what) {
  std::vector<Half> out;
  for (const auto& v : j) {
    if (!v.is_number()) format_error(std::string(what) + " entries must be numbers", layer);
    Half h = to_half(v.get<double>());
    out.push_back(h);
  }
  return out;
}

void parse_epilogue_flag(const json& j, const char* key, bool& flag, std::vector<Half>& values, int layer) {
  if (!j.contains(key) || j[key].is_null()) return;
  const json& v = j[key];
  if (v.is_boolean()) {
    flag = v.get<bool>();
  } else if (v.is_array()) {
    flag = true;
    values = half_array(v, layer, key);
  } else {
    format_error(std::string("'") + key + "' must be a boolean or an array", layer);
  }
}

std::optional<int> optional_index(const json& j, const char* key, int layer) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  if (!j[key].is_number_integer()) format_error(std::string("'") + key + "' must be an integer or null", layer);
  return j[key].get<int>();
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) format_error("unexpected end of file");
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    need(n);
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

std::uint64_t layer_stream_bits(int n_out, int n_in, int kh, int kw, int C) {
  const std::uint64_t tiles = (static_cast<std::uint64_t>(n_out) + C - 1) / C;
  return tiles * kh * kw * n_in * C;
}

}  // namespace

NetworkGraph network_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    format_error(std::string("network JSON parse error: ") + e.what());
  }
  if (!j.is_object()) format_error("network JSON must be an object");
  NetworkGraph net;
  try {
    net.name = j.value("name", std::string{});
    net.notes = j.value("notes", std::string{});
    net.image_stride = j.value("image_stride", 1);
    if (!j.contains("input") || !j["input"].is_array() || j["input"].size() != 3)
      format_error("'input' must be [n, h, w]");
    net.input = Shape{j["input"][0].get<int>(), j["input"][1].get<int>(), j["input"][2].get<int>()};
    if (j.contains("layers")) {
      if (!j["layers"].is_array()) format_error("'layers' must be an array");
      int l = 0;
      for (const auto& lj : j["layers"]) {
        LayerDescriptor L;
        if (!lj.contains("kernel")) format_error("layer missing 'kernel'", l);
        if (lj["kernel"].is_array()) {
          if (lj["kernel"].size() != 2) format_error("'kernel' must be [kh, kw]", l);
          L.kh = lj["kernel"][0].get<int>();
          L.kw = lj["kernel"][1].get<int>();
        } else {
          L.kh = L.kw = lj["kernel"].get<int>();
        }
        if (!lj.contains("n_out")) format_error("layer missing 'n_out'", l);
        L.n_out = lj["n_out"].get<int>();
        L.stride = lj.value("stride", 1);
        L.groups = lj.value("groups", 1);
        const std::string pad = lj.value("pad", std::string("same"));
        if (pad == "same") {
          L.pad = Pad::Same;
        } else if (pad == "none") {
          L.pad = Pad::None;
        } else {
          format_error("'pad' must be \"same\" or \"none\"", l);
        }
        parse_epilogue_flag(lj, "scale", L.scale, L.scale_values, l);
        parse_epilogue_flag(lj, "bias", L.bias, L.bias_values, l);
        L.bypass = optional_index(lj, "bypass", l);
        L.input = optional_index(lj, "input", l);
        L.relu = lj.value("relu", false);
        net.layers.push_back(std::move(L));
        ++l;
      }
    }
  } catch (const json::exception& e) {
    format_error(std::string("network JSON field error: ") + e.what());
  }
  return net;
}

std::string network_to_json(const NetworkGraph& net) {
  json j = json::object();
  if (!net.name.empty()) j["name"] = net.name;
  if (!net.notes.empty()) j["notes"] = net.notes;
  if (net.image_stride != 1) j["image_stride"] = net.image_stride;
  j["input"] = {net.input.n, net.input.h, net.input.w};
  json layers = json::array();
  for (const auto& L : net.layers) {
    json lj = json::object();
    lj["kernel"] = {L.kh, L.kw};
    lj["n_out"] = L.n_out;
    lj["stride"] = L.stride;
    lj["groups"] = L.groups;
    lj["pad"] = L.pad == Pad::Same ? "same" : "none";
    auto epi = [](bool flag, const std::vector<Half>& vals) {
      if (vals.empty()) return json(flag);
      json a = json::array();
      for (Half h : vals) a.push_back(to_double(h));
      return a;
    };
    lj["scale"] = epi(L.scale, L.scale_values);
    lj["bias"] = epi(L.bias, L.bias_values);
    lj["bypass"] = L.bypass ? json(*L.bypass) : json(nullptr);
    if (L.input) lj["input"] = *L.input;
    lj["relu"] = L.relu;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j.dump(2) + "\n";
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

NetworkGraph load_network(const std::string& path) {
  auto bytes = read_file(path);
  return network_from_json(std::string(bytes.begin(), bytes.end()));
}

void save_network(const NetworkGraph& net, const std::string& path) { write_text(path, network_to_json(net)); }

WeightStream encode_weight_stream(const NetworkWeights& weights, int C) {
  if (C < 1) throw Error(ErrorCode::InvalidArgument, "tile channel count must be >= 1");
  WeightStream ws;
  ws.tile_channels = C;
  std::uint64_t total = 0;
  for (const auto& W : weights) {
    const auto& k = W.kernel;
    LayerStream ls{total, layer_stream_bits(k.n_out, k.n_in, k.kh, k.kw, C)};
    ws.layers.push_back(ls);
    ws.scale.push_back(W.scale);
    ws.bias.push_back(W.bias);
    total += (ls.bit_count + 7) / 8 * 8;
  }
  ws.bytes.assign(total / 8, 0);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& k = weights[l].kernel;
    std::uint64_t pos = ws.layers[l].bit_offset;
    const int tiles = (k.n_out + C - 1) / C;
    for (int t = 0; t < tiles; ++t)
      for (int dy = 0; dy < k.kh; ++dy)
        for (int dx = 0; dx < k.kw; ++dx)
          for (int ci = 0; ci < k.n_in; ++ci)
            for (int lane = 0; lane < C; ++lane, ++pos) {
              const int co = t * C + lane;
              if (co < k.n_out && k.positive(co, ci, dy, dx))
                ws.bytes[pos >> 3] |= static_cast<std::uint8_t>(1u << (pos & 7));
            }
  }
  return ws;
}

BinaryKernelSet decode_kernel(const WeightStream& ws, int layer, int n_out, int n_in, int kh, int kw) {
  BinaryKernelSet k{n_out, n_in, kh, kw, {}};
  k.bits.resize(k.bit_count());
  const int C = ws.tile_channels;
  std::uint64_t pos = ws.layers.at(layer).bit_offset;
  const int tiles = (n_out + C - 1) / C;
  for (int t = 0; t < tiles; ++t)
    for (int dy = 0; dy < kh; ++dy)
      for (int dx = 0; dx < kw; ++dx)
        for (int ci = 0; ci < n_in; ++ci)
          for (int lane = 0; lane < C; ++lane, ++pos) {
            const int co = t * C + lane;
            if (co < n_out) k.bits[k.index(co, ci, dy, dx)] = ws.bit(pos) ? 1 : 0;
          }
  return k;
}

std::vector<std::uint8_t> weights_to_bytes(const NetworkWeights& weights, int C) {
  WeightStream ws = encode_weight_stream(weights, C);
  std::vector<std::uint8_t> b{'H', 'B', 'W', 'N'};
  put_u16(b, 1);
  put_u16(b, static_cast<std::uint16_t>(C));
  put_u32(b, static_cast<std::uint32_t>(weights.size()));
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& W = weights[l];
    put_u32(b, static_cast<std::uint32_t>(W.kernel.n_out));
    put_u32(b, static_cast<std::uint32_t>(W.kernel.n_in));
    b.push_back(static_cast<std::uint8_t>(W.kernel.kh));
    b.push_back(static_cast<std::uint8_t>(W.kernel.kw));
    b.push_back(static_cast<std::uint8_t>((W.scale.empty() ? 0 : 1) | (W.bias.empty() ? 0 : 2)));
    b.push_back(0);
    for (Half h : W.scale) put_u16(b, h.bits);
    for (Half h : W.bias) put_u16(b, h.bits);
    const auto& ls = ws.layers[l];
    const std::size_t first = ls.bit_offset / 8;
    const std::size_t n = (ls.bit_count + 7) / 8;
    b.insert(b.end(), ws.bytes.begin() + static_cast<std::ptrdiff_t>(first),
             ws.bytes.begin() + static_cast<std::ptrdiff_t>(first + n));
  }
  return b;
}

NetworkWeights weights_from_bytes(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4);
  if (std::memcmp(magic, "HBWN", 4) != 0) format_error("weight file: bad magic");
  if (r.u16() != 1) format_error("weight file: unsupported version");
  const int C = r.u16();
  if (C < 1) format_error("weight file: tile channel count must be >= 1");
  const std::uint32_t count = r.u32();
  NetworkWeights out;
  for (std::uint32_t l = 0; l < count; ++l) {
    LayerWeights W;
    const std::uint32_t n_out = r.u32();
    const std::uint32_t n_in = r.u32();
    const int kh = r.u8();
    const int kw = r.u8();
    const int flags = r.u8();
    r.u8();
    if (n_out == 0 || n_in == 0 || n_out > (1u << 20) || n_in > (1u << 20) || kh < 1 || kw < 1)
      format_error("weight file: bad layer header", static_cast<int>(l));
    auto read_halves = [&](std::vector<Half>& dst) {
      for (std::uint32_t c = 0; c < n_out; ++c) {
        Half h{r.u16()};
        if (is_nan(h)) format_error("weight file: NaN in scale/bias", static_cast<int>(l));
        dst.push_back(h);
      }
    };
    if (flags & 1) read_halves(W.scale);
    if (flags & 2) read_halves(W.bias);
    const std::uint64_t nbits = layer_stream_bits(static_cast<int>(n_out), static_cast<int>(n_in), kh, kw, C);
    const std::size_t nbytes = (nbits + 7) / 8;
    const std::uint8_t* p = r.take(nbytes);
    WeightStream one;
    one.tile_channels = C;
    one.bytes.assign(p, p + nbytes);
    one.layers.push_back({0, nbits});
    W.kernel = decode_kernel(one, 0, static_cast<int>(n_out), static_cast<int>(n_in), kh, kw);
    out.push_back(std::move(W));
  }
  if (!r.done()) format_error("weight file: trailing bytes");
  return out;
}

void save_weights(const NetworkWeights& weights, const std::string& path, int C) {
  write_file(path, weights_to_bytes(weights, C));
}

NetworkWeights load_weights(const std::string& path) { return weights_from_bytes(read_file(path)); }

std::vector<std::uint8_t> feature_map_to_bytes(const FeatureMap& fm) {
  std::vector<std::uint8_t> b;
  b.reserve(12 + fm.data.size() * 2);
  put_u32(b, static_cast<std::uint32_t>(fm.shape.n));
  put_u32(b, static_cast<std::uint32_t>(fm.shape.h));
  put_u32(b, static_cast<std::uint32_t>(fm.shape.w));
  for (Half h : fm.data) put_u16(b, h.bits);
  return b;
}

FeatureMap feature_map_from_bytes(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::uint32_t n = r.u32(), h = r.u32(), w = r.u32();
  if (n == 0 || h == 0 || w == 0 || n > (1u << 20) || h > (1u << 20) || w > (1u << 20))
    format_error("feature map file: dimensions must be positive");
  const std::uint64_t count = std::uint64_t{n} * h * w;
  if (bytes.size() != 12 + 2 * count) format_error("feature map file: size does not match header");
  FeatureMap fm(Shape{static_cast<int>(n), static_cast<int>(h), static_cast<int>(w)});
  for (auto& v : fm.data) {
    v = Half{r.u16()};
    if (is_nan(v)) format_error("feature map file: NaN values are rejected");
  }
  return fm;
}

void save_feature_map(const FeatureMap& fm, const std::string& path) { write_file(path, feature_map_to_bytes(fm)); }

FeatureMap load_feature_map(const std::string& path) { return feature_map_from_bytes(read_file(path)); }

}  // namespace fmstream
