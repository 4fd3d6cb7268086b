// SPDX-License-Identifier: Apache-2.0
#include "fmstream/network.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace fmstream {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::UnsupportedKernel: return "unsupported-kernel";
    case ErrorCode::CyclicBypass: return "cyclic-bypass";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::Format: return "format";
    case ErrorCode::Io: return "io";
    case ErrorCode::DoesNotFit: return "does-not-fit";
    case ErrorCode::SegmentOverflow: return "segment-overflow";
    case ErrorCode::WbufOverflow: return "wbuf-overflow";
    case ErrorCode::SliceTooSmall: return "slice-too-small";
    case ErrorCode::BufferOverflow: return "buffer-overflow";
    case ErrorCode::BypassSourceMissing: return "bypass-source-missing";
    case ErrorCode::UnresolvedFlag: return "unresolved-flag";
    case ErrorCode::BmMiss: return "bm-miss";
    case ErrorCode::CmMiss: return "cm-miss";
    case ErrorCode::VerificationMismatch: return "verification-mismatch";
    case ErrorCode::Internal: return "internal";
  }
  return "unknown";
}

ErrorClass error_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch:
    case ErrorCode::UnsupportedKernel:
    case ErrorCode::CyclicBypass:
    case ErrorCode::InvalidArgument:
    case ErrorCode::Format:
    case ErrorCode::Io:
      return ErrorClass::Validation;
    case ErrorCode::DoesNotFit:
    case ErrorCode::SegmentOverflow:
    case ErrorCode::WbufOverflow:
    case ErrorCode::SliceTooSmall:
    case ErrorCode::BufferOverflow:
      return ErrorClass::Capacity;
    case ErrorCode::VerificationMismatch:
      return ErrorClass::Verification;
    default:
      return ErrorClass::Internal;
  }
}

int out_extent(int in, int k, int stride, Pad pad) {
  if (pad == Pad::Same) return (in + stride - 1) / stride;
  if (in < k) return 0;
  return (in - k) / stride + 1;
}

namespace {

std::string layer_msg(int l, const std::string& what) {
  std::ostringstream os;
  os << "layer " << l << ": " << what;
  return os.str();
}

bool fm_ref_ok(int fm, int l) { return fm >= kNetworkInput && fm < l; }

// Collects issues; stops at the first one that makes later shapes meaningless.
std::vector<Shape> infer(const NetworkGraph& net, ValidationReport* report) {
  std::vector<Shape> shapes;
  shapes.push_back(net.input);
  auto fail = [&](ErrorCode code, int l, const std::string& msg) {
    if (report) {
      report->ok = false;
      report->issues.push_back({code, l, msg});
      return;
    }
    throw Error(code, msg, l);
  };
  if (net.input.n < 1 || net.input.h < 1 || net.input.w < 1) {
    fail(ErrorCode::ShapeMismatch, Error::kNoLayer, "network input shape must be positive");
    return shapes;
  }
  if (net.image_stride < 1) fail(ErrorCode::InvalidArgument, Error::kNoLayer, "image_stride must be >= 1");

  for (int l = 0; l < net.layer_count(); ++l) {
    const LayerDescriptor& L = net.layers[l];
    bool fatal = false;
    for (int k : {L.kh, L.kw}) {
      if (k != 1 && k != 3) {
        std::string msg = "kernel " + std::to_string(L.kh) + "x" + std::to_string(L.kw) +
                          " unsupported; only 1x1 and 3x3 convolutions run on-chip";
        if (k > 3) msg += " (large first-layer kernels such as 7x7 must be computed off-chip)";
        fail(ErrorCode::UnsupportedKernel, l, layer_msg(l, msg));
        fatal = true;
        break;
      }
    }
    if (L.stride != 1 && L.stride != 2) {
      fail(ErrorCode::UnsupportedKernel, l, layer_msg(l, "stride must be 1 or 2"));
      fatal = true;
    }
    if (L.n_out < 1) {
      fail(ErrorCode::ShapeMismatch, l, layer_msg(l, "n_out must be >= 1"));
      fatal = true;
    }
    const int in_fm = net.input_of(l);
    if (!fm_ref_ok(in_fm, l)) {
      fail(ErrorCode::CyclicBypass, l, layer_msg(l, "input must reference an earlier feature map"));
      fatal = true;
    }
    if (fatal) break;

    const Shape& in = shapes[in_fm + 1];
    if (L.groups < 1 || in.n % L.groups != 0 || L.n_out % L.groups != 0) {
      fail(ErrorCode::ShapeMismatch, l, layer_msg(l, "n_in and n_out must be divisible by groups"));
      break;
    }
    Shape out{L.n_out, out_extent(in.h, L.kh, L.stride, L.pad), out_extent(in.w, L.kw, L.stride, L.pad)};
    if (out.h < 1 || out.w < 1) {
      fail(ErrorCode::ShapeMismatch, l, layer_msg(l, "input smaller than kernel for pad=none"));
      break;
    }
    if (L.bypass) {
      if (!fm_ref_ok(*L.bypass, l)) {
        fail(ErrorCode::CyclicBypass, l, layer_msg(l, "bypass must reference an earlier feature map"));
        break;
      }
      if (!(shapes[*L.bypass + 1] == out)) {
        fail(ErrorCode::ShapeMismatch, l, layer_msg(l, "bypass source shape differs from output shape"));
      }
    }
    if (!L.scale_values.empty() && static_cast<int>(L.scale_values.size()) != L.n_out)
      fail(ErrorCode::ShapeMismatch, l, layer_msg(l, "scale array length must equal n_out"));
    if (!L.bias_values.empty() && static_cast<int>(L.bias_values.size()) != L.n_out)
      fail(ErrorCode::ShapeMismatch, l, layer_msg(l, "bias array length must equal n_out"));
    for (const auto* v : {&L.scale_values, &L.bias_values})
      for (Half h : *v)
        if (is_nan(h)) fail(ErrorCode::Format, l, layer_msg(l, "NaN in scale/bias values"));
    shapes.push_back(out);
  }
  return shapes;
}

}  // namespace

std::vector<Shape> infer_shapes(const NetworkGraph& net) { return infer(net, nullptr); }

ValidationReport validate_network(const NetworkGraph& net) {
  ValidationReport report;
  infer(net, &report);
  return report;
}

void require_valid(const NetworkGraph& net) {
  ValidationReport r = validate_network(net);
  if (!r.ok) throw Error(r.issues.front().code, r.issues.front().message, r.issues.front().layer);
}

ResolvedNetwork::ResolvedNetwork(NetworkGraph net) : graph(std::move(net)) {
  require_valid(graph);
  shapes = infer_shapes(graph);
}

std::vector<int> ResolvedNetwork::conv_readers(int fm) const {
  std::vector<int> out;
  for (int l = 0; l < layer_count(); ++l)
    if (input_of(l) == fm) out.push_back(l);
  return out;
}

std::vector<int> ResolvedNetwork::bypass_readers(int fm) const {
  std::vector<int> out;
  for (int l = 0; l < layer_count(); ++l)
    if (layer(l).bypass && *layer(l).bypass == fm) out.push_back(l);
  return out;
}

void check_weights(const ResolvedNetwork& net, const NetworkWeights& weights) {
  if (static_cast<int>(weights.size()) != net.layer_count())
    throw Error(ErrorCode::ShapeMismatch, "weight set has " + std::to_string(weights.size()) +
                                              " layers, network has " + std::to_string(net.layer_count()));
  for (int l = 0; l < net.layer_count(); ++l) {
    const LayerDescriptor& L = net.layer(l);
    const LayerWeights& W = weights[l];
    const BinaryKernelSet& k = W.kernel;
    if (k.n_out != L.n_out || k.n_in != net.n_in_per_group(l) || k.kh != L.kh || k.kw != L.kw ||
        k.bits.size() != k.bit_count())
      throw Error(ErrorCode::ShapeMismatch, layer_msg(l, "kernel set does not match layer geometry"), l);
    if (W.scale.size() != (L.scale ? static_cast<std::size_t>(L.n_out) : 0u) ||
        W.bias.size() != (L.bias ? static_cast<std::size_t>(L.n_out) : 0u))
      throw Error(ErrorCode::ShapeMismatch, layer_msg(l, "scale/bias arrays do not match layer flags"), l);
  }
}

void ChipConfig::check() const {
  if (M < 1 || N < 1 || C < 1 || fmm_words < 1 || wbuf_bits < 1 || bm_bits < 1 || cm_bits < 1)
    throw Error(ErrorCode::InvalidArgument, "chip configuration values must all be >= 1");
}

std::uint64_t peak_throughput(const ChipConfig& cfg) {
  return 2ull * static_cast<std::uint64_t>(cfg.M) * cfg.N * cfg.C;
}

OpCounts count_ops(const ResolvedNetwork& net) {
  OpCounts oc;
  for (int l = 0; l < net.layer_count(); ++l) {
    const LayerDescriptor& L = net.layer(l);
    const Shape& out = net.out_shape(l);
    const std::uint64_t pixels = static_cast<std::uint64_t>(out.size());
    LayerOps ops;
    ops.conv = 2ull * net.n_in_per_group(l) * L.kh * L.kw * pixels;
    ops.scale = L.scale ? pixels : 0;
    ops.bias = L.bias ? pixels : 0;
    ops.bypass = L.bypass ? pixels : 0;
    oc.total.conv += ops.conv;
    oc.total.scale += ops.scale;
    oc.total.bias += ops.bias;
    oc.total.bypass += ops.bypass;
    oc.layers.push_back(ops);
  }
  return oc;
}

NetworkWeights random_weights(const ResolvedNetwork& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkWeights out;
  for (int l = 0; l < net.layer_count(); ++l) {
    const LayerDescriptor& L = net.layer(l);
    LayerWeights W;
    W.kernel.n_out = L.n_out;
    W.kernel.n_in = net.n_in_per_group(l);
    W.kernel.kh = L.kh;
    W.kernel.kw = L.kw;
    W.kernel.bits.resize(W.kernel.bit_count());
    std::uint64_t pool = 0;
    int left = 0;
    for (auto& b : W.kernel.bits) {
      if (left == 0) {
        pool = rng();
        left = 64;
      }
      b = static_cast<std::uint8_t>(pool & 1);
      pool >>= 1;
      --left;
    }
    // Scale ~ 1/sqrt(fan_in) keeps activations in range through deep stacks.
    const double fan_in = static_cast<double>(W.kernel.n_in) * L.kh * L.kw;
    std::uniform_real_distribution<double> scale_dist(0.5, 1.5);
    std::uniform_real_distribution<double> bias_dist(-0.1, 0.1);
    if (L.scale) {
      if (!L.scale_values.empty()) {
        W.scale = L.scale_values;
      } else {
        for (int c = 0; c < L.n_out; ++c) W.scale.push_back(to_half(scale_dist(rng) / std::sqrt(fan_in)));
      }
    }
    if (L.bias) {
      if (!L.bias_values.empty()) {
        W.bias = L.bias_values;
      } else {
        for (int c = 0; c < L.n_out; ++c) W.bias.push_back(to_half(bias_dist(rng)));
      }
    }
    out.push_back(std::move(W));
  }
  return out;
}

FeatureMap random_feature_map(Shape shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  FeatureMap fm(shape);
  for (auto& v : fm.data) v = to_half(dist(rng));
  return fm;
}

}  // namespace fmstream
