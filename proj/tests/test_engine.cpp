// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "fmstream/builtin.hpp"
#include "fmstream/engine.hpp"
#include "fmstream/oracle.hpp"
#include "fmstream/perf.hpp"
#include "fmstream/planner.hpp"
#include "support.hpp"

using namespace fmstream;

namespace {

// 2 -> 2 channels, 4x4, 3x3 same. Channel 0 holds y*4+x, channel 1 is all
// ones. Output 0 adds both channels, output 1 subtracts channel 1.
struct HandCase {
  FeatureMap in{Shape{2, 4, 4}};
  LayerDescriptor L;
  LayerWeights W;

  HandCase() {
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        in.at(0, y, x) = to_half(static_cast<double>(y * 4 + x));
        in.at(1, y, x) = to_half(1.0);
      }
    L.kh = L.kw = 3;
    L.n_out = 2;
    W.kernel = {2, 2, 3, 3, {}};
    W.kernel.bits.resize(W.kernel.bit_count());
    for (int dy = 0; dy < 3; ++dy)
      for (int dx = 0; dx < 3; ++dx) {
        W.kernel.bits[W.kernel.index(0, 0, dy, dx)] = 1;
        W.kernel.bits[W.kernel.index(0, 1, dy, dx)] = 1;
        W.kernel.bits[W.kernel.index(1, 0, dy, dx)] = 1;
        W.kernel.bits[W.kernel.index(1, 1, dy, dx)] = 0;
      }
  }
};

const double kHandOut0[4][4] = {{14, 24, 30, 22}, {33, 54, 63, 45}, {57, 90, 99, 69}, {46, 72, 78, 54}};
const double kHandOut1[4][4] = {{6, 12, 18, 14}, {21, 36, 45, 33}, {45, 72, 81, 57}, {38, 60, 66, 46}};

void check_hand(const FeatureMap& out) {
  REQUIRE(out.shape == Shape{2, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(to_double(out.at(0, y, x)) == kHandOut0[y][x]);
      CHECK(to_double(out.at(1, y, x)) == kHandOut1[y][x]);
    }
}

}  // namespace

TEST_CASE("hand-computed 3x3 convolution") {
  HandCase h;
  check_hand(oracle::conv_reference(h.in, h.L, h.W, nullptr, oracle::Mode::Binary16Scheduled));
  check_hand(oracle::conv_reference(h.in, h.L, h.W, nullptr, oracle::Mode::Float64));
  for (int m : {1, 2, 3, 7})
    for (int c : {1, 2, 16}) {
      ChipConfig cfg;
      cfg.M = cfg.N = m;
      cfg.C = c;
      check_hand(run_conv_layer(h.in, h.L, h.W, nullptr, cfg));
    }
}

TEST_CASE("epilogue: scale, bypass, bias, relu") {
  HandCase h;
  h.L.scale = h.L.bias = h.L.relu = true;
  h.L.bypass = kNetworkInput;
  h.W.scale = {to_half(0.5), to_half(-1.0)};
  h.W.bias = {to_half(-10.0), to_half(1.0)};
  FeatureMap byp(Shape{2, 4, 4});
  for (auto& v : byp.data) v = to_half(2.0);
  const FeatureMap out = run_conv_layer(h.in, h.L, h.W, &byp, ChipConfig{});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      CHECK(to_double(out.at(0, y, x)) == std::max(0.0, kHandOut0[y][x] * 0.5 + 2 - 10));
      CHECK(out.at(1, y, x).bits == 0);  // -out1 + 2 + 1 < 0 everywhere
    }
  CHECK(out == oracle::conv_reference(h.in, h.L, h.W, &byp, oracle::Mode::Binary16Scheduled));
}

TEST_CASE("engine matches the scheduled oracle on random layers") {
  std::mt19937_64 rng(1234);
  for (int i = 0; i < 300; ++i) {
    const auto lc = testing::random_layer_case(rng);
    const FeatureMap* byp = lc.bypass ? &*lc.bypass : nullptr;
    const int chunk = oracle::chunk_channels_for(lc.cfg.wbuf_bits, lc.layer.kh, lc.layer.kw, lc.cfg.C);
    const FeatureMap e = run_conv_layer(lc.input, lc.layer, lc.weights, byp, lc.cfg);
    const FeatureMap r =
        oracle::conv_reference(lc.input, lc.layer, lc.weights, byp, oracle::Mode::Binary16Scheduled, chunk);
    REQUIRE_MESSAGE(e == r, lc.describe());
  }
}

TEST_CASE("weight buffer chunking changes rounding but not exact sums") {
  HandCase h;
  ChipConfig cfg;
  cfg.C = 2;
  cfg.wbuf_bits = 3 * 3 * 2;  // one input channel per chunk
  LayerRunStats st;
  check_hand(run_conv_layer(h.in, h.L, h.W, nullptr, cfg, {}, &st));
  CHECK(st.chunks == 2);
  cfg.wbuf_bits = 3 * 3 * 2 - 1;
  CHECK_THROWS_AS(run_conv_layer(h.in, h.L, h.W, nullptr, cfg), Error);
}

TEST_CASE("identity network passes the input through") {
  NetworkGraph g;
  g.input = {3, 5, 6};
  LayerDescriptor L;
  L.kh = L.kw = 1;
  L.n_out = 3;
  L.groups = 3;
  g.layers.push_back(L);
  const ResolvedNetwork net(g);
  NetworkWeights w(1);
  w[0].kernel = {3, 1, 1, 1, {1, 1, 1}};
  std::mt19937_64 rng(2);
  const FeatureMap in = testing::random_values(g.input, rng, true);
  CHECK(run_network(net, w, in, ChipConfig{}).output == in);
}

TEST_CASE("whole network: engine, oracle, planner and perf model agree") {
  const ResolvedNetwork net(resnet34_body(32));
  const NetworkWeights w = random_weights(net, 1);
  const FeatureMap in = random_feature_map(net.shape(kNetworkInput), 2);
  const ChipConfig cfg = ideal_chip(net);
  const NetworkRun run = run_network(net, w, in, cfg);
  const auto ref = oracle::network_reference(net, w, in, oracle::Mode::Binary16Scheduled, cfg.wbuf_bits, cfg.C);
  CHECK(run.output == ref.back());
  CHECK(run.fmm_peak_words == analyze_liveness(net).peak_words);
  CHECK(run.cycles == network_cycles(net, cfg).total_cycles);
  REQUIRE(run.layers.size() == static_cast<std::size_t>(net.layer_count()));
  for (int l = 0; l < net.layer_count(); ++l) {
    const auto& L = net.layer(l);
    CHECK(run.layers[l].conv_cycles == conv_cycles(L, net.in_shape(l), net.out_shape(l), cfg));
    CHECK(run.layers[l].epilogue_cycles == elementwise_cycles(L, net.in_shape(l), net.out_shape(l), cfg));
  }
}

TEST_CASE("capacity and argument errors") {
  const ResolvedNetwork net(resnet34_body(64));
  const NetworkWeights w = random_weights(net, 1);
  const FeatureMap in = random_feature_map(net.shape(kNetworkInput), 2);
  ChipConfig small;
  small.fmm_words = 1000;
  try {
    run_network(net, w, in, small);
    FAIL("expected does-not-fit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DoesNotFit);
  }
  FeatureMap nan = in;
  nan.data[5] = half_bits(0x7E00);
  CHECK_THROWS_AS(run_network(net, w, nan, ideal_chip(net)), Error);
  NetworkWeights short_w = w;
  short_w.pop_back();
  CHECK_THROWS_AS(run_network(net, short_w, in, ideal_chip(net)), Error);
}

TEST_CASE("trace records accesses and honours the cap") {
  NetworkGraph g;
  g.input = {4, 6, 6};
  LayerDescriptor L;
  L.n_out = 4;
  L.scale = true;
  g.layers = {L, L};
  const ResolvedNetwork net(g);
  const auto w = random_weights(net, 3);
  const auto in = random_feature_map(g.input, 4);
  EngineOptions opt;
  opt.trace = true;
  const NetworkRun full = run_network(net, w, in, ChipConfig{}, opt);
  REQUIRE(!full.trace.empty());
  CHECK_FALSE(full.trace_truncated);
  bool reads = false, writes = false, wbuf = false;
  for (std::size_t i = 1; i < full.trace.size(); ++i) CHECK(full.trace[i - 1].cycle <= full.trace[i].cycle);
  for (const auto& e : full.trace) {
    reads |= e.kind == AccessKind::FmmRead;
    writes |= e.kind == AccessKind::FmmWrite;
    wbuf |= e.kind == AccessKind::WbufRead;
  }
  CHECK(reads);
  CHECK(writes);
  CHECK(wbuf);
  opt.max_trace_events = 10;
  const NetworkRun capped = run_network(net, w, in, ChipConfig{}, opt);
  CHECK(capped.trace.size() == 10);
  CHECK(capped.trace_truncated);
  CHECK(capped.output == full.output);
  CHECK(trace_to_jsonl(capped.trace).find("\"kind\"") != std::string::npos);
}
