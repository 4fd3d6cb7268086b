// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <map>
#include <random>
#include <set>
#include <tuple>

#include "fmstream/builtin.hpp"
#include "fmstream/engine.hpp"
#include "fmstream/mesh.hpp"
#include "fmstream/perf.hpp"
#include "support.hpp"

using namespace fmstream;

namespace {

NetworkGraph two_layer(int n, int h, int w, int k_next = 3) {
  NetworkGraph g;
  g.input = {n, h, w};
  LayerDescriptor a;
  a.n_out = n;
  LayerDescriptor b = a;
  b.kh = b.kw = k_next;
  g.layers = {a, b};
  return g;
}

Half zero(int, int, int, int, int) { return Half{}; }

}  // namespace

TEST_CASE("chip types") {
  CHECK(assign_chip_type(0, 0, 3, 3) == ChipType::NW);
  CHECK(assign_chip_type(0, 1, 3, 3) == ChipType::N);
  CHECK(assign_chip_type(1, 1, 3, 3) == ChipType::Center);
  CHECK(assign_chip_type(2, 2, 3, 3) == ChipType::SE);
  CHECK(assign_chip_type(1, 2, 3, 3) == ChipType::E);
  CHECK(assign_chip_type(0, 0, 1, 1) == ChipType::Single);
  CHECK(assign_chip_type(0, 0, 1, 3) == ChipType::RowWest);
  CHECK(assign_chip_type(2, 0, 3, 1) == ChipType::ColSouth);
  CHECK(std::string(chip_type_name(ChipType::Center)) == "Center");
}

TEST_CASE("mesh parsing") {
  CHECK(parse_mesh("2x3").rows == 2);
  CHECK(parse_mesh("2x3").cols == 3);
  CHECK_THROWS_AS(parse_mesh("0x2"), Error);
  CHECK_THROWS_AS(parse_mesh("2by2"), Error);
}

TEST_CASE("tiling pads and reassembles") {
  std::mt19937_64 rng(1);
  const FeatureMap fm = testing::random_values({16, 15, 15}, rng, false);
  const TiledInput t = tile_input(fm, 2, 2);
  CHECK(t.padded == Shape{16, 16, 16});
  REQUIRE(t.slices.size() == 4);
  for (const auto& s : t.slices) CHECK(s.shape == Shape{16, 8, 8});
  CHECK(t.slices[3].at(0, 7, 7).bits == 0);
  CHECK(reassemble(t) == fm);
  CHECK(reassemble(tile_input(fm, 1, 1)) == fm);
  CHECK(reassemble(tile_input(fm, 3, 2)) == fm);
}

TEST_CASE("read sources") {
  const ResolvedNetwork net(two_layer(4, 24, 24));
  const MeshPartition p = partition_mesh(net, 3, 3);
  const Rect s = p.slice(kNetworkInput, 1, 1);
  CHECK(s == Rect{8, 16, 8, 16});
  CHECK(resolve_read(p, kNetworkInput, 1, 1, 10, 10, 24, 24) == ReadSource::Fmm);
  CHECK(resolve_read(p, kNetworkInput, 1, 1, 7, 10, 24, 24) == ReadSource::BmVertical);
  CHECK(resolve_read(p, kNetworkInput, 1, 1, 10, 16, 24, 24) == ReadSource::BmHorizontal);
  CHECK(resolve_read(p, kNetworkInput, 1, 1, 7, 7, 24, 24) == ReadSource::Cm);
  CHECK(resolve_read(p, kNetworkInput, 0, 0, -1, -1, 24, 24) == ReadSource::ZeroPad);
  CHECK_THROWS_AS(resolve_read(p, kNetworkInput, 0, 0, 20, 0, 24, 24), Error);
}

TEST_CASE("halo exchange on 2x2 chips with 8x8 slices") {
  const ResolvedNetwork net(two_layer(16, 16, 16));
  const MeshPartition p = partition_mesh(net, 2, 2);
  const auto msgs = exchange_messages(net, p, 0, zero);
  std::map<std::pair<int, Direction>, int> first;
  int forwards = 0, relays = 0;
  std::set<std::tuple<int, int, int, int, int>> seen;
  for (const auto& m : msgs) {
    if (m.relay) {
      ++relays;
      CHECK(m.from_col == m.owner_col);  // second hop is horizontal
    } else {
      ++first[{m.from_row * 2 + m.from_col, m.direction}];
    }
    forwards += m.corner_forward;
    // (receiver, channel, global pixel) at most once
    const Rect o = p.slice(0, m.owner_row, m.owner_col);
    CHECK(seen.insert({m.to_row * 2 + m.to_col, m.channel, m.y + o.y0, m.x + o.x0, 0}).second);
  }
  CHECK(first.size() == 8);  // two neighbours per chip
  for (const auto& [k, n] : first) CHECK(n == 8 * 16);
  CHECK(forwards == 4 * 16);
  CHECK(relays == 4 * 16);
  CHECK(msgs.size() == 4 * 2 * 8 * 16 + 4 * 16);
  CHECK(halo_bits_for_fm(net, p, 0) == 16 * (4 * 2 * 8 * 16 + 4 * 16));

  CHECK(exchange_messages(ResolvedNetwork(two_layer(16, 16, 16, 1)), p, 0, zero).empty());
  const ResolvedNetwork net1(two_layer(16, 16, 16));
  CHECK(exchange_messages(net1, partition_mesh(net1, 1, 1), 0, zero).empty());
}

TEST_CASE("messages are sorted and relays follow their first hop") {
  const ResolvedNetwork net(resnet34_body(64));
  const MeshPartition p = partition_mesh(net, 3, 3);
  const auto msgs = exchange_messages(net, p, 2, [](int r, int c, int ch, int y, int x) {
    return to_half(static_cast<double>((r * 7 + c * 5 + ch + y * 3 + x) % 17));
  });
  bool relay_seen = false;
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    if (msgs[i].relay) relay_seen = true;
    if (!msgs[i].relay) CHECK_FALSE(relay_seen);
  }
  CHECK(relay_seen);
}

TEST_CASE("mesh output equals the single chip on random networks") {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 30; ++i) {
    const ResolvedNetwork net(testing::random_network(rng));
    const auto w = random_weights(net, rng());
    const auto in = random_feature_map(net.shape(kNetworkInput), rng());
    const ChipConfig cfg = ideal_chip(net);
    const FeatureMap ref = run_network(net, w, in, cfg).output;
    for (auto [r, c] : {std::pair{1, 2}, std::pair{2, 2}, std::pair{3, 3}, std::pair{2, 1}}) {
      MeshConfig mc;
      mc.rows = r;
      mc.cols = c;
      const MeshRun run = run_mesh_network(net, w, in, mc, cfg);
      REQUIRE(run.output == ref);
      // With an empty slice somewhere a corner pixel may transit a chip that
      // does not read it; the closed form leaves that hop out.
      const MeshPartition p = partition_mesh(net, r, c);
      bool degenerate = false;
      for (int fm = kNetworkInput; fm < net.layer_count(); ++fm)
        for (int y = 0; y < r; ++y)
          for (int x = 0; x < c; ++x) degenerate |= p.slice(fm, y, x).empty();
      if (degenerate)
        CHECK(run.halo_payload_bits >= halo_bits_closed_form(net, r, c));
      else
        CHECK(run.halo_payload_bits == halo_bits_closed_form(net, r, c));
      CHECK(run.chip_types.size() == static_cast<std::size_t>(r * c));
    }
  }
}

TEST_CASE("ResNet-34 on 2x2 chips") {
  const ResolvedNetwork net(resnet34_body(64));
  const auto w = random_weights(net, 1);
  const auto in = random_feature_map(net.shape(kNetworkInput), 2);
  MeshConfig mc;
  mc.rows = mc.cols = 2;
  const MeshRun run = run_mesh_network(net, w, in, mc, ChipConfig{});
  CHECK(run.output == run_network(net, w, in, ideal_chip(net)).output);
  CHECK(run.halo_payload_bits == halo_bits_closed_form(net, 2, 2));
  CHECK(run.bm_peak_bits <= ChipConfig{}.bm_bits);
  CHECK(run.cm_peak_bits <= ChipConfig{}.cm_bits);
  CHECK(run.max_wave_pixels <= 7 * 16);
  const std::string csv = traffic_csv(run.traffic);
  CHECK(csv.rfind("layer,edge,pixels,payload_bits,wire_bits\n", 0) == 0);
  CHECK(csv.find("input,r0c0->r0c1,") != std::string::npos);
}

TEST_CASE("buffer limits are enforced") {
  const ResolvedNetwork net(resnet34_body(64));
  const auto w = random_weights(net, 1);
  const auto in = random_feature_map(net.shape(kNetworkInput), 2);
  MeshConfig mc;
  mc.rows = mc.cols = 2;
  ChipConfig tiny;
  tiny.bm_bits = 1024;
  try {
    run_mesh_network(net, w, in, mc, tiny);
    FAIL("expected buffer-overflow");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BufferOverflow);
  }
  MeshOptions off;
  off.check_buffers = false;
  CHECK_NOTHROW(run_mesh_network(net, w, in, mc, tiny, off));
}
