// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <string>

#include "fmstream.h"

namespace {

struct Str {
  char* p = nullptr;
  ~Str() { fms_string_free(p); }
  std::string s() const { return p ? p : ""; }
};

std::filesystem::path scratch(const char* name) {
  auto d = std::filesystem::temp_directory_path() / "fmstream_capi" / name;
  std::filesystem::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("builtin handles and JSON") {
  fms_network* net = nullptr;
  REQUIRE(fms_network_builtin("resnet34", 0, &net) == FMS_OK);
  int n = 0;
  CHECK(fms_network_layer_count(net, &n) == FMS_OK);
  CHECK(n > 30);
  Str json;
  REQUIRE(fms_network_to_json(net, &json.p) == FMS_OK);
  fms_network* again = nullptr;
  REQUIRE(fms_network_from_json(json.p, &again) == FMS_OK);
  Str json2;
  REQUIRE(fms_network_to_json(again, &json2.p) == FMS_OK);
  CHECK(json.s() == json2.s());
  int ok = 0;
  Str rep;
  CHECK(fms_network_validate(net, &ok, &rep.p) == FMS_OK);
  CHECK(ok == 1);
  fms_network_free(again);
  fms_network_free(net);
}

TEST_CASE("errors carry status, code and layer") {
  fms_network* net = nullptr;
  CHECK(fms_network_builtin("nope", 0, &net) == FMS_ERR_VALIDATION);
  CHECK(std::string(fms_last_error_code()) == "invalid-argument");
  CHECK(net == nullptr);
  CHECK(fms_network_from_json("{", &net) == FMS_ERR_VALIDATION);
  CHECK(fms_network_load("/nonexistent/net.json", &net) == FMS_ERR_VALIDATION);
  const char* bad = R"({"name":"x","input":[4,8,8],"layers":[{"kernel":[5,5],"n_out":4}]})";
  const fms_status s = fms_network_from_json(bad, &net);
  CHECK(s == FMS_ERR_VALIDATION);
  CHECK(std::string(fms_last_error()).size() > 0);
  CHECK(fms_network_layer_count(nullptr, nullptr) == FMS_ERR_VALIDATION);
}

TEST_CASE("plan reports fit and deficit") {
  fms_chip_config cfg;
  fms_chip_config_default(&cfg);
  CHECK(cfg.M == 7);
  CHECK(cfg.fmm_words == 400u * 1024);
  fms_network* r34 = nullptr;
  fms_network* r50 = nullptr;
  REQUIRE(fms_network_builtin("resnet34", 224, &r34) == FMS_OK);
  REQUIRE(fms_network_builtin("resnet50", 224, &r50) == FMS_OK);
  int fits = -1;
  Str j, t;
  CHECK(fms_plan(r34, &cfg, &fits, &j.p, &t.p) == FMS_OK);
  CHECK(fits == 1);
  CHECK(j.s().find("\"wcl_words\": 401408") != std::string::npos);
  Str j2;
  CHECK(fms_plan(r50, &cfg, &fits, &j2.p, nullptr) == FMS_OK);
  CHECK(fits == 0);
  fms_network_free(r34);
  fms_network_free(r50);
}

TEST_CASE("perf and sweep") {
  fms_network* net = nullptr;
  REQUIRE(fms_network_builtin("resnet34", 224, &net) == FMS_OK);
  Str j;
  CHECK(fms_perf(net, nullptr, "0.5V", 1, 1, 2, &j.p) == FMS_OK);
  CHECK(j.s().find("\"total\": 4669952") != std::string::npos);
  Str j2;
  CHECK(fms_perf(net, nullptr, "0.3V", 1, 1, 2, &j2.p) == FMS_ERR_VALIDATION);
  fms_network_free(net);

  const int res[] = {224, 448};
  const int sides[] = {0};
  Str csv;
  CHECK(fms_sweep("resnet34", res, 2, sides, 1, nullptr, 2, &csv.p) == FMS_OK);
  CHECK(csv.s().rfind("resolution,mesh,", 0) == 0);
  CHECK(csv.s().find("\n448,2x2,") != std::string::npos);
}

TEST_CASE("simulate single chip and mesh, verified") {
  fms_network* net = nullptr;
  REQUIRE(fms_network_builtin("resnet34", 32, &net) == FMS_OK);
  fms_simulate_options opt;
  fms_simulate_options_default(&opt);
  opt.verify = 1;
  opt.trace = 1;
  opt.max_trace_events = 1000;
  const auto d1 = scratch("single");
  const std::string s1 = d1.string();
  opt.out_dir = s1.c_str();
  Str sum;
  REQUIRE(fms_simulate(net, nullptr, &opt, &sum.p) == FMS_OK);
  CHECK(sum.s().find("\"verdict\": \"bit-exact\"") != std::string::npos);
  CHECK(std::filesystem::exists(d1 / "output.fm16"));
  CHECK(std::filesystem::exists(d1 / "trace.jsonl"));
  CHECK(std::filesystem::exists(d1 / "summary.json"));

  opt.mesh_rows = opt.mesh_cols = 2;
  opt.trace = 0;
  const auto d2 = scratch("mesh");
  const std::string s2 = d2.string();
  opt.out_dir = s2.c_str();
  Str sum2;
  REQUIRE(fms_simulate(net, nullptr, &opt, &sum2.p) == FMS_OK);
  CHECK(std::filesystem::exists(d2 / "traffic.csv"));
  CHECK(sum2.s().find("\"verdict\": \"bit-exact\"") != std::string::npos);

  // Output files are byte-identical across meshes.
  auto slurp = [](const std::filesystem::path& p) {
    std::string s(std::filesystem::file_size(p), '\0');
    FILE* f = std::fopen(p.string().c_str(), "rb");
    REQUIRE(f != nullptr);
    REQUIRE(std::fread(s.data(), 1, s.size(), f) == s.size());
    std::fclose(f);
    return s;
  };
  CHECK(slurp(d1 / "output.fm16") == slurp(d2 / "output.fm16"));

  fms_chip_config cfg;
  fms_chip_config_default(&cfg);
  cfg.fmm_words = 100;
  opt.mesh_rows = opt.mesh_cols = 1;
  opt.out_dir = nullptr;
  CHECK(fms_simulate(net, &cfg, &opt, nullptr) == FMS_ERR_CAPACITY);
  CHECK(std::string(fms_last_error_code()) == "does-not-fit");
  fms_network_free(net);
}
