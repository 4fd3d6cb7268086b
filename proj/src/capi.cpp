// SPDX-License-Identifier: Apache-2.0
#include "fmstream.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fmstream/builtin.hpp"
#include "fmstream/engine.hpp"
#include "fmstream/mesh.hpp"
#include "fmstream/network.hpp"
#include "fmstream/oracle.hpp"
#include "fmstream/perf.hpp"
#include "fmstream/planner.hpp"
#include "fmstream/serialize.hpp"

struct fms_network {
  std::unique_ptr<fmstream::ResolvedNetwork> net;
};

namespace {

using namespace fmstream;

struct LastError {
  std::string message;
  std::string code = "ok";
  int layer = Error::kNoLayer;
};

LastError& last() {
  thread_local LastError e;
  return e;
}

fms_status fail(fms_status s, const std::string& msg, const char* code, int layer = Error::kNoLayer) {
  last().message = msg;
  last().code = code;
  last().layer = layer;
  return s;
}

fms_status status_of(ErrorCode c) {
  switch (error_class(c)) {
    case ErrorClass::Validation: return FMS_ERR_VALIDATION;
    case ErrorClass::Capacity: return FMS_ERR_CAPACITY;
    case ErrorClass::Verification: return FMS_ERR_VERIFY;
    case ErrorClass::Internal: return FMS_ERR_INTERNAL;
  }
  return FMS_ERR_INTERNAL;
}

template <class F>
fms_status guarded(F&& f) {
  try {
    last() = LastError{};
    f();
    return FMS_OK;
  } catch (const Error& e) {
    return fail(status_of(e.code()), e.what(), error_code_name(e.code()), e.layer());
  } catch (const nlohmann::json::exception& e) {
    return fail(FMS_ERR_VALIDATION, std::string("JSON: ") + e.what(), "format");
  } catch (const std::bad_alloc&) {
    return fail(FMS_ERR_INTERNAL, "out of memory", "internal");
  } catch (const std::exception& e) {
    return fail(FMS_ERR_INTERNAL, e.what(), "internal");
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.data(), s.size() + 1);
  return p;
}

void need(const void* p, const char* what) {
  if (!p) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must not be null");
}

ChipConfig to_cfg(const fms_chip_config* c) {
  ChipConfig cfg;
  if (!c) return cfg;
  cfg.M = c->M;
  cfg.N = c->N;
  cfg.C = c->C;
  cfg.fmm_words = c->fmm_words;
  cfg.wbuf_bits = c->wbuf_bits;
  cfg.bm_bits = c->bm_bits;
  cfg.cm_bits = c->cm_bits;
  cfg.check();
  return cfg;
}

fms_network* wrap(NetworkGraph g) {
  auto* h = new fms_network;
  h->net = std::make_unique<ResolvedNetwork>(std::move(g));
  return h;
}

std::string first_difference(const FeatureMap& a, const FeatureMap& b) {
  for (int c = 0; c < a.shape.n; ++c)
    for (int y = 0; y < a.shape.h; ++y)
      for (int x = 0; x < a.shape.w; ++x)
        if (!(a.at(c, y, x) == b.at(c, y, x))) {
          std::ostringstream os;
          os << "output differs from the reference at (c=" << c << ", y=" << y << ", x=" << x << "): engine 0x"
             << std::hex << a.at(c, y, x).bits << ", reference 0x" << b.at(c, y, x).bits;
          return os.str();
        }
  return {};
}

}  // namespace

extern "C" {

const char* fms_version(void) { return "1.0.0"; }
const char* fms_last_error(void) { return last().message.c_str(); }
const char* fms_last_error_code(void) { return last().code.c_str(); }
int fms_last_error_layer(void) { return last().layer; }
void fms_string_free(char* s) { std::free(s); }

void fms_chip_config_default(fms_chip_config* c) {
  if (!c) return;
  const ChipConfig d;
  c->M = d.M;
  c->N = d.N;
  c->C = d.C;
  c->fmm_words = d.fmm_words;
  c->wbuf_bits = d.wbuf_bits;
  c->bm_bits = d.bm_bits;
  c->cm_bits = d.cm_bits;
}

void fms_simulate_options_default(fms_simulate_options* o) {
  if (!o) return;
  *o = fms_simulate_options{};
  o->weights_seed = 1;
  o->input_seed = 2;
  o->mesh_rows = 1;
  o->mesh_cols = 1;
  o->max_trace_events = EngineOptions{}.max_trace_events;
}

fms_status fms_network_load(const char* path, fms_network** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = wrap(load_network(path));
  });
}

fms_status fms_network_from_json(const char* json, fms_network** out) {
  return guarded([&] {
    need(json, "json");
    need(out, "out");
    *out = wrap(network_from_json(json));
  });
}

fms_status fms_network_builtin(const char* name, int resolution, fms_network** out) {
  return guarded([&] {
    need(name, "name");
    need(out, "out");
    const int r = resolution > 0 ? resolution : builtin_default_resolution(name);
    *out = wrap(builtin_network(name, r));
  });
}

void fms_network_free(fms_network* net) { delete net; }

fms_status fms_network_to_json(const fms_network* net, char** json) {
  return guarded([&] {
    need(net, "network");
    need(json, "json");
    *json = dup(network_to_json(net->net->graph));
  });
}

fms_status fms_network_layer_count(const fms_network* net, int* count) {
  return guarded([&] {
    need(net, "network");
    need(count, "count");
    *count = net->net->layer_count();
  });
}

fms_status fms_network_validate(const fms_network* net, int* ok, char** report) {
  return guarded([&] {
    need(net, "network");
    const ValidationReport r = validate_network(net->net->graph);
    if (ok) *ok = r.ok ? 1 : 0;
    if (report) {
      nlohmann::ordered_json j;
      j["ok"] = r.ok;
      j["issues"] = nlohmann::ordered_json::array();
      for (const auto& i : r.issues)
        j["issues"].push_back({{"code", error_code_name(i.code)}, {"layer", i.layer}, {"message", i.message}});
      *report = dup(j.dump(2) + "\n");
    }
  });
}

fms_status fms_plan(const fms_network* net, const fms_chip_config* cfg, int* fits, char** json, char** table) {
  return guarded([&] {
    need(net, "network");
    const ChipConfig c = to_cfg(cfg);
    const MemoryReport r = memory_report(*net->net, c);
    if (fits) *fits = (r.fits_fmm && r.fits_bm && r.fits_cm) ? 1 : 0;
    if (json) *json = dup(memory_report_json(*net->net, r));
    if (table) *table = dup(memory_report_table(*net->net, r));
  });
}

fms_status fms_perf(const fms_network* net, const fms_chip_config* cfg, const char* op_point, int mesh_rows,
                    int mesh_cols, int ws_crossings, char** json) {
  return guarded([&] {
    need(net, "network");
    need(json, "json");
    if (mesh_rows < 1 || mesh_cols < 1) throw Error(ErrorCode::InvalidArgument, "mesh dimensions must be positive");
    const OperatingPoint& op = operating_point(op_point ? op_point : "0.5V");
    const PerfReport r = analyze_performance(*net->net, to_cfg(cfg), op, mesh_rows, mesh_cols, ws_crossings);
    *json = dup(perf_report_json(r));
  });
}

fms_status fms_sweep(const char* builtin, const int* resolutions, size_t n_resolutions, const int* mesh_sides,
                     size_t n_mesh_sides, const fms_chip_config* cfg, int ws_crossings, char** csv) {
  return guarded([&] {
    need(builtin, "builtin");
    need(csv, "csv");
    std::vector<int> res(resolutions, resolutions + (resolutions ? n_resolutions : 0));
    std::vector<int> sides(mesh_sides, mesh_sides + (mesh_sides ? n_mesh_sides : 0));
    if (sides.empty()) sides.push_back(0);
    *csv = dup(sweep_csv(sweep_io(builtin, res, sides, to_cfg(cfg), ws_crossings)));
  });
}

fms_status fms_sweep_network(const fms_network* net, const int* mesh_sides, size_t n_mesh_sides,
                             const fms_chip_config* cfg, int ws_crossings, char** csv) {
  return guarded([&] {
    need(net, "network");
    need(csv, "csv");
    std::vector<int> sides(mesh_sides, mesh_sides + (mesh_sides ? n_mesh_sides : 0));
    if (sides.empty()) sides.push_back(0);
    *csv = dup(sweep_csv(sweep_io(net->net->graph, sides, to_cfg(cfg), ws_crossings)));
  });
}

fms_status fms_simulate(const fms_network* handle, const fms_chip_config* cfgp, const fms_simulate_options* optp,
                        char** summary_json) {
  return guarded([&] {
    need(handle, "network");
    fms_simulate_options opt;
    fms_simulate_options_default(&opt);
    if (optp) opt = *optp;
    const ResolvedNetwork& net = *handle->net;
    const ChipConfig cfg = to_cfg(cfgp);
    if (opt.mesh_rows < 1 || opt.mesh_cols < 1)
      throw Error(ErrorCode::InvalidArgument, "mesh dimensions must be positive");

    const NetworkWeights weights =
        opt.weights_path ? load_weights(opt.weights_path) : random_weights(net, opt.weights_seed);
    check_weights(net, weights);
    const FeatureMap input =
        opt.input_path ? load_feature_map(opt.input_path) : random_feature_map(net.shape(kNetworkInput), opt.input_seed);
    if (!(input.shape == net.shape(kNetworkInput)))
      throw Error(ErrorCode::ShapeMismatch, "input feature map shape does not match the network input");

    nlohmann::ordered_json j;
    j["network"] = net.graph.name;
    j["mesh"] = std::to_string(opt.mesh_rows) + "x" + std::to_string(opt.mesh_cols);
    j["weights"] = opt.weights_path ? nlohmann::ordered_json(opt.weights_path)
                                    : nlohmann::ordered_json("seed " + std::to_string(opt.weights_seed));
    j["input"] = opt.input_path ? nlohmann::ordered_json(opt.input_path)
                                : nlohmann::ordered_json("seed " + std::to_string(opt.input_seed));

    const std::filesystem::path dir = opt.out_dir ? opt.out_dir : "";
    if (opt.out_dir) {
      std::filesystem::create_directories(dir);
      if (!opt.input_path) save_feature_map(input, (dir / "input.fm16").string());
    }

    FeatureMap output;
    EngineOptions eo;
    eo.trace = opt.trace != 0 && opt.out_dir;
    eo.max_trace_events = opt.max_trace_events;
    if (opt.mesh_rows * opt.mesh_cols == 1) {
      NetworkRun run = run_network(net, weights, input, cfg, eo);
      output = std::move(run.output);
      j["cycles"] = run.cycles;
      j["fmm_peak_words"] = run.fmm_peak_words;
      j["overflow_warnings"] = run.overflow_warnings;
      if (eo.trace) {
        write_text((dir / "trace.jsonl").string(), trace_to_jsonl(run.trace));
        j["trace_events"] = run.trace.size();
        j["trace_truncated"] = run.trace_truncated;
      }
    } else {
      MeshConfig mc;
      mc.rows = opt.mesh_rows;
      mc.cols = opt.mesh_cols;
      MeshOptions mo;
      MeshRun run = run_mesh_network(net, weights, input, mc, cfg, mo);
      output = std::move(run.output);
      j["cycles"] = run.latency_cycles;
      j["messages"] = run.messages;
      j["corner_relays"] = run.corner_relays;
      j["halo_payload_bits"] = run.halo_payload_bits;
      j["bm_peak_bits"] = run.bm_peak_bits;
      j["cm_peak_bits"] = run.cm_peak_bits;
      nlohmann::ordered_json types = nlohmann::ordered_json::array();
      for (ChipType t : run.chip_types) types.push_back(chip_type_name(t));
      j["chip_types"] = types;
      if (opt.out_dir) write_text((dir / "traffic.csv").string(), traffic_csv(run.traffic));
    }
    j["output_shape"] = {output.shape.n, output.shape.h, output.shape.w};
    if (opt.out_dir) save_feature_map(output, (dir / "output.fm16").string());

    std::string mismatch;
    if (opt.verify) {
      const auto ref = oracle::network_reference(net, weights, input, oracle::Mode::Binary16Scheduled, cfg.wbuf_bits,
                                                 cfg.C);
      mismatch = first_difference(output, ref.back());
      j["verdict"] = mismatch.empty() ? "bit-exact" : "mismatch";
      if (!mismatch.empty()) j["first_difference"] = mismatch;
    } else {
      j["verdict"] = "not-verified";
    }
    const std::string text = j.dump(2) + "\n";
    if (opt.out_dir) write_text((dir / "summary.json").string(), text);
    if (summary_json) *summary_json = dup(text);
    if (!mismatch.empty()) throw Error(ErrorCode::VerificationMismatch, mismatch);
  });
}

}  // extern "C"
