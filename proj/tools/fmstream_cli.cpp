// SPDX-License-Identifier: Apache-2.0
// fmstream command-line front end. Talks to the simulator only through the C API.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fmstream.h"

namespace {

struct CStr {
  char* p = nullptr;
  ~CStr() { fms_string_free(p); }
  char** out() { return &p; }
  std::string str() const { return p ? p : ""; }
};

struct NetHandle {
  fms_network* p = nullptr;
  ~NetHandle() { fms_network_free(p); }
};

int report(fms_status s) {
  if (s != FMS_OK) {
    std::cerr << "fmstream: " << fms_last_error_code() << ": " << fms_last_error();
    if (fms_last_error_layer() >= -1) std::cerr << " (layer " << fms_last_error_layer() << ")";
    std::cerr << "\n";
  }
  return static_cast<int>(s);
}

struct Common {
  std::string network;
  int resolution = 0;
  std::string chip;
  std::string mesh = "1x1";
  std::string out;
  std::string format = "json";
};

bool parse_mesh(const std::string& s, int& rows, int& cols) {
  char x = 0;
  std::istringstream is(s);
  if (!(is >> rows >> x >> cols) || (x != 'x' && x != 'X') || rows < 1 || cols < 1) return false;
  is >> std::ws;
  return is.eof();
}

bool parse_chip(const std::string& s, fms_chip_config& cfg) {
  if (s.empty()) return true;
  std::vector<long long> v;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      size_t used = 0;
      v.push_back(std::stoll(tok, &used));
      if (used != tok.size()) return false;
    } catch (...) {
      return false;
    }
  }
  if (v.size() != 4) return false;
  for (long long x : v)
    if (x <= 0) return false;
  cfg.M = static_cast<int>(v[0]);
  cfg.N = static_cast<int>(v[1]);
  cfg.C = static_cast<int>(v[2]);
  cfg.fmm_words = static_cast<uint64_t>(v[3]);
  return true;
}

// A path that exists wins over a builtin of the same name.
fms_status open_network(const Common& c, NetHandle& h) {
  if (std::filesystem::exists(c.network)) return fms_network_load(c.network.c_str(), &h.p);
  return fms_network_builtin(c.network.c_str(), c.resolution, &h.p);
}

void write_out(const Common& c, const std::string& name, const std::string& text) {
  if (c.out.empty()) return;
  std::filesystem::create_directories(c.out);
  std::ofstream f(std::filesystem::path(c.out) / name, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + (std::filesystem::path(c.out) / name).string());
}

void add_network_opts(CLI::App* app, Common& c) {
  app->add_option("--network", c.network, "network JSON file or builtin name (resnet34, resnet50, shufflenet, yolov3)")
      ->required();
  app->add_option("--resolution", c.resolution, "input resolution for builtin networks");
  app->add_option("--chip", c.chip, "chip override M,N,C,fmm-words");
}

int usage_error(const std::string& msg) {
  std::cerr << "fmstream: invalid-argument: " << msg << "\n";
  return FMS_ERR_VALIDATION;
}

int cmd_plan(const Common& c, const std::string& format) {
  fms_chip_config cfg;
  fms_chip_config_default(&cfg);
  if (!parse_chip(c.chip, cfg)) return usage_error("--chip expects M,N,C,fmm-words");
  NetHandle net;
  if (fms_status s = open_network(c, net); s != FMS_OK) return report(s);
  int fits = 0;
  CStr json, table;
  if (fms_status s = fms_plan(net.p, &cfg, &fits, json.out(), table.out()); s != FMS_OK) return report(s);
  write_out(c, "plan.json", json.str());
  write_out(c, "plan.txt", table.str());
  std::cout << (format == "json" ? json.str() : table.str());
  if (!fits) {
    const auto j = nlohmann::json::parse(json.str());
    std::cerr << "fmstream: does-not-fit:";
    if (!j["fits"]["fmm"].get<bool>())
      std::cerr << " feature-map memory short by " << j["deficit_words"].get<long long>() << " words (worst case at layer "
                << j["wcl_layer"].get<int>() << ")";
    if (!j["fits"]["bm"].get<bool>()) std::cerr << " border memory too small";
    if (!j["fits"]["cm"].get<bool>()) std::cerr << " corner memory too small";
    std::cerr << "\n";
    return FMS_ERR_CAPACITY;
  }
  return 0;
}

struct SimArgs {
  std::string weights, input;
  std::optional<uint64_t> weights_seed, input_seed;
  bool verify = false;
  bool trace = false;
  uint64_t max_trace = 0;
};

int cmd_simulate(const Common& c, const SimArgs& a) {
  fms_chip_config cfg;
  fms_chip_config_default(&cfg);
  if (!parse_chip(c.chip, cfg)) return usage_error("--chip expects M,N,C,fmm-words");
  fms_simulate_options opt;
  fms_simulate_options_default(&opt);
  if (!parse_mesh(c.mesh, opt.mesh_rows, opt.mesh_cols)) return usage_error("--mesh expects MxN");
  if (!a.weights.empty()) opt.weights_path = a.weights.c_str();
  if (a.weights_seed) opt.weights_seed = *a.weights_seed;
  if (!a.input.empty()) opt.input_path = a.input.c_str();
  if (a.input_seed) opt.input_seed = *a.input_seed;
  opt.verify = a.verify;
  opt.trace = a.trace;
  if (a.max_trace) opt.max_trace_events = a.max_trace;
  if (!c.out.empty()) opt.out_dir = c.out.c_str();
  if (a.trace && c.out.empty()) return usage_error("--trace needs --out");

  NetHandle net;
  if (fms_status s = open_network(c, net); s != FMS_OK) return report(s);
  CStr summary;
  fms_status s = fms_simulate(net.p, &cfg, &opt, summary.out());
  if (summary.p) std::cout << summary.str();
  return report(s);
}

int cmd_perf(const Common& c, const std::string& op_point, int crossings) {
  fms_chip_config cfg;
  fms_chip_config_default(&cfg);
  if (!parse_chip(c.chip, cfg)) return usage_error("--chip expects M,N,C,fmm-words");
  int rows = 1, cols = 1;
  if (!parse_mesh(c.mesh, rows, cols)) return usage_error("--mesh expects MxN");
  NetHandle net;
  if (fms_status s = open_network(c, net); s != FMS_OK) return report(s);
  CStr json;
  if (fms_status s = fms_perf(net.p, &cfg, op_point.c_str(), rows, cols, crossings, json.out()); s != FMS_OK)
    return report(s);
  write_out(c, "perf.json", json.str());
  if (c.format == "csv") {
    const auto j = nlohmann::ordered_json::parse(json.str());
    std::cout << "metric,value\n";
    for (const auto& [k, v] : j.items())
      if (v.is_primitive()) std::cout << k << "," << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
  } else {
    std::cout << json.str();
  }
  return 0;
}

int cmd_sweep(const Common& c, const std::vector<int>& resolutions, const std::vector<std::string>& meshes,
              int crossings) {
  fms_chip_config cfg;
  fms_chip_config_default(&cfg);
  if (!parse_chip(c.chip, cfg)) return usage_error("--chip expects M,N,C,fmm-words");
  std::vector<int> sides;
  for (const auto& m : meshes) {
    if (m == "auto") {
      sides.push_back(0);
      continue;
    }
    int r = 0, k = 0;
    if (!parse_mesh(m, r, k) || r != k) return usage_error("--meshes expects square MxM entries or auto");
    sides.push_back(r);
  }
  CStr csv;
  fms_status s = FMS_OK;
  if (std::filesystem::exists(c.network)) {
    NetHandle net;
    s = fms_network_load(c.network.c_str(), &net.p);
    if (s == FMS_OK) s = fms_sweep_network(net.p, sides.data(), sides.size(), &cfg, crossings, csv.out());
  } else {
    s = fms_sweep(c.network.c_str(), resolutions.data(), resolutions.size(), sides.data(), sides.size(), &cfg,
                  crossings, csv.out());
  }
  if (s != FMS_OK) return report(s);
  write_out(c, "sweep.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

int cmd_validate(const Common& c) {
  NetHandle net;
  if (fms_status s = open_network(c, net); s != FMS_OK) return report(s);
  int ok = 0;
  CStr rep;
  if (fms_status s = fms_network_validate(net.p, &ok, rep.out()); s != FMS_OK) return report(s);
  std::cout << rep.str();
  return ok ? 0 : FMS_ERR_VALIDATION;
}

int cmd_export(const Common& c) {
  NetHandle net;
  if (fms_status s = open_network(c, net); s != FMS_OK) return report(s);
  CStr json;
  if (fms_status s = fms_network_to_json(net.p, json.out()); s != FMS_OK) return report(s);
  if (!c.out.empty()) {
    std::ofstream f(c.out, std::ios::binary);
    f << json.str();
    if (!f) return usage_error("cannot write " + c.out);
  } else {
    std::cout << json.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmstream: feature-map stationary binary-weight CNN accelerator simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fms_version());

  Common c;

  auto* plan = app.add_subcommand("plan", "feature-map memory plan and capacity check");
  add_network_opts(plan, c);
  std::string plan_format = "table";
  plan->add_option("--format", plan_format, "stdout format")->check(CLI::IsMember({"json", "table"}));
  plan->add_option("--out", c.out, "directory for plan.json and plan.txt");

  SimArgs sim;
  auto* simulate = app.add_subcommand("simulate", "functional simulation on a chip or a mesh");
  add_network_opts(simulate, c);
  auto* wpath = simulate->add_option("--weights", sim.weights, "weight file");
  auto* wseed = simulate->add_option("--weights-seed", sim.weights_seed, "random +-1 weights from this seed");
  wpath->excludes(wseed);
  auto* ipath = simulate->add_option("--input", sim.input, "input feature map file (.fm16)");
  auto* iseed = simulate->add_option("--input-seed", sim.input_seed, "random input from this seed");
  ipath->excludes(iseed);
  simulate->add_option("--mesh", c.mesh, "mesh MxN");
  simulate->add_flag("--verify", sim.verify, "compare against the reference convolution");
  simulate->add_flag("--trace", sim.trace, "write trace.jsonl (single chip)");
  simulate->add_option("--max-trace-events", sim.max_trace, "trace event cap");
  simulate->add_option("--out", c.out, "output directory");

  std::string op_point = "0.5V";
  int crossings = 2;
  auto* perf = app.add_subcommand("perf", "cycles, utilization, I/O and energy");
  add_network_opts(perf, c);
  perf->add_option("--mesh", c.mesh, "mesh MxN");
  perf->add_option("--op-point", op_point, "operating point")
      ->check(CLI::IsMember({"0.5V", "0.65V", "0.8V", "0.9V"}));
  perf->add_option("--format", c.format, "stdout format")->check(CLI::IsMember({"json", "csv"}));
  perf->add_option("--crossings", crossings, "intermediate FM crossings per layer in the weight-stationary baseline");
  perf->add_option("--out", c.out, "directory for perf.json");

  std::vector<int> resolutions{224, 448, 672, 896, 1120};
  std::vector<std::string> meshes{"auto"};
  auto* sweep = app.add_subcommand("sweep", "I/O of weight-stationary vs feature-map stationary over resolutions");
  sweep->add_option("--network", c.network, "builtin name (swept over --resolutions) or network JSON file")->required();
  sweep->add_option("--chip", c.chip, "chip override M,N,C,fmm-words");
  sweep->add_option("--resolutions", resolutions, "input resolutions")->delimiter(',');
  sweep->add_option("--meshes", meshes, "mesh sizes (MxM or auto)")->delimiter(',');
  sweep->add_option("--crossings", crossings, "intermediate FM crossings per layer in the weight-stationary baseline");
  sweep->add_option("--format", c.format, "stdout format")->check(CLI::IsMember({"csv"}));
  sweep->add_option("--out", c.out, "directory for sweep.csv");

  auto* validate = app.add_subcommand("validate", "check a network description");
  validate->add_option("--network", c.network, "network JSON file or builtin name")->required();
  validate->add_option("--resolution", c.resolution, "input resolution for builtin networks");

  auto* exp = app.add_subcommand("export", "write a network as JSON");
  exp->add_option("--network", c.network, "network JSON file or builtin name")->required();
  exp->add_option("--resolution", c.resolution, "input resolution for builtin networks");
  exp->add_option("--out", c.out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : FMS_ERR_VALIDATION;
  }

  try {
    if (plan->parsed()) return cmd_plan(c, plan_format);
    if (simulate->parsed()) return cmd_simulate(c, sim);
    if (perf->parsed()) return cmd_perf(c, op_point, crossings);
    if (sweep->parsed()) return cmd_sweep(c, resolutions, meshes, crossings);
    if (validate->parsed()) return cmd_validate(c);
    if (exp->parsed()) return cmd_export(c);
  } catch (const std::exception& e) {
    std::cerr << "fmstream: internal: " << e.what() << "\n";
    return FMS_ERR_INTERNAL;
  }
  return FMS_ERR_INTERNAL;
}
