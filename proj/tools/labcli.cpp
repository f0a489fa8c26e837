// labcli: builds the designed networks, generates data, runs attribution
// methods and evaluates them.
//
//   labcli gen-data   --config lab.json [--out DIR]
//   labcli build-net  --config lab.json [--out DIR]
//   labcli attribute  --config lab.json [--net DIR] [--data DIR] [--out DIR]
//   labcli evaluate   --config lab.json [--maps DIR] [--data DIR] [--net DIR] [--out DIR]
//   labcli report     [--config lab.json] [--eval DIR]
//
// Directories default to <output>/{data,net,maps,eval}. Exit status: 0 on
// success, 1 when the config or arguments are rejected, 2 on a runtime
// failure (including any failed attribution cell).

#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "alab/error.hpp"
#include "alab/lab.hpp"
#include "alab/netgraph.hpp"

namespace fs = std::filesystem;
using namespace alab;

namespace {

struct Overrides {
  std::optional<std::string> environment;
  std::optional<double> gamma;
  std::optional<std::string> output;
  std::optional<std::size_t> verify_samples;
};

RunConfig load(const std::string& path, const Overrides& o) {
  nlohmann::json j;
  {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Config, path + ": cannot open config");
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Config, path + ": " + e.what());
    }
  }
  if (!j.is_object()) fail(ErrorKind::Config, path + ": config must be a JSON object");
  if (o.environment) j["environment"] = *o.environment;
  if (o.gamma) j["gamma"] = *o.gamma;
  if (o.output) j["output"] = *o.output;
  if (o.verify_samples) j["verify_samples"] = *o.verify_samples;
  RunConfig cfg = RunConfig::from_json(j);
  cfg.validate();
  return cfg;
}

fs::path dir_or(const std::string& flag, const RunConfig& cfg, const char* sub) {
  return flag.empty() ? fs::path(cfg.output) / sub : fs::path(flag);
}

int exit_code(ErrorKind k) {
  return k == ErrorKind::Config || k == ErrorKind::InvalidInput ? 1 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"attribution lab: designed networks with known ground truth"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string config, out, net_dir, data_dir, maps_dir, eval_dir;
  Overrides ov;
  auto common = [&](CLI::App* c, bool config_required = true) {
    auto* opt = c->add_option("--config,-c", config, "run config (JSON)")->check(CLI::ExistingFile);
    if (config_required) opt->required();
    c->add_option("--environment", ov.environment, "override: single-color or multi-color");
    c->add_option("--gamma", ov.gamma, "override: faithfulness threshold");
    c->add_option("--output", ov.output, "override: run directory");
    c->add_option("--verify-samples", ov.verify_samples, "override: samples checked by build-net");
  };

  auto* gen = app.add_subcommand("gen-data", "generate the dataset");
  common(gen);
  gen->add_option("--out,-o", out, "dataset directory");
  auto* build = app.add_subcommand("build-net", "build and verify the designed net");
  common(build);
  build->add_option("--out,-o", out, "bundle directory");
  auto* attr = app.add_subcommand("attribute", "run every configured method on every sample");
  common(attr);
  attr->add_option("--net", net_dir, "bundle directory");
  attr->add_option("--data", data_dir, "dataset directory");
  attr->add_option("--out,-o", out, "map directory");
  auto* eval = app.add_subcommand("evaluate", "score stored maps");
  common(eval);
  eval->add_option("--maps", maps_dir, "map directory");
  eval->add_option("--data", data_dir, "dataset directory");
  eval->add_option("--net", net_dir, "bundle directory");
  eval->add_option("--out,-o", out, "report directory");
  auto* rep = app.add_subcommand("report", "summarize report.json");
  common(rep, false);
  rep->add_option("--eval", eval_dir, "report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const StageLog log{&std::cout};
  try {
    if (*rep) {
      fs::path dir = eval_dir;
      if (dir.empty()) dir = config.empty() ? fs::path("run/eval") : fs::path(load(config, ov).output) / "eval";
      std::cout << stage_report(dir);
      return 0;
    }
    const RunConfig cfg = load(config, ov);
    const std::size_t threads = lab_threads();
    if (*gen) {
      stage_gen_data(cfg, dir_or(out, cfg, "data"), log);
    } else if (*build) {
      stage_build_net(cfg, dir_or(out, cfg, "net"), log);
    } else if (*attr) {
      const AttributeSummary s = stage_attribute(cfg, dir_or(net_dir, cfg, "net"), dir_or(data_dir, cfg, "data"),
                                                 dir_or(out, cfg, "maps"), threads, log);
      if (!s.failures.empty()) return 2;
    } else if (*eval) {
      const EvalReport r = stage_evaluate(cfg, dir_or(maps_dir, cfg, "maps"), dir_or(data_dir, cfg, "data"),
                                          dir_or(net_dir, cfg, "net"), dir_or(out, cfg, "eval"), threads, log);
      for (const MethodSummary& m : r.methods) {
        std::cout << m.label << ": F1 " << m.verdict.f1 << (m.verdict.pass ? " pass" : " fail") << '\n';
      }
    }
    return 0;
  } catch (const LabError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
