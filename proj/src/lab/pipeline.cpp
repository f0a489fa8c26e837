#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "alab/bundle.hpp"
#include "alab/error.hpp"
#include "alab/lab.hpp"

namespace alab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string stem_of(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::Io, p.string() + ": write failed");
}

std::string config_echo(const RunConfig& cfg) {
  return json{{"environment", environment_name(cfg.environment)}, {"net", cfg.net_json()}, {"data", cfg.data_json()}}
      .dump();
}

std::string spec_fingerprint(const MethodSpec& m) {
  return fingerprint_of({{"id", m.id}, {"label", m.display()}, {"params", m.params}});
}

/// Rejects bundles and datasets produced from a different config.
void expect_fingerprint(const fs::path& dir, const char* field, const std::string& want, const char* what) {
  const json fp = read_fingerprint(dir);
  const std::string got = fp.value(field, std::string());
  if (got != want) {
    fail(ErrorKind::Config, dir.string() + ": " + what + " fingerprint '" + got + "' does not match the config ('" +
                                want + "'); regenerate it from this config");
  }
}

/// gradcam taps are only checkable against a built net.
void check_method_taps(const RunConfig& cfg, const NetGraph& net) {
  for (const MethodSpec& m : cfg.resolved_methods()) {
    if (m.id == "gradcam" && m.params.contains("tap")) net.tap(m.params["tap"].get<std::string>());
  }
}

NetGraph build_net(const RunConfig& cfg) {
  return cfg.environment == EnvironmentKind::SingleColor ? build_single_color_net(cfg.single)
                                                          : build_multi_color_net(cfg.multi);
}

}  // namespace

void StageLog::line(const std::string& s) const {
  if (out) *out << s << '\n' << std::flush;
}

std::vector<std::string> parallel_cells(std::size_t n, std::size_t threads,
                                        const std::function<void(std::size_t)>& fn) {
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (errors[i].empty()) errors[i] = "unknown error";
      }
    }
  };
  const std::size_t t = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < t; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return errors;
}

void write_fingerprint(const fs::path& dir, const json& fields) {
  json j = fields;
  j["tool_version"] = kToolVersion;
  write_text(dir / "fingerprint.json", j.dump(2) + "\n");
}

json read_fingerprint(const fs::path& dir) {
  const fs::path p = dir / "fingerprint.json";
  std::ifstream in(p);
  if (!in) fail(ErrorKind::Io, p.string() + ": missing; was this directory produced by labcli?");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, p.string() + ": " + e.what());
  }
}

std::vector<LabSample> stage_gen_data(const RunConfig& cfg, const fs::path& out, const StageLog& log) {
  cfg.validate();
  const auto samples = cfg.environment == EnvironmentKind::SingleColor ? gen_single_color(cfg.single, cfg.data)
                                                                        : gen_multi_color(cfg.multi, cfg.data);
  export_dataset(samples, out, config_echo(cfg));
  write_fingerprint(out, {{"stage", "gen-data"}, {"net", cfg.net_fingerprint()}, {"data", cfg.data_fingerprint()}});
  log.line("gen-data: " + std::to_string(samples.size()) + " " + environment_name(cfg.environment) + " samples (" +
           std::to_string(cfg.height()) + "x" + std::to_string(cfg.width()) + ") -> " + out.string());
  return samples;
}

VerificationReport stage_build_net(const RunConfig& cfg, const fs::path& out, const StageLog& log) {
  cfg.validate();
  const NetGraph net = build_net(cfg);
  check_method_taps(cfg, net);
  const VerificationReport r = cfg.environment == EnvironmentKind::SingleColor
                                   ? verify_single_color(net, cfg.single, cfg.verify_samples, cfg.data.seed)
                                   : verify_multi_color(net, cfg.multi, cfg.verify_samples, cfg.data.seed);
  log.line("build-net: " + std::to_string(r.layers) + " layers (" + std::to_string(r.weighted_layers) +
           " weighted), " + std::to_string(r.parameters) + " parameters");
  for (const std::string& n : r.notes) log.line("note: " + n);
  if (!r.passed) {
    std::string msg = "verification failed";
    for (const std::string& f : r.failures) msg += "\n  " + f;
    fail(ErrorKind::Verification, msg);
  }
  if (cfg.environment == EnvironmentKind::SingleColor) {
    log.line("verified: modulo exact on [0," + std::to_string(cfg.single.effective_capacity()) + "]");
  } else {
    log.line("verified: logits equal color counts on " + std::to_string(r.samples_agreeing) + "/" +
             std::to_string(r.samples_checked) + " samples");
  }
  save_bundle(net, out, config_echo(cfg));
  write_fingerprint(out, {{"stage", "build-net"}, {"net", cfg.net_fingerprint()}});
  return r;
}

AttributeSummary stage_attribute(const RunConfig& cfg, const fs::path& net_dir, const fs::path& data_dir,
                                 const fs::path& out, std::size_t threads, const StageLog& log) {
  cfg.validate();
  expect_fingerprint(net_dir, "net", cfg.net_fingerprint(), "net bundle");
  expect_fingerprint(data_dir, "data", cfg.data_fingerprint(), "dataset");
  const LoadedBundle bundle = load_bundle(net_dir);
  check_method_taps(cfg, bundle.net);
  const std::vector<LabSample> samples = import_dataset(data_dir);
  const std::vector<MethodSpec> methods = cfg.resolved_methods();

  // Reuse maps only when the inputs and the method spec are unchanged.
  json previous = json::object();
  if (fs::exists(out / "fingerprint.json")) {
    const json fp = read_fingerprint(out);
    if (fp.value("net", "") == cfg.net_fingerprint() && fp.value("data", "") == cfg.data_fingerprint()) {
      previous = fp.value("methods", json::object());
    }
  }
  json current = json::object();
  for (const MethodSpec& m : methods) {
    current[m.display()] = spec_fingerprint(m);
    fs::create_directories(out / m.display());
  }

  const std::size_t S = samples.size();
  std::vector<char> reused(methods.size() * S, 0);
  const auto errors = parallel_cells(methods.size() * S, threads, [&](std::size_t cell) {
    const MethodSpec& m = methods[cell / S];
    const LabSample& s = samples[cell % S];
    const fs::path dir = out / m.display();
    const std::string stem = stem_of(cell % S);
    if (previous.value(m.display(), "") == current[m.display()] && fs::exists(dir / (stem + ".json")) &&
        fs::exists(dir / (stem + ".bin"))) {
      reused[cell] = 1;
      return;
    }
    save_map(run_method(m, bundle.net, s), dir, stem, true);
  });

  AttributeSummary sum;
  for (std::size_t cell = 0; cell < errors.size(); ++cell) {
    if (!errors[cell].empty()) {
      sum.failures.push_back(methods[cell / S].display() + " sample " + std::to_string(cell % S) + ": " +
                             errors[cell]);
    } else if (reused[cell]) {
      ++sum.skipped;
    } else {
      ++sum.written;
    }
  }
  write_fingerprint(out, {{"stage", "attribute"},
                          {"net", cfg.net_fingerprint()},
                          {"data", cfg.data_fingerprint()},
                          {"methods", current}});
  log.line("attribute: " + std::to_string(methods.size()) + " methods x " + std::to_string(S) + " samples: " +
           std::to_string(sum.written) + " written, " + std::to_string(sum.skipped) + " unchanged, " +
           std::to_string(sum.failures.size()) + " failed");
  for (const std::string& f : sum.failures) log.line("failed: " + f);
  return sum;
}

}  // namespace alab
