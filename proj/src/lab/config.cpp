#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include "alab/error.hpp"
#include "alab/lab.hpp"

namespace alab {

using nlohmann::json;

namespace {

/// Reads the fields of one JSON object and rejects any it did not ask for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(ErrorKind::Config, path_ + " must be an object");
  }

  template <typename T>
  bool get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return false;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorKind::Config, at(key) + ": " + e.what());
    }
    return true;
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) fail(ErrorKind::Config, at(key) + ": unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Rgb rgb_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) fail(ErrorKind::Config, where + " must be [r, g, b]");
  try {
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, where + ": " + e.what());
  }
}

json rgb_json(const Rgb& c) { return json::array({c.r, c.g, c.b}); }

void read_single(const json& j, SingleColorConfig& c) {
  Fields f(j, "single_color");
  f.get("height", c.height);
  f.get("width", c.width);
  f.get("modulus", c.modulus);
  f.get("capacity", c.capacity);
  std::string acc = accumulator_mode_name(c.accumulator);
  if (f.get("accumulator", acc)) c.accumulator = accumulator_mode_from_name(acc);
  f.get("seed", c.seed);
  f.finish();
}

void read_multi(const json& j, MultiColorConfig& c) {
  Fields f(j, "multi_color");
  f.get("height", c.height);
  f.get("width", c.width);
  if (const json* t = f.raw("targets")) {
    if (!t->is_array()) fail(ErrorKind::Config, "multi_color.targets must be a list of [r, g, b]");
    c.targets.clear();
    for (std::size_t i = 0; i < t->size(); ++i) {
      c.targets.push_back(rgb_from((*t)[i], "multi_color.targets[" + std::to_string(i) + "]"));
    }
  }
  if (const json* b = f.raw("background")) c.background = rgb_from(*b, "multi_color.background");
  f.get("redundant", c.redundant);
  f.get("rho", c.rho);
  std::string acc = accumulator_mode_name(c.accumulator);
  if (f.get("accumulator", acc)) c.accumulator = accumulator_mode_from_name(acc);
  f.get("seed", c.seed);
  f.finish();
}

void read_data(const json& j, DataConfig& d) {
  Fields f(j, "data");
  f.get("count", d.count);
  f.get("seed", d.seed);
  f.get("patches", d.patches);
  f.get("min_radius_fraction", d.min_radius_fraction);
  f.get("max_radius_fraction", d.max_radius_fraction);
  f.get("min_patch_pixels", d.min_patch_pixels);
  f.get("reject_zero_label", d.reject_zero_label);
  f.get("max_attempts", d.max_attempts);
  f.finish();
}

void read_metrics(const json& j, MetricSettings& m) {
  Fields f(j, "metrics");
  f.get("metrics", m.metrics);
  f.get("step_fraction", m.step_fraction);
  if (const json* r = f.raw("replacement")) m.replacement = BaselineSpec::from_json(*r);
  f.get("repeats", m.repeats);
  f.get("n_grid", m.n_grid);
  f.get("seed", m.seed);
  f.get("smoothing_radius", m.smoothing_radius);
  f.finish();
}

MethodSpec method_from(const json& j, std::size_t i) {
  const std::string where = "methods[" + std::to_string(i) + "]";
  if (j.is_string()) return {j.get<std::string>(), "", json::object()};
  Fields f(j, where);
  MethodSpec m;
  if (!f.get("id", m.id)) fail(ErrorKind::Config, where + ".id is required");
  f.get("label", m.label);
  if (const json* p = f.raw("params")) m.params = *p;
  f.finish();
  return m;
}

}  // namespace

std::string environment_name(EnvironmentKind e) {
  return e == EnvironmentKind::SingleColor ? "single-color" : "multi-color";
}

EnvironmentKind environment_from_name(const std::string& name) {
  if (name == "single-color") return EnvironmentKind::SingleColor;
  if (name == "multi-color") return EnvironmentKind::MultiColor;
  fail(ErrorKind::Config, "environment must be 'single-color' or 'multi-color', got '" + name + "'");
}

const std::vector<std::string>& known_metrics() {
  static const std::vector<std::string> m{"gt", "insertion", "deletion", "sensitivity-n"};
  return m;
}

bool MetricSettings::wants(const std::string& metric) const {
  return std::find(metrics.begin(), metrics.end(), metric) != metrics.end();
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Fields f(j, "");
  std::string env = environment_name(c.environment);
  if (f.get("environment", env)) c.environment = environment_from_name(env);
  if (const json* s = f.raw("single_color")) read_single(*s, c.single);
  if (const json* m = f.raw("multi_color")) read_multi(*m, c.multi);
  if (const json* d = f.raw("data")) read_data(*d, c.data);
  if (const json* ms = f.raw("methods")) {
    if (!ms->is_array()) fail(ErrorKind::Config, "methods must be a list");
    for (std::size_t i = 0; i < ms->size(); ++i) c.methods.push_back(method_from((*ms)[i], i));
  }
  if (const json* m = f.raw("metrics")) read_metrics(*m, c.metrics);
  f.get("gamma", c.gamma);
  f.get("output", c.output);
  f.get("verify_samples", c.verify_samples);
  f.finish();
  return c;
}

json RunConfig::net_json() const {
  if (environment == EnvironmentKind::SingleColor) {
    return {{"height", single.height},
            {"width", single.width},
            {"modulus", single.modulus},
            {"capacity", single.capacity},
            {"accumulator", accumulator_mode_name(single.accumulator)},
            {"seed", single.seed}};
  }
  json targets = json::array();
  for (const Rgb& t : multi.targets) targets.push_back(rgb_json(t));
  return {{"height", multi.height},
          {"width", multi.width},
          {"targets", targets},
          {"background", rgb_json(multi.background)},
          {"redundant", multi.redundant},
          {"rho", multi.rho},
          {"accumulator", accumulator_mode_name(multi.accumulator)},
          {"seed", multi.seed}};
}

json RunConfig::data_json() const {
  return {{"count", data.count},
          {"seed", data.seed},
          {"patches", data.patches},
          {"min_radius_fraction", data.min_radius_fraction},
          {"max_radius_fraction", data.max_radius_fraction},
          {"min_patch_pixels", data.min_patch_pixels},
          {"reject_zero_label", data.reject_zero_label},
          {"max_attempts", data.max_attempts}};
}

json RunConfig::to_json() const {
  json methods_j = json::array();
  for (const MethodSpec& m : resolved_methods()) {
    methods_j.push_back({{"id", m.id}, {"label", m.display()}, {"params", m.params}});
  }
  json grid = metrics.n_grid;
  return {{"environment", environment_name(environment)},
          {environment == EnvironmentKind::SingleColor ? "single_color" : "multi_color", net_json()},
          {"data", data_json()},
          {"methods", methods_j},
          {"metrics",
           {{"metrics", metrics.metrics},
            {"step_fraction", metrics.step_fraction},
            {"replacement", metrics.replacement.to_json()},
            {"repeats", metrics.repeats},
            {"n_grid", grid},
            {"seed", metrics.seed},
            {"smoothing_radius", metrics.smoothing_radius}}},
          {"gamma", gamma},
          {"output", output},
          {"verify_samples", verify_samples}};
}

void RunConfig::validate() const {
  if (environment == EnvironmentKind::SingleColor) single.validate();
  else multi.validate();
  data.validate();
  std::set<std::string> labels;
  for (const MethodSpec& m : resolved_methods()) {
    validate_method(m);
    if (!labels.insert(m.display()).second) {
      fail(ErrorKind::Config, "methods: label '" + m.display() + "' is used twice");
    }
  }
  for (const std::string& m : metrics.metrics) {
    if (std::find(known_metrics().begin(), known_metrics().end(), m) == known_metrics().end()) {
      fail(ErrorKind::Config, "metrics.metrics: unknown metric '" + m + "'");
    }
  }
  if (!(metrics.step_fraction > 0.0 && metrics.step_fraction <= 1.0)) {
    fail(ErrorKind::Config, "metrics.step_fraction must be in (0, 1]");
  }
  SensitivityConfig probe;
  probe.repeats = metrics.repeats;
  probe.n_grid = metrics.n_grid;
  probe.replacement = metrics.replacement;
  probe.validate();
  if (!metrics.n_grid.empty() && metrics.n_grid.back() > height() * width()) {
    fail(ErrorKind::Config, "metrics.n_grid exceeds the pixel count");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail(ErrorKind::Config, "gamma must be in [0, 1]");
  if (output.empty()) fail(ErrorKind::Config, "output must be a non-empty path");
}

std::size_t RunConfig::height() const {
  return environment == EnvironmentKind::SingleColor ? single.height : multi.height;
}

std::size_t RunConfig::width() const {
  return environment == EnvironmentKind::SingleColor ? single.width : multi.width;
}

std::vector<MethodSpec> RunConfig::resolved_methods() const {
  return methods.empty() ? default_methods(environment, multi.background) : methods;
}

std::string RunConfig::net_fingerprint() const {
  return fingerprint_of({{"environment", environment_name(environment)}, {"net", net_json()}});
}

std::string RunConfig::data_fingerprint() const {
  return fingerprint_of({{"net", net_fingerprint()}, {"data", data_json()}});
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, path.string() + ": cannot open config");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

std::vector<MethodSpec> default_methods(EnvironmentKind env, Rgb background) {
  const json empty = json::object();
  std::vector<MethodSpec> m{{"saliency", "", empty}, {"guided-backprop", "", empty}};
  if (env == EnvironmentKind::MultiColor) {
    m.push_back({"integrated-gradients", "ig", empty});
    m.push_back({"integrated-gradients", "ig-true",
                 {{"baseline", BaselineSpec::true_color(background).to_json()}}});
    m.push_back({"deeplift", "", empty});
  } else {
    m.push_back({"integrated-gradients", "ig", empty});
    m.push_back({"deeplift", "", empty});
  }
  for (const char* id : {"lrp", "gradcam", "occlusion", "lime", "extremal-perturbation", "random"}) {
    m.push_back({id, "", empty});
  }
  return m;
}

std::size_t lab_threads() {
  if (const char* v = std::getenv("LAB_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end != v && *end == '\0' && n > 0) return static_cast<std::size_t>(n);
    fail(ErrorKind::Config, std::string("LAB_THREADS must be a positive integer, got '") + v + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace alab
