#include <set>

#include "alab/error.hpp"
#include "internal.hpp"

namespace alab {

namespace {

/// Reads optional fields from a method's params and rejects leftovers, so
/// a typo in a run config fails before any work starts.
class Params {
 public:
  Params(const MethodSpec& spec) : spec_(spec) {
    if (!spec.params.is_object()) fail(ErrorKind::Config, where("params") + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!spec_.params.contains(key)) return;
    try {
      out = spec_.params.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Config, where(key) + ": " + e.what());
    }
  }

  void output(OutputMode& out) {
    std::string s = output_mode_name(out);
    get("output", s);
    out = output_mode_from_name(s);
  }

  void baseline(BaselineSpec& out) {
    seen_.insert("baseline");
    if (spec_.params.contains("baseline")) out = BaselineSpec::from_json(spec_.params["baseline"]);
  }

  void triple(const char* key, std::size_t& a, std::size_t& b, std::size_t& c) {
    std::vector<std::size_t> v{a, b, c};
    get(key, v);
    if (v.size() != 3) fail(ErrorKind::Config, where(key) + " must have three entries");
    a = v[0];
    b = v[1];
    c = v[2];
  }

  void segmentation(SegmentationConfig& out) {
    seen_.insert("segmentation");
    if (spec_.params.contains("segmentation")) out = SegmentationConfig::from_json(spec_.params["segmentation"]);
  }

  void finish() const {
    for (const auto& [key, _] : spec_.params.items()) {
      if (!seen_.count(key)) fail(ErrorKind::Config, where(key) + ": unknown parameter");
    }
  }

 private:
  std::string where(const std::string& key) const { return "method '" + spec_.display() + "' " + key; }

  const MethodSpec& spec_;
  std::set<std::string> seen_;
};

IgConfig parse_ig(Params& p) {
  IgConfig c;
  p.baseline(c.baseline);
  std::string integration = "exact";
  p.get("integration", integration);
  if (integration == "exact") {
    c.integration = IgIntegration::Exact;
  } else if (integration == "midpoint") {
    c.integration = IgIntegration::Midpoint;
  } else {
    fail(ErrorKind::Config, "integrated-gradients integration must be exact or midpoint");
  }
  p.get("steps", c.steps);
  if (c.steps < 8) fail(ErrorKind::Config, "integrated-gradients steps must be at least 8");
  p.output(c.output);
  return c;
}

OcclusionConfig parse_occlusion(Params& p, OcclusionConfig c) {
  p.triple("window", c.window_c, c.window_h, c.window_w);
  p.triple("strides", c.stride_c, c.stride_h, c.stride_w);
  p.baseline(c.baseline);
  p.output(c.output);
  return c;
}

LimeConfig parse_lime(Params& p) {
  LimeConfig c;
  p.segmentation(c.segmentation);
  p.get("samples", c.samples);
  p.get("kernel_width", c.kernel_width);
  p.get("ridge", c.ridge);
  p.get("seed", c.seed);
  p.baseline(c.baseline);
  p.output(c.output);
  return c;
}

ExPerturbConfig parse_experturb(Params& p) {
  ExPerturbConfig c;
  p.get("area", c.area);
  p.get("blur_sigma", c.blur_sigma);
  p.get("steps", c.steps);
  p.get("step_size", c.step_size);
  p.get("penalty", c.penalty);
  p.get("init_logit", c.init_logit);
  p.get("mask_stride", c.mask_stride);
  p.output(c.output);
  if (!(c.area > 0.0 && c.area <= 1.0)) fail(ErrorKind::Config, "extremal-perturbation area must be in (0, 1]");
  return c;
}

/// Parses and, when `sample` is given, runs.
AttributionMap dispatch(const MethodSpec& spec, const NetGraph* net, const LabSample* sample,
                        std::optional<int> target) {
  Params p(spec);
  const bool run = net && sample;
  const int t = run ? target.value_or(default_target(*net, *sample)) : 0;
  const std::string& id = spec.id;
  AttributionMap out;
  if (id == "saliency") {
    SaliencyConfig c;
    p.output(c.output);
    p.finish();
    if (run) out = saliency(*net, *sample, t, c);
  } else if (id == "guided-backprop") {
    GuidedConfig c;
    p.output(c.output);
    p.finish();
    if (run) out = guided_backprop(*net, *sample, t, c);
  } else if (id == "integrated-gradients") {
    const IgConfig c = parse_ig(p);
    p.finish();
    if (run) out = integrated_gradients(*net, *sample, t, c);
  } else if (id == "deeplift") {
    DeepLiftConfig c;
    p.baseline(c.baseline);
    p.output(c.output);
    p.finish();
    if (run) out = deeplift_rescale(*net, *sample, t, c);
  } else if (id == "lrp") {
    LrpConfig c;
    p.get("epsilon", c.epsilon);
    p.finish();
    if (!(c.epsilon > 0.0)) fail(ErrorKind::Config, "lrp epsilon must be positive");
    if (run) out = lrp_epsilon(*net, *sample, t, c);
  } else if (id == "gradcam") {
    GradCamConfig c;
    p.get("tap", c.tap);
    p.output(c.output);
    p.finish();
    if (run) out = gradcam(*net, *sample, t, c);
  } else if (id == "occlusion") {
    const OcclusionConfig c =
        parse_occlusion(p, default_occlusion(run ? sample->environment : EnvironmentKind::MultiColor));
    p.finish();
    if (run) out = occlusion(*net, *sample, t, c);
  } else if (id == "lime") {
    const LimeConfig c = parse_lime(p);
    p.finish();
    if (run) out = lime(*net, *sample, t, c);
  } else if (id == "extremal-perturbation") {
    const ExPerturbConfig c = parse_experturb(p);
    p.finish();
    if (run) out = extremal_perturbation(*net, *sample, t, c);
  } else if (id == "random") {
    std::uint64_t seed = 0;
    p.get("seed", seed);
    p.finish();
    if (run) out = control_random(*sample, seed);
  } else if (id == "constant") {
    double value = 1.0;
    p.get("value", value);
    p.finish();
    if (run) out = control_constant(*sample, value);
  } else {
    std::string list;
    for (const auto& m : known_methods()) list += (list.empty() ? "" : ", ") + m;
    fail(ErrorKind::Config, "unknown method '" + id + "' (known: " + list + ")");
  }
  return out;
}

}  // namespace

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> ids{"saliency", "guided-backprop", "integrated-gradients",
                                            "deeplift", "lrp",             "gradcam",
                                            "occlusion", "lime",           "extremal-perturbation",
                                            "random",   "constant"};
  return ids;
}

void validate_method(const MethodSpec& spec) { dispatch(spec, nullptr, nullptr, std::nullopt); }

AttributionMap run_method(const MethodSpec& spec, const NetGraph& net, const LabSample& sample,
                          std::optional<int> target) {
  return dispatch(spec, &net, &sample, target);
}

}  // namespace alab
