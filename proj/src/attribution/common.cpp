#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "alab/error.hpp"
#include "alab/png_io.hpp"
#include "alab/rng.hpp"
#include "internal.hpp"

namespace alab {

std::string output_mode_name(OutputMode m) {
  switch (m) {
    case OutputMode::Auto: return "auto";
    case OutputMode::Logit: return "logit";
    case OutputMode::Probability: return "probability";
  }
  return "auto";
}

OutputMode output_mode_from_name(const std::string& name) {
  if (name == "auto") return OutputMode::Auto;
  if (name == "logit" || name == "pre-softmax") return OutputMode::Logit;
  if (name == "probability" || name == "post-softmax") return OutputMode::Probability;
  fail(ErrorKind::Config, "unknown output mode '" + name + "' (auto, logit, probability)");
}

// ---------------------------------------------------------------------------
// Baselines

namespace {

std::string provenance_name(BaselineSpec::Provenance p) {
  switch (p) {
    case BaselineSpec::Provenance::TrueBaseline: return "true-baseline";
    case BaselineSpec::Provenance::DefaultZero: return "default-zero";
    case BaselineSpec::Provenance::Custom: return "custom";
  }
  return "custom";
}

BaselineSpec::Provenance provenance_from_name(const std::string& s) {
  if (s == "true-baseline") return BaselineSpec::Provenance::TrueBaseline;
  if (s == "default-zero") return BaselineSpec::Provenance::DefaultZero;
  if (s == "custom") return BaselineSpec::Provenance::Custom;
  fail(ErrorKind::Config, "baseline.provenance must be true-baseline, default-zero or custom, got '" + s + "'");
}

}  // namespace

void BaselineSpec::validate() const {
  if (mode == Mode::Color) {
    for (int v : {color.r, color.g, color.b}) {
      if (v < 0 || v > 255) fail(ErrorKind::Config, "baseline color " + rgb_string(color) + " outside [0,255]");
    }
  } else if (!std::isfinite(scalar)) {
    fail(ErrorKind::Config, "baseline scalar must be finite");
  }
}

double BaselineSpec::channel_value(std::size_t channel) const {
  if (mode == Mode::Scalar) return scalar;
  switch (channel) {
    case 0: return color.r;
    case 1: return color.g;
    case 2: return color.b;
  }
  fail(ErrorKind::InvalidInput, "color baseline supports at most 3 channels");
}

Tensor BaselineSpec::image(const Shape& shape) const {
  if (shape.size() != 3) fail(ErrorKind::InvalidInput, "baseline image needs a C x H x W shape");
  Tensor out(shape);
  const std::size_t plane = shape[1] * shape[2];
  for (std::size_t c = 0; c < shape[0]; ++c) {
    std::fill_n(out.raw() + c * plane, plane, channel_value(c));
  }
  return out;
}

nlohmann::json BaselineSpec::to_json() const {
  nlohmann::json j;
  if (mode == Mode::Color) {
    j["color"] = {color.r, color.g, color.b};
  } else {
    j["scalar"] = scalar;
  }
  j["provenance"] = provenance_name(provenance);
  return j;
}

BaselineSpec BaselineSpec::from_json(const nlohmann::json& j) {
  BaselineSpec b;
  if (!j.is_object()) fail(ErrorKind::Config, "baseline must be an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "color" && key != "scalar" && key != "provenance") {
      fail(ErrorKind::Config, "baseline: unknown field '" + key + "'");
    }
  }
  if (j.contains("color") && j.contains("scalar")) fail(ErrorKind::Config, "baseline: give color or scalar, not both");
  b.provenance = Provenance::Custom;
  if (j.contains("color")) {
    const auto& c = j["color"];
    if (!c.is_array() || c.size() != 3) fail(ErrorKind::Config, "baseline.color must be [r, g, b]");
    b.mode = Mode::Color;
    b.color = {c[0].get<int>(), c[1].get<int>(), c[2].get<int>()};
    if (b.color == Rgb{0, 0, 0}) b.provenance = Provenance::DefaultZero;
  } else if (j.contains("scalar")) {
    b.mode = Mode::Scalar;
    b.scalar = j["scalar"].get<double>();
  } else {
    b.provenance = Provenance::DefaultZero;
  }
  if (j.contains("provenance")) b.provenance = provenance_from_name(j["provenance"].get<std::string>());
  b.validate();
  return b;
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace detail {

NetGraph explained_net(const NetGraph& net, OutputMode mode) {
  return mode == OutputMode::Logit ? net.without_softmax() : net;
}

std::size_t output_index(const NetGraph& net, int target) {
  const std::size_t n = shape_size(net.output_shape());
  if (n == 1 && (target == kScalarTarget || target == 0)) return 0;
  if (target < 0 || static_cast<std::size_t>(target) >= n) {
    fail(ErrorKind::InvalidInput, "target " + std::to_string(target) + " invalid for an output of size " +
                                      std::to_string(n));
  }
  return static_cast<std::size_t>(target);
}

Tensor one_hot(const NetGraph& net, int target) {
  Tensor seed(net.output_shape());
  seed[output_index(net, target)] = 1.0;
  return seed;
}

Tensor reduce_channels(const Tensor& attr, bool absolute) {
  if (attr.rank() != 3) fail(ErrorKind::InvalidInput, "channel reduction expects C x H x W");
  const std::size_t C = attr.dim(0), plane = attr.dim(1) * attr.dim(2);
  Tensor out({attr.dim(1), attr.dim(2)});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double v = attr[c * plane + i];
      out[i] += absolute ? std::abs(v) : v;
    }
  }
  return out;
}

AttributionMap make_map(Tensor values, const std::string& method, int target, nlohmann::json params) {
  if (!values.all_finite()) fail(ErrorKind::Numeric, method + ": attribution contains non-finite values");
  params["method"] = method;
  AttributionMap m;
  m.values = std::move(values);
  m.method = method;
  m.target = target;
  m.fingerprint = fingerprint_of(params);
  m.params = std::move(params);
  return m;
}

}  // namespace detail

int default_target(const NetGraph& net, const LabSample& sample) {
  return shape_size(net.output_shape()) == 1 ? kScalarTarget : sample.label;
}

std::string fingerprint_of(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Controls

AttributionMap control_random(const LabSample& sample, std::uint64_t seed) {
  auto g = make_rng(seed, 0x7a9dULL, sample.index);
  Tensor v({sample.height(), sample.width()});
  for (double& x : v.data()) x = uniform(g, 0.0, 1.0);
  return detail::make_map(std::move(v), "random", kScalarTarget, {{"seed", seed}});
}

AttributionMap control_constant(const LabSample& sample, double value) {
  return detail::make_map(Tensor({sample.height(), sample.width()}, value), "constant", kScalarTarget,
                          {{"value", value}});
}

// ---------------------------------------------------------------------------
// Export

void save_map(const AttributionMap& map, const std::filesystem::path& dir, const std::string& stem,
              bool render_png) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  const auto bin = dir / (stem + ".bin");
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + bin.string());
    for (double v : map.values.data()) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
      unsigned char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
      out.write(reinterpret_cast<const char*>(b), 8);
    }
    if (!out) fail(ErrorKind::Io, "short write to " + bin.string());
  }
  nlohmann::json side;
  side["method"] = map.method;
  side["fingerprint"] = map.fingerprint;
  side["target"] = map.target;
  side["height"] = map.values.dim(0);
  side["width"] = map.values.dim(1);
  side["params"] = map.params;
  side["encoding"] = "float64-le";
  const auto js = dir / (stem + ".json");
  std::ofstream out(js);
  if (!out) fail(ErrorKind::Io, "cannot write " + js.string());
  out << side.dump(2) << '\n';
  if (render_png) render_map_png(map.values, dir / (stem + ".png"));
}

AttributionMap load_map(const std::filesystem::path& dir, const std::string& stem) {
  const auto js = dir / (stem + ".json");
  std::ifstream in(js);
  if (!in) fail(ErrorKind::Io, "cannot read " + js.string());
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, js.string() + ": " + e.what());
  }
  AttributionMap m;
  std::size_t H = 0, W = 0;
  try {
    m.method = side.at("method").get<std::string>();
    m.fingerprint = side.at("fingerprint").get<std::string>();
    m.target = side.at("target").get<int>();
    m.params = side.at("params");
    H = side.at("height").get<std::size_t>();
    W = side.at("width").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, js.string() + ": " + e.what());
  }
  const auto bin = dir / (stem + ".bin");
  std::ifstream b(bin, std::ios::binary);
  if (!b) fail(ErrorKind::Io, "cannot read " + bin.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  if (bytes.size() != H * W * 8) fail(ErrorKind::Io, bin.string() + ": size does not match the sidecar");
  m.values = Tensor({H, W});
  for (std::size_t i = 0; i < H * W; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[8 * i + k]) << (8 * k);
    m.values[i] = std::bit_cast<double>(bits);
  }
  return m;
}

void render_map_png(const Tensor& values, const std::filesystem::path& path) {
  if (values.rank() != 2) fail(ErrorKind::InvalidInput, "render_map_png expects an H x W map");
  double peak = 0.0;
  for (double v : values.data()) peak = std::max(peak, std::abs(v));
  Image8 img{values.dim(1), values.dim(0), 3, std::vector<std::uint8_t>(values.size() * 3)};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double t = peak > 0.0 ? values[i] / peak : 0.0;
    const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::abs(t))));
    std::uint8_t* p = &img.pixels[3 * i];
    p[0] = t >= 0.0 ? 255 : fade;
    p[1] = fade;
    p[2] = t <= 0.0 ? 255 : fade;
  }
  write_png(path, img);
}

}  // namespace alab
