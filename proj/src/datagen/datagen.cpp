#include "alab/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "alab/error.hpp"
#include "alab/png_io.hpp"
#include "alab/rng.hpp"

namespace alab {

using nlohmann::json;

std::string patch_shape_name(PatchShape s) {
  switch (s) {
    case PatchShape::BezierBlob: return "bezier-blob";
    case PatchShape::Triangle: return "triangle";
    case PatchShape::Square: return "square";
    case PatchShape::Circle: return "circle";
  }
  return "?";
}

PatchShape patch_shape_from_name(const std::string& name) {
  for (auto s : {PatchShape::BezierBlob, PatchShape::Triangle, PatchShape::Square, PatchShape::Circle}) {
    if (patch_shape_name(s) == name) return s;
  }
  fail(ErrorKind::InvalidInput, "unknown patch shape '" + name + "'");
}

void DataConfig::validate() const {
  if (count == 0) fail(ErrorKind::Config, "data.count must be at least 1");
  if (patches == 0) fail(ErrorKind::Config, "data.patches must be at least 1");
  if (!(min_radius_fraction > 0.0 && min_radius_fraction <= max_radius_fraction && max_radius_fraction < 0.5)) {
    fail(ErrorKind::Config, "data.min_radius_fraction/max_radius_fraction must satisfy 0 < min <= max < 0.5");
  }
  if (max_attempts == 0) fail(ErrorKind::Config, "data.max_attempts must be positive");
}

// ---------------------------------------------------------------------------
// Shapes

namespace {

struct Pt {
  double y, x;
};

std::vector<Pt> blob_outline(const PatchSpec& s) {
  const std::size_t n = s.blob_radii.size();
  std::vector<Pt> ctrl(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = s.rotation + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    ctrl[i] = {s.center_y + s.blob_radii[i] * std::sin(a), s.center_x + s.blob_radii[i] * std::cos(a)};
  }
  // Quadratic segments between consecutive control-point midpoints.
  constexpr int kSteps = 16;
  std::vector<Pt> poly;
  poly.reserve(n * kSteps);
  for (std::size_t i = 0; i < n; ++i) {
    const Pt& p0 = ctrl[i];
    const Pt& p1 = ctrl[(i + 1) % n];
    const Pt& p2 = ctrl[(i + 2) % n];
    const Pt a{(p0.y + p1.y) / 2, (p0.x + p1.x) / 2};
    const Pt b{(p1.y + p2.y) / 2, (p1.x + p2.x) / 2};
    for (int k = 0; k < kSteps; ++k) {
      const double t = static_cast<double>(k) / kSteps;
      const double u = 1.0 - t;
      poly.push_back({u * u * a.y + 2 * u * t * p1.y + t * t * b.y, u * u * a.x + 2 * u * t * p1.x + t * t * b.x});
    }
  }
  return poly;
}

void scanline_fill(const std::vector<Pt>& poly, Tensor& mask) {
  const std::size_t H = mask.dim(0), W = mask.dim(1);
  std::vector<double> xs;
  for (std::size_t y = 0; y < H; ++y) {
    const double yc = static_cast<double>(y);
    xs.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Pt& a = poly[i];
      const Pt& b = poly[(i + 1) % poly.size()];
      if ((a.y <= yc) != (b.y <= yc)) xs.push_back(a.x + (yc - a.y) / (b.y - a.y) * (b.x - a.x));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const auto lo = static_cast<std::ptrdiff_t>(std::ceil(xs[k]));
      const auto hi = static_cast<std::ptrdiff_t>(std::floor(xs[k + 1]));
      for (auto x = std::max<std::ptrdiff_t>(lo, 0); x <= std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(W) - 1); ++x) {
        mask.at(y, static_cast<std::size_t>(x)) = 1.0;
      }
    }
  }
}

double edge_side(const Pt& a, const Pt& b, double y, double x) { return (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x); }

}  // namespace

Tensor patch_footprint(const PatchSpec& s, std::size_t height, std::size_t width) {
  Tensor mask({height, width});
  if (s.shape == PatchShape::BezierBlob) {
    if (s.blob_radii.size() < 3) fail(ErrorKind::InvalidInput, "bezier blob needs at least 3 control radii");
    scanline_fill(blob_outline(s), mask);
    return mask;
  }
  std::array<Pt, 3> tri{};
  if (s.shape == PatchShape::Triangle) {
    for (int k = 0; k < 3; ++k) {
      const double a = s.rotation + 2.0 * std::numbers::pi * k / 3.0;
      tri[k] = {s.center_y + s.radius * std::sin(a), s.center_x + s.radius * std::cos(a)};
    }
  }
  const double half = s.radius / std::numbers::sqrt2;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dy = static_cast<double>(y) - s.center_y, dx = static_cast<double>(x) - s.center_x;
      bool inside = false;
      switch (s.shape) {
        case PatchShape::Circle: inside = dy * dy + dx * dx <= s.radius * s.radius; break;
        case PatchShape::Square: inside = std::abs(dy) <= half && std::abs(dx) <= half; break;
        case PatchShape::Triangle: {
          const double yy = static_cast<double>(y), xx = static_cast<double>(x);
          const double d0 = edge_side(tri[0], tri[1], yy, xx);
          const double d1 = edge_side(tri[1], tri[2], yy, xx);
          const double d2 = edge_side(tri[2], tri[0], yy, xx);
          inside = (d0 >= 0 && d1 >= 0 && d2 >= 0) || (d0 <= 0 && d1 <= 0 && d2 <= 0);
          break;
        }
        case PatchShape::BezierBlob: break;
      }
      if (inside) mask.at(y, x) = 1.0;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Placement

namespace {

PatchSpec random_patch(std::mt19937_64& g, PatchShape shape, std::size_t H, std::size_t W, const DataConfig& d) {
  const double extent = static_cast<double>(std::min(H, W));
  PatchSpec s;
  s.shape = shape;
  s.radius = uniform(g, d.min_radius_fraction * extent, d.max_radius_fraction * extent);
  s.center_y = uniform(g, s.radius, static_cast<double>(H) - 1.0 - s.radius);
  s.center_x = uniform(g, s.radius, static_cast<double>(W) - 1.0 - s.radius);
  s.rotation = uniform(g, 0.0, 2.0 * std::numbers::pi);
  if (shape == PatchShape::BezierBlob) {
    s.blob_radii.resize(6);
    for (double& r : s.blob_radii) r = s.radius * uniform(g, 0.6, 1.0);
  }
  return s;
}

// Places specs (shapes given) without overlap; false if any patch cannot be placed.
bool place(std::mt19937_64& g, std::vector<PatchSpec>& specs, std::vector<Tensor>& masks, std::size_t H,
           std::size_t W, const DataConfig& d) {
  Tensor occupied({H, W});
  masks.clear();
  for (auto& spec : specs) {
    bool ok = false;
    for (int tries = 0; tries < 100 && !ok; ++tries) {
      const int color = spec.color_index;
      spec = random_patch(g, spec.shape, H, W, d);
      spec.color_index = color;
      Tensor m = patch_footprint(spec, H, W);
      bool clash = false;
      for (std::size_t i = 0; i < m.size() && !clash; ++i) clash = m[i] != 0.0 && occupied[i] != 0.0;
      if (clash || m.sum() == 0.0) continue;
      occupied += m;
      masks.push_back(std::move(m));
      ok = true;
    }
    if (!ok) return false;
  }
  return true;
}

bool coin(std::mt19937_64& g) { return (g() >> 63) != 0; }

}  // namespace

LabSample gen_single_color_sample(const SingleColorConfig& cfg, const DataConfig& d, std::size_t index) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width;
  for (std::size_t attempt = 0; attempt < d.max_attempts; ++attempt) {
    auto g = make_rng(d.seed, 1, index, attempt);
    std::vector<PatchSpec> specs(d.patches);
    for (auto& s : specs) s.shape = PatchShape::BezierBlob;
    std::vector<Tensor> masks;
    if (!place(g, specs, masks, H, W, d)) continue;
    LabSample s;
    s.environment = EnvironmentKind::SingleColor;
    s.index = index;
    s.seed = d.seed;
    s.image = Tensor({1, H, W});
    s.gt_signed = Tensor({H, W});
    bool thin = false;
    std::size_t white = 0;
    for (std::size_t p = 0; p < specs.size(); ++p) {
      std::size_t on = 0;
      for (std::size_t i = 0; i < H * W; ++i) {
        if (masks[p][i] != 0.0 && coin(g)) {
          s.image[i] = 255.0;
          s.gt_signed[i] = 1.0;
          ++on;
        }
      }
      specs[p].pixels = on;
      thin = thin || on < d.min_patch_pixels;
      white += on;
    }
    if (thin) continue;
    s.label = static_cast<int>(white % static_cast<std::size_t>(cfg.modulus));
    if (d.reject_zero_label && s.label == 0) continue;
    s.patches = std::move(specs);
    return s;
  }
  fail(ErrorKind::Config, "sample " + std::to_string(index) + ": no valid layout after " +
                              std::to_string(d.max_attempts) + " attempts");
}

LabSample gen_multi_color_sample(const MultiColorConfig& cfg, const DataConfig& d, std::size_t index) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width;
  const std::size_t nc = cfg.classes();
  for (std::size_t attempt = 0; attempt < d.max_attempts; ++attempt) {
    auto g = make_rng(d.seed, 2, index, attempt);
    std::vector<PatchSpec> specs(nc);
    for (std::size_t c = 0; c < nc; ++c) {
      specs[c].color_index = static_cast<int>(c);
      specs[c].shape = std::array{PatchShape::Triangle, PatchShape::Square, PatchShape::Circle}[g() % 3];
    }
    std::vector<Tensor> masks;
    if (!place(g, specs, masks, H, W, d)) continue;
    LabSample s;
    s.environment = EnvironmentKind::MultiColor;
    s.index = index;
    s.seed = d.seed;
    s.image = Tensor({3, H, W});
    for (std::size_t i = 0; i < H * W; ++i) {
      s.image[i] = cfg.background.r;
      s.image[H * W + i] = cfg.background.g;
      s.image[2 * H * W + i] = cfg.background.b;
    }
    std::vector<std::size_t> counts(nc, 0);
    Tensor owner({H, W}, -1.0);
    for (std::size_t c = 0; c < nc; ++c) {
      const Rgb col = cfg.targets[c];
      for (std::size_t i = 0; i < H * W; ++i) {
        if (masks[c][i] == 0.0 || coin(g)) continue;  // heads keep the background
        s.image[i] = col.r;
        s.image[H * W + i] = col.g;
        s.image[2 * H * W + i] = col.b;
        owner[i] = static_cast<double>(c);
        ++counts[c];
      }
      specs[c].pixels = counts[c];
    }
    if (*std::min_element(counts.begin(), counts.end()) < d.min_patch_pixels) continue;
    const auto best = std::max_element(counts.begin(), counts.end());
    if (std::count(counts.begin(), counts.end(), *best) > 1) continue;  // ties regenerate
    s.label = static_cast<int>(best - counts.begin());
    s.gt_signed = Tensor({H, W});
    for (std::size_t i = 0; i < H * W; ++i) {
      if (owner[i] >= 0.0) s.gt_signed[i] = static_cast<int>(owner[i]) == s.label ? 1.0 : -1.0;
    }
    s.patches = std::move(specs);
    return s;
  }
  fail(ErrorKind::Config, "sample " + std::to_string(index) + ": no valid layout after " +
                              std::to_string(d.max_attempts) + " attempts");
}

std::vector<LabSample> gen_single_color(const SingleColorConfig& cfg, const DataConfig& d) {
  d.validate();
  std::vector<LabSample> out;
  out.reserve(d.count);
  for (std::size_t i = 0; i < d.count; ++i) out.push_back(gen_single_color_sample(cfg, d, i));
  return out;
}

std::vector<LabSample> gen_multi_color(const MultiColorConfig& cfg, const DataConfig& d) {
  d.validate();
  std::vector<LabSample> out;
  out.reserve(d.count);
  for (std::size_t i = 0; i < d.count; ++i) out.push_back(gen_multi_color_sample(cfg, d, i));
  return out;
}

int label_from_gt(const LabSample& s, int modulus) {
  if (s.environment == EnvironmentKind::SingleColor) {
    std::size_t n = 0;
    for (double v : s.gt_signed.data()) n += v > 0.0 ? 1 : 0;
    return static_cast<int>(n % static_cast<std::size_t>(modulus));
  }
  // The +1 pixels all share the winning color; read it off the image.
  const std::size_t plane = s.height() * s.width();
  for (std::size_t i = 0; i < plane; ++i) {
    if (s.gt_signed[i] > 0.0) {
      for (const auto& p : s.patches) {
        const Tensor m = patch_footprint(p, s.height(), s.width());
        if (m[i] != 0.0) return p.color_index;
      }
    }
  }
  return -1;
}

// ---------------------------------------------------------------------------
// Ground-truth variants

std::string gt_variant_name(const GtVariant& v) {
  switch (v.kind) {
    case GtKind::Overall: return "overall";
    case GtKind::Positive: return "positive";
    case GtKind::Negative: return "negative";
    case GtKind::SmoothedPositive: return "smoothed-positive-" + std::to_string(v.radius);
  }
  return "?";
}

GtVariant gt_variant_from_name(const std::string& name) {
  if (name == "overall") return GtVariant::overall();
  if (name == "positive") return GtVariant::positive();
  if (name == "negative") return GtVariant::negative();
  const std::string prefix = "smoothed-positive-";
  if (name.rfind(prefix, 0) == 0) {
    try {
      return GtVariant::smoothed_positive(std::stoul(name.substr(prefix.size())));
    } catch (const std::exception&) {
    }
  }
  fail(ErrorKind::InvalidInput, "unknown ground-truth variant '" + name +
                                    "' (overall, positive, negative, smoothed-positive-<r>)");
}

Tensor gt_mask(const LabSample& s, const GtVariant& v) {
  Tensor m(s.gt_signed.shape());
  switch (v.kind) {
    case GtKind::Overall:
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(s.gt_signed[i]);
      break;
    case GtKind::Positive:
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::max(s.gt_signed[i], 0.0);
      break;
    case GtKind::Negative:
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::max(-s.gt_signed[i], 0.0);
      break;
    case GtKind::SmoothedPositive: {
      const auto H = static_cast<std::ptrdiff_t>(m.dim(0)), W = static_cast<std::ptrdiff_t>(m.dim(1));
      const auto r = static_cast<std::ptrdiff_t>(v.radius);
      for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t x = 0; x < W; ++x) {
          if (s.gt_signed.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) <= 0.0) continue;
          for (auto yy = std::max<std::ptrdiff_t>(0, y - r); yy <= std::min(H - 1, y + r); ++yy)
            for (auto xx = std::max<std::ptrdiff_t>(0, x - r); xx <= std::min(W - 1, x + r); ++xx)
              m.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) = 1.0;
        }
      break;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Disk layout

namespace {

std::string numbered(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu%s", i, ext);
  return buf;
}

json patch_to_json(const PatchSpec& p) {
  return {{"shape", patch_shape_name(p.shape)}, {"center_y", p.center_y}, {"center_x", p.center_x},
          {"radius", p.radius}, {"rotation", p.rotation}, {"blob_radii", p.blob_radii},
          {"color_index", p.color_index}, {"pixels", p.pixels}};
}

PatchSpec patch_from_json(const json& j) {
  PatchSpec p;
  p.shape = patch_shape_from_name(j.at("shape").get<std::string>());
  p.center_y = j.at("center_y").get<double>();
  p.center_x = j.at("center_x").get<double>();
  p.radius = j.at("radius").get<double>();
  p.rotation = j.at("rotation").get<double>();
  p.blob_radii = j.at("blob_radii").get<std::vector<double>>();
  p.color_index = j.at("color_index").get<int>();
  p.pixels = j.at("pixels").get<std::size_t>();
  return p;
}

std::string env_name(EnvironmentKind e) { return e == EnvironmentKind::SingleColor ? "single-color" : "multi-color"; }

EnvironmentKind env_from_name(const std::string& s, const std::filesystem::path& where) {
  if (s == "single-color") return EnvironmentKind::SingleColor;
  if (s == "multi-color") return EnvironmentKind::MultiColor;
  fail(ErrorKind::Io, where.string() + ": unknown environment '" + s + "'");
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorKind::Io, p.string() + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, p.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::Io, p.string() + ": write failed");
}

}  // namespace

void export_dataset(const std::vector<LabSample>& samples, const std::filesystem::path& dir,
                    const std::string& config_echo_json) {
  if (samples.empty()) fail(ErrorKind::InvalidInput, "refusing to export an empty dataset");
  namespace fs = std::filesystem;
  for (const char* sub : {"images", "gt", "meta"}) fs::create_directories(dir / sub);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const LabSample& s = samples[n];
    const std::size_t C = s.image.dim(0), H = s.height(), W = s.width();
    Image8 img{W, H, C, std::vector<std::uint8_t>(H * W * C)};
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H * W; ++i) img.pixels[i * C + c] = static_cast<std::uint8_t>(s.image[c * H * W + i]);
    write_png(dir / "images" / numbered(n, ".png"), img);
    Image8 gt{W, H, 1, std::vector<std::uint8_t>(H * W)};
    for (std::size_t i = 0; i < H * W; ++i) {
      const double v = s.gt_signed[i];
      gt.pixels[i] = v > 0.0 ? 255 : (v < 0.0 ? 0 : 128);
    }
    write_png(dir / "gt" / numbered(n, ".png"), gt);
    json meta{{"index", s.index}, {"seed", s.seed}, {"label", s.label}, {"environment", env_name(s.environment)},
              {"patches", json::array()}};
    for (const auto& p : s.patches) meta["patches"].push_back(patch_to_json(p));
    write_text(dir / "meta" / numbered(n, ".json"), meta.dump(2) + "\n");
  }
  json ds{{"format_version", 1},
          {"environment", env_name(samples.front().environment)},
          {"count", samples.size()},
          {"channels", samples.front().image.dim(0)},
          {"height", samples.front().height()},
          {"width", samples.front().width()},
          {"config", config_echo_json.empty() ? json::object() : json::parse(config_echo_json)}};
  write_text(dir / "dataset.json", ds.dump(2) + "\n");
}

std::vector<LabSample> import_dataset(const std::filesystem::path& dir) {
  const auto ds_path = dir / "dataset.json";
  const json ds = read_json(ds_path);
  std::size_t count = 0, C = 0, H = 0, W = 0;
  EnvironmentKind env{};
  try {
    if (ds.at("format_version").get<int>() != 1) fail(ErrorKind::Io, ds_path.string() + ": unsupported format_version");
    count = ds.at("count").get<std::size_t>();
    C = ds.at("channels").get<std::size_t>();
    H = ds.at("height").get<std::size_t>();
    W = ds.at("width").get<std::size_t>();
    env = env_from_name(ds.at("environment").get<std::string>(), ds_path);
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, ds_path.string() + ": " + e.what());
  }
  std::vector<LabSample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const auto img_path = dir / "images" / numbered(n, ".png");
    const auto gt_path = dir / "gt" / numbered(n, ".png");
    const auto meta_path = dir / "meta" / numbered(n, ".json");
    const Image8 img = read_png(img_path);
    if (img.channels != C || img.height != H || img.width != W) {
      fail(ErrorKind::Io, img_path.string() + ": geometry differs from dataset.json");
    }
    const Image8 gt = read_png(gt_path);
    if (gt.channels != 1 || gt.height != H || gt.width != W) {
      fail(ErrorKind::Io, gt_path.string() + ": geometry differs from dataset.json");
    }
    LabSample s;
    s.environment = env;
    s.image = Tensor({C, H, W});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H * W; ++i) s.image[c * H * W + i] = img.pixels[i * C + c];
    s.gt_signed = Tensor({H, W});
    for (std::size_t i = 0; i < H * W; ++i) {
      switch (gt.pixels[i]) {
        case 255: s.gt_signed[i] = 1.0; break;
        case 128: s.gt_signed[i] = 0.0; break;
        case 0: s.gt_signed[i] = -1.0; break;
        default: fail(ErrorKind::Io, gt_path.string() + ": value " + std::to_string(gt.pixels[i]) + " is not 0/128/255");
      }
    }
    const json meta = read_json(meta_path);
    try {
      s.index = meta.at("index").get<std::size_t>();
      s.seed = meta.at("seed").get<std::uint64_t>();
      s.label = meta.at("label").get<int>();
      for (const auto& p : meta.at("patches")) s.patches.push_back(patch_from_json(p));
    } catch (const json::exception& e) {
      fail(ErrorKind::Io, meta_path.string() + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace alab
