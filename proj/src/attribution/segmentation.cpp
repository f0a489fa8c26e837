#include <algorithm>
#include <cmath>
#include <numeric>

#include "alab/error.hpp"
#include "internal.hpp"

namespace alab {

nlohmann::json SegmentationConfig::to_json() const {
  if (kind == SegmentationKind::Grid) return {{"kind", "grid"}, {"cell", cell}};
  return {{"kind", "felzenszwalb"}, {"scale", scale}, {"sigma", sigma}, {"min_size", min_size}};
}

SegmentationConfig SegmentationConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::Config, "segmentation must be an object");
  SegmentationConfig s;
  const std::string kind = j.value("kind", std::string("grid"));
  if (kind == "grid") {
    s.kind = SegmentationKind::Grid;
  } else if (kind == "felzenszwalb") {
    s.kind = SegmentationKind::Felzenszwalb;
  } else {
    fail(ErrorKind::Config, "segmentation.kind must be grid or felzenszwalb, got '" + kind + "'");
  }
  for (const auto& [key, v] : j.items()) {
    if (key == "kind") continue;
    if (key == "cell") {
      s.cell = v.get<std::size_t>();
    } else if (key == "scale") {
      s.scale = v.get<double>();
    } else if (key == "sigma") {
      s.sigma = v.get<double>();
    } else if (key == "min_size") {
      s.min_size = v.get<std::size_t>();
    } else {
      fail(ErrorKind::Config, "segmentation: unknown field '" + key + "'");
    }
  }
  return s;
}

Segmentation segment_grid(const LabSample& sample, std::size_t cell) {
  if (cell == 0) fail(ErrorKind::Config, "segmentation.cell must be positive");
  const std::size_t H = sample.height(), W = sample.width();
  const std::size_t cols = (W + cell - 1) / cell, rows = (H + cell - 1) / cell;
  Segmentation s;
  s.labels = Tensor({H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) s.labels.at(y, x) = static_cast<double>((y / cell) * cols + x / cell);
  }
  s.count = rows * cols;
  s.algorithm = "grid";
  s.params = {{"cell", cell}};
  return s;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (image.rank() != 3) fail(ErrorKind::InvalidInput, "gaussian_blur expects C x H x W");
  if (!(sigma > 0.0)) return image;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  }
  const double norm = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= norm;

  const auto C = image.dim(0);
  const auto H = static_cast<std::ptrdiff_t>(image.dim(1)), W = static_cast<std::ptrdiff_t>(image.dim(2));
  auto clamp = [](std::ptrdiff_t v, std::ptrdiff_t n) { return std::clamp<std::ptrdiff_t>(v, 0, n - 1); };
  Tensor tmp(image.shape()), out(image.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
          acc += k[static_cast<std::size_t>(i + radius)] * image.at(c, y, clamp(x + i, W));
        }
        tmp.at(c, y, x) = acc;
      }
    }
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
          acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(c, clamp(y + i, H), x);
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

namespace {

struct DisjointSets {
  std::vector<std::size_t> parent, size;
  std::vector<double> internal;  // largest edge inside each component's spanning tree

  explicit DisjointSets(std::size_t n) : parent(n), size(n, 1), internal(n, 0.0) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void join(std::size_t a, std::size_t b, double w) {
    if (size[a] < size[b]) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
    internal[a] = std::max({internal[a], internal[b], w});
  }
};

struct Edge {
  std::uint32_t a, b;
  double w;
};

}  // namespace

Segmentation segment_felzenszwalb(const LabSample& sample, double scale, double sigma, std::size_t min_size) {
  if (!(scale > 0.0) || sigma < 0.0) fail(ErrorKind::Config, "felzenszwalb: scale must be positive, sigma >= 0");
  const Tensor img = gaussian_blur(sample.image, sigma);
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2), plane = H * W;

  std::vector<Edge> edges;
  edges.reserve(4 * plane);
  auto weight = [&](std::size_t p, std::size_t q) {
    double d = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double t = img[c * plane + p] - img[c * plane + q];
      d += t * t;
    }
    return std::sqrt(d);
  };
  auto link = [&](std::size_t p, std::size_t q) {
    edges.push_back({static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(q), weight(p, q)});
  };
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t p = y * W + x;
      if (x + 1 < W) link(p, p + 1);
      if (y + 1 < H) link(p, p + W);
      if (x + 1 < W && y + 1 < H) link(p, p + W + 1);
      if (x + 1 < W && y > 0) link(p, p - W + 1);
    }
  }
  std::stable_sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.w < r.w; });

  DisjointSets ds(plane);
  for (const Edge& e : edges) {
    const std::size_t a = ds.find(e.a), b = ds.find(e.b);
    if (a == b) continue;
    const double ta = ds.internal[a] + scale / static_cast<double>(ds.size[a]);
    const double tb = ds.internal[b] + scale / static_cast<double>(ds.size[b]);
    if (e.w <= std::min(ta, tb)) ds.join(a, b, e.w);
  }
  for (const Edge& e : edges) {
    const std::size_t a = ds.find(e.a), b = ds.find(e.b);
    if (a != b && (ds.size[a] < min_size || ds.size[b] < min_size)) ds.join(a, b, e.w);
  }

  Segmentation s;
  s.labels = Tensor({H, W});
  std::vector<std::ptrdiff_t> id(plane, -1);
  for (std::size_t p = 0; p < plane; ++p) {
    const std::size_t r = ds.find(p);
    if (id[r] < 0) id[r] = static_cast<std::ptrdiff_t>(s.count++);
    s.labels[p] = static_cast<double>(id[r]);
  }
  s.algorithm = "felzenszwalb";
  s.params = {{"scale", scale}, {"sigma", sigma}, {"min_size", min_size}};
  return s;
}

Segmentation segment(const LabSample& sample, const SegmentationConfig& cfg) {
  if (cfg.kind == SegmentationKind::Grid) return segment_grid(sample, cfg.cell);
  return segment_felzenszwalb(sample, cfg.scale, cfg.sigma, cfg.min_size);
}

}  // namespace alab
