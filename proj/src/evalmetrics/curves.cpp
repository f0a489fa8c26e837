#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "../attribution/internal.hpp"
#include "alab/error.hpp"
#include "alab/evalmetrics.hpp"
#include "alab/rng.hpp"

namespace alab {

namespace {

void check_map(const Tensor& map, const LabSample& sample, const char* who) {
  if (map.rank() != 2 || map.dim(0) != sample.height() || map.dim(1) != sample.width()) {
    fail(ErrorKind::InvalidInput, std::string(who) + ": map shape " + shape_string(map.shape()) +
                                      " does not match the " + std::to_string(sample.height()) + " x " +
                                      std::to_string(sample.width()) + " image");
  }
  for (double v : map.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string(who) + ": map has non-finite values");
  }
}

/// First `count` entries of a uniformly random permutation of 0..n-1.
std::vector<std::uint32_t> random_prefix(std::mt19937_64& g, std::size_t n, std::size_t count) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  for (std::size_t i = 0; i < count && i + 1 < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(g() % (n - i));
    std::swap(p[i], p[j]);
  }
  p.resize(count);
  return p;
}

void copy_pixels(Tensor& dst, const Tensor& src, const std::vector<std::size_t>& order, std::size_t from,
                 std::size_t to) {
  const std::size_t C = dst.dim(0), plane = dst.dim(1) * dst.dim(2);
  for (std::size_t k = from; k < to; ++k) {
    for (std::size_t c = 0; c < C; ++c) dst[c * plane + order[k]] = src[c * plane + order[k]];
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::size_t gt_pixel_count(const LabSample& sample) {
  std::size_t n = 0;
  for (double v : sample.gt_signed.data()) n += v != 0.0;
  return n;
}

}  // namespace

double CurveResult::mean_y() const {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (i < degenerate.size() && degenerate[i]) continue;
    s += y[i];
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

nlohmann::json CurveResult::to_json() const {
  nlohmann::json j{{"x", x}, {"y", y}, {"auc", auc}, {"mean_y", mean_y()}};
  if (!degenerate.empty()) j["degenerate"] = degenerate;
  return j;
}

std::string CurveResult::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "x,y\n";
  for (std::size_t i = 0; i < x.size(); ++i) os << x[i] << ',' << y[i] << '\n';
  return os.str();
}

double trapezoid_auc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) fail(ErrorKind::InvalidInput, "trapezoid_auc: x and y differ in length");
  double a = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) a += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
  return a;
}

std::vector<std::size_t> attribution_order(const Tensor& map, std::optional<std::uint64_t> tie_seed) {
  const std::size_t n = map.size();
  std::vector<std::size_t> key(n);
  std::iota(key.begin(), key.end(), std::size_t{0});
  if (tie_seed) {
    auto g = make_rng(*tie_seed, 0x7135);
    for (std::size_t i = n; i > 1; --i) std::swap(key[i - 1], key[static_cast<std::size_t>(g() % i)]);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (map[a] != map[b]) return map[a] > map[b];
    return key[a] < key[b];
  });
  return order;
}

std::string curve_mode_name(CurveMode m) { return m == CurveMode::Insertion ? "insertion" : "deletion"; }

CurveResult insertion_deletion(const NetGraph& net, const LabSample& sample, const Tensor& map, CurveMode mode,
                               const CurveConfig& cfg) {
  check_map(map, sample, curve_mode_name(mode).c_str());
  if (!(cfg.step_fraction > 0.0 && cfg.step_fraction <= 1.0)) {
    fail(ErrorKind::Config, "step_fraction must be in (0, 1]");
  }
  cfg.replacement.validate();
  const NetGraph explained = detail::explained_net(net, cfg.output);
  const std::size_t out = detail::output_index(explained, cfg.target.value_or(default_target(net, sample)));

  const std::vector<std::size_t> order = attribution_order(map, cfg.tie_seed);
  const Tensor filler = cfg.replacement.image(sample.image.shape());
  Tensor canvas = mode == CurveMode::Deletion ? sample.image : filler;
  const Tensor& source = mode == CurveMode::Deletion ? filler : sample.image;

  const std::size_t n = order.size();
  const auto steps = static_cast<std::size_t>(std::ceil(1.0 / cfg.step_fraction - 1e-9));
  CurveResult r;
  std::size_t done = 0;
  for (std::size_t i = 0; i <= steps; ++i) {
    const double f = std::min(1.0, static_cast<double>(i) * cfg.step_fraction);
    const auto k = static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
    copy_pixels(canvas, source, order, done, k);
    done = k;
    r.x.push_back(f);
    r.y.push_back(evaluate(explained, canvas)[out]);
  }
  r.auc = trapezoid_auc(r.x, r.y);
  return r;
}

CurveResult adapted_insertion_deletion(const NetGraph& net, const LabSample& sample, const Tensor& map,
                                       CurveMode mode, double tolerance) {
  check_map(map, sample, ("adapted " + curve_mode_name(mode)).c_str());
  const std::size_t truth = gt_pixel_count(sample);
  if (truth == 0) fail(ErrorKind::InvalidInput, "adapted curves need at least one ground-truth pixel");

  const std::vector<std::size_t> order = attribution_order(map);
  const Tensor blank(sample.image.shape());
  const bool insertion = mode == CurveMode::Insertion;
  IncrementalForward inc(net, insertion ? blank : sample.image);
  const Tensor& source = insertion ? sample.image : blank;

  const std::size_t n = order.size();
  const double G = static_cast<double>(truth);
  auto value = [&](std::size_t correct) {
    return insertion ? static_cast<double>(correct) / G : 1.0 - static_cast<double>(correct) / G;
  };
  CurveResult r;
  r.x.push_back(0.0);
  r.y.push_back(value(0));
  Tensor prev = inc.output();
  std::size_t correct = 0;
  for (std::size_t s = 0; s < n && correct < truth; ++s) {
    inc.assign({order[s]}, source);
    if (max_abs_diff(inc.output(), prev) > tolerance) {
      ++correct;
      prev = inc.output();
    }
    r.x.push_back(static_cast<double>(s + 1) / static_cast<double>(n));
    r.y.push_back(value(correct));
  }
  if (r.x.back() < 1.0) {
    r.x.push_back(1.0);
    r.y.push_back(r.y.back());
  }
  r.auc = trapezoid_auc(r.x, r.y);
  return r;
}

CurveResult adapted_oracle_curve(const NetGraph& net, const LabSample& sample, CurveMode mode, double tolerance) {
  return adapted_insertion_deletion(net, sample, gt_mask(sample, GtVariant::overall()), mode, tolerance);
}

// ---------------------------------------------------------------------------
// Sensitivity-N

std::string sensitivity_mode_name(SensitivityMode m) { return m == SensitivityMode::Standard ? "standard" : "adapted"; }

void SensitivityConfig::validate() const {
  if (repeats < 2) fail(ErrorKind::Config, "sensitivity-n repeats must be at least 2");
  for (std::size_t i = 0; i < n_grid.size(); ++i) {
    if (n_grid[i] == 0 || (i > 0 && n_grid[i] <= n_grid[i - 1])) {
      fail(ErrorKind::Config, "sensitivity-n n_grid must be positive and strictly increasing");
    }
  }
  replacement.validate();
}

std::vector<std::size_t> default_n_grid(std::size_t pixels) {
  std::vector<std::size_t> g;
  for (std::size_t n = 1; n < pixels; n *= 2) g.push_back(n);
  if (pixels > 0) g.push_back(pixels);
  return g;
}

SensitivityProbe sensitivity_probe(const NetGraph& net, const LabSample& sample, const SensitivityConfig& cfg) {
  cfg.validate();
  const std::size_t n = sample.height() * sample.width();
  SensitivityProbe p;
  p.config = cfg;
  p.n_grid = cfg.n_grid.empty() ? default_n_grid(n) : cfg.n_grid;
  if (p.n_grid.back() > n) {
    fail(ErrorKind::Config, "sensitivity-n: N = " + std::to_string(p.n_grid.back()) + " exceeds the " +
                                std::to_string(n) + " pixels of the image");
  }
  const std::size_t reach = p.n_grid.back();
  auto g = make_rng(cfg.seed, 0x5e75, sample.index);
  for (std::size_t r = 0; r < cfg.repeats; ++r) p.orders.push_back(random_prefix(g, n, reach));
  p.response.assign(p.n_grid.size(), std::vector<double>(cfg.repeats, 0.0));

  if (cfg.mode == SensitivityMode::Standard) {
    const NetGraph explained = detail::explained_net(net, cfg.output);
    const std::size_t out = detail::output_index(explained, cfg.target.value_or(default_target(net, sample)));
    const double y0 = evaluate(explained, sample.image)[out];
    const Tensor filler = cfg.replacement.image(sample.image.shape());
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      Tensor canvas = sample.image;
      const std::vector<std::size_t> order(p.orders[r].begin(), p.orders[r].end());
      std::size_t done = 0;
      for (std::size_t i = 0; i < p.n_grid.size(); ++i) {
        copy_pixels(canvas, filler, order, done, p.n_grid[i]);
        done = p.n_grid[i];
        p.response[i][r] = y0 - evaluate(explained, canvas)[out];
      }
    }
    return p;
  }

  // Adapted: one extra pixel per step, counting steps that move the output.
  const Tensor blank(sample.image.shape());
  IncrementalForward inc(net, sample.image);
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    Tensor prev = inc.output();
    std::size_t correct = 0, next = 0;
    for (std::size_t s = 0; s < reach; ++s) {
      inc.assign({p.orders[r][s]}, blank);
      if (max_abs_diff(inc.output(), prev) > cfg.tolerance) {
        ++correct;
        prev = inc.output();
      }
      if (s + 1 == p.n_grid[next]) p.response[next++][r] = static_cast<double>(correct);
    }
    for (std::size_t s = 0; s < reach; ++s) inc.assign({p.orders[r][s]}, sample.image);
  }
  return p;
}

CurveResult sensitivity_n(const SensitivityProbe& probe, const Tensor& map) {
  const std::size_t n = map.size();
  if (!probe.orders.empty() && probe.orders.front().size() > n) {
    fail(ErrorKind::InvalidInput, "sensitivity-n: map has fewer pixels than the probe perturbs");
  }
  for (double v : map.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "sensitivity-n: map has non-finite values");
  }
  const std::size_t R = probe.orders.size();
  std::vector<std::vector<double>> sums(probe.n_grid.size(), std::vector<double>(R, 0.0));
  for (std::size_t r = 0; r < R; ++r) {
    double acc = 0.0;
    std::size_t s = 0;
    for (std::size_t i = 0; i < probe.n_grid.size(); ++i) {
      for (; s < probe.n_grid[i]; ++s) acc += map[probe.orders[r][s]];
      sums[i][r] = acc;
    }
  }
  CurveResult c;
  for (std::size_t i = 0; i < probe.n_grid.size(); ++i) {
    bool flat = false;
    c.x.push_back(static_cast<double>(probe.n_grid[i]));
    c.y.push_back(pearson(probe.response[i], sums[i], &flat));
    c.degenerate.push_back(flat);
  }
  std::vector<double> fraction;
  for (double v : c.x) fraction.push_back(v / static_cast<double>(n));
  c.auc = trapezoid_auc(fraction, c.y);
  return c;
}

}  // namespace alab
