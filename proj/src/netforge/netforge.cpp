#include "alab/netforge.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "alab/error.hpp"
#include "alab/rng.hpp"

namespace alab {

std::string accumulator_mode_name(AccumulatorMode mode) {
  return mode == AccumulatorMode::Uniform ? "uniform" : "non-uniform";
}

AccumulatorMode accumulator_mode_from_name(const std::string& name) {
  if (name == "uniform") return AccumulatorMode::Uniform;
  if (name == "non-uniform") return AccumulatorMode::NonUniform;
  fail(ErrorKind::Config, "accumulator mode must be 'uniform' or 'non-uniform', got '" + name + "'");
}

std::string rgb_string(const Rgb& c) {
  return "(" + std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b) + ")";
}

void SingleColorConfig::validate() const {
  if (height == 0 || width == 0) fail(ErrorKind::Config, "single_color.height/width must be positive");
  if (modulus < 2) fail(ErrorKind::Config, "single_color.modulus must be at least 2");
  if (effective_capacity() < height * width) {
    fail(ErrorKind::Config, "single_color.capacity must be at least height*width");
  }
  if (effective_capacity() < static_cast<std::size_t>(modulus)) {
    fail(ErrorKind::Config, "single_color.capacity must be at least the modulus");
  }
}

void MultiColorConfig::validate() const {
  if (height == 0 || width == 0) fail(ErrorKind::Config, "multi_color.height/width must be positive");
  if (targets.empty()) fail(ErrorKind::Config, "multi_color.targets must list at least one color");
  auto in_range = [](const Rgb& c) {
    return c.r >= 0 && c.r <= 255 && c.g >= 0 && c.g <= 255 && c.b >= 0 && c.b <= 255;
  };
  if (!in_range(background)) fail(ErrorKind::Config, "multi_color.background components must lie in [0,255]");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!in_range(targets[i])) fail(ErrorKind::Config, "multi_color.targets[" + std::to_string(i) + "] out of [0,255]");
    if (targets[i] == background) {
      fail(ErrorKind::Config, "multi_color.targets[" + std::to_string(i) + "] equals the background color");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (targets[i] == targets[j]) {
        fail(ErrorKind::Config, "multi_color.targets[" + std::to_string(i) + "] repeats targets[" + std::to_string(j) + "]");
      }
    }
  }
  if (!(rho >= 0.0) || !std::isfinite(rho)) fail(ErrorKind::Config, "multi_color.rho must be finite and >= 0");
}

// ---------------------------------------------------------------------------
// Gates and the modulo head

namespace {

Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

void linear_relu(NetGraph& g, Tensor w, Tensor b) {
  g.add(Layer::linear(std::move(w), std::move(b)));
  g.add(Layer::relu());
}

}  // namespace

NetGraph build_gt_gate(int i) {
  if (i < 0) fail(ErrorKind::InvalidInput, "gt gate threshold must be >= 0");
  NetGraph g({1});
  linear_relu(g, Tensor({2, 1}, {1.0, 1.0}), Tensor({2}, {-double(i), -double(i) - 1.0}));
  linear_relu(g, Tensor({1, 2}, {1.0, -1.0}), Tensor({1}));
  return g;
}

NetGraph build_eq_gate(int n) {
  if (n < 0) fail(ErrorKind::InvalidInput, "eq gate value must be >= 0");
  const double v = n;
  NetGraph g({1});
  // I_{>n-1} and I_{>n} side by side, then their difference.
  linear_relu(g, Tensor({4, 1}, {1.0, 1.0, 1.0, 1.0}), Tensor({4}, {-(v - 1.0), -v, -v, -(v + 1.0)}));
  linear_relu(g, Tensor({2, 4}, {1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0}), Tensor({2}));
  linear_relu(g, Tensor({1, 2}, {1.0, -1.0}), Tensor({1}));
  return g;
}

NetGraph build_modulo_head(int n, std::size_t u) {
  if (n < 2 || static_cast<std::size_t>(n) > u) fail(ErrorKind::InvalidInput, "modulo head needs 2 <= N <= U");
  const double N = n;
  const std::size_t K = (u + static_cast<std::size_t>(n) - 1) / static_cast<std::size_t>(n);
  NetGraph g({1});

  // f1: shifted copies x - kN, k = 0..K
  Tensor w1 = matrix(K + 1, 1), b1({K + 1});
  for (std::size_t k = 0; k <= K; ++k) {
    w1[k] = 1.0;
    b1[k] = -N * static_cast<double>(k);
  }
  linear_relu(g, std::move(w1), std::move(b1));

  // f2: d_k = clamp(x - kN, 0, N)
  Tensor w2 = matrix(K, K + 1);
  for (std::size_t k = 0; k < K; ++k) {
    w2.at(k, k) = 1.0;
    w2.at(k, k + 1) = -1.0;
  }
  linear_relu(g, std::move(w2), Tensor({K}));

  // f3a..f3c: carry d_k and append flag_k = I_N(d_k)
  Tensor w3a = matrix(5 * K, K), b3a({5 * K});
  for (std::size_t k = 0; k < K; ++k) {
    const double shifts[5] = {0.0, -(N - 1.0), -N, -N, -(N + 1.0)};
    for (std::size_t r = 0; r < 5; ++r) {
      w3a.at(5 * k + r, k) = 1.0;
      b3a[5 * k + r] = shifts[r];
    }
  }
  linear_relu(g, std::move(w3a), std::move(b3a));

  Tensor w3b = matrix(3 * K, 5 * K);
  for (std::size_t k = 0; k < K; ++k) {
    w3b.at(3 * k, 5 * k) = 1.0;
    w3b.at(3 * k + 1, 5 * k + 1) = 1.0;
    w3b.at(3 * k + 1, 5 * k + 2) = -1.0;
    w3b.at(3 * k + 2, 5 * k + 3) = 1.0;
    w3b.at(3 * k + 2, 5 * k + 4) = -1.0;
  }
  linear_relu(g, std::move(w3b), Tensor({3 * K}));

  Tensor w3c = matrix(2 * K, 3 * K);
  for (std::size_t k = 0; k < K; ++k) {
    w3c.at(2 * k, 3 * k) = 1.0;
    w3c.at(2 * k + 1, 3 * k + 1) = 1.0;
    w3c.at(2 * k + 1, 3 * k + 2) = -1.0;
  }
  linear_relu(g, std::move(w3c), Tensor({2 * K}));

  // f4: d_k - N * flag_k zeroes every completed block
  Tensor w4 = matrix(K, 2 * K);
  for (std::size_t k = 0; k < K; ++k) {
    w4.at(k, 2 * k) = 1.0;
    w4.at(k, 2 * k + 1) = -N;
  }
  linear_relu(g, std::move(w4), Tensor({K}));

  // f5: the one partial block is the remainder
  linear_relu(g, Tensor({1, K}, 1.0), Tensor({1}));
  return g;
}

// ---------------------------------------------------------------------------
// Accumulator

std::vector<std::size_t> accumulator_schedule(std::size_t extent) {
  if (extent == 0) fail(ErrorKind::Config, "accumulator extent must be positive");
  std::vector<std::size_t> out;
  std::size_t rest = extent;
  while (rest > 1) {
    std::size_t k = 7;
    while (k >= 2 && rest % k != 0) --k;
    if (k < 2) {
      fail(ErrorKind::Config, "accumulator stage " + std::to_string(out.size()) + ": remaining extent " +
                                  std::to_string(rest) + " of " + std::to_string(extent) +
                                  " has no kernel size in 2..7 that tiles it");
    }
    out.push_back(k);
    rest /= k;
  }
  return out;
}

namespace {

// Least-norm m with W^T m = 1, W is K x n. Empty when rank-deficient.
std::vector<double> solve_mixing(const Eigen::MatrixXd& w) {
  const Eigen::MatrixXd a = w.transpose();
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  if (cod.rank() < a.rows()) return {};
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(a.rows());
  const Eigen::VectorXd m = cod.solve(ones);
  if ((a * m - ones).cwiseAbs().maxCoeff() > 1e-12 || !m.allFinite()) return {};
  return {m.data(), m.data() + m.size()};
}

}  // namespace

NetGraph build_accumulator(AccumulatorMode mode, std::size_t channels, std::size_t height, std::size_t width,
                           std::uint64_t seed) {
  if (channels == 0) fail(ErrorKind::InvalidInput, "accumulator needs at least one channel");
  auto sh = accumulator_schedule(height);
  auto sw = accumulator_schedule(width);
  const std::size_t stages = std::max<std::size_t>({sh.size(), sw.size(), 1});
  sh.resize(stages, 1);
  sw.resize(stages, 1);
  const std::size_t C = channels;
  NetGraph g({C, height, width});
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t kh = sh[s], kw = sw[s];
    if (mode == AccumulatorMode::Uniform) {
      Tensor w({C, C, kh, kw});
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < kh * kw; ++i) w[(c * C + c) * kh * kw + i] = 1.0;
      g.add(Layer::conv2d(std::move(w), Tensor({C}), kh, kw));
      g.add(Layer::relu());
      continue;
    }
    const std::size_t n = kh * kw, K = n + 1;
    Tensor w({C * K, C, kh, kw});
    Tensor m({C, C * K, 1, 1});
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> mix;
      Eigen::MatrixXd wc(K, n);
      for (std::size_t attempt = 0; mix.empty(); ++attempt) {
        if (attempt == 64) fail(ErrorKind::Numeric, "accumulator stage " + std::to_string(s) + ": no solvable mixing system");
        auto rng = make_rng(seed, 0xacc, s, c, attempt);
        for (std::size_t i = 0; i < K; ++i)
          for (std::size_t j = 0; j < n; ++j) wc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = uniform(rng, 0.5, 1.5);
        mix = solve_mixing(wc);
      }
      for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          w[((c * K + i) * C + c) * n + j] = wc(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
        m[c * C * K + c * K + i] = mix[i];
      }
    }
    g.add(Layer::conv2d(std::move(w), Tensor({C * K}), kh, kw));
    g.add(Layer::relu());
    g.add(Layer::conv2d(std::move(m), Tensor({C}), 1, 1));
    g.add(Layer::relu());
  }
  g.add_tap("sum", g.size() - 1);
  return g;
}

// ---------------------------------------------------------------------------
// Color detector

NetGraph build_color_detector(const MultiColorConfig& cfg, std::size_t H, std::size_t W) {
  cfg.validate();
  std::vector<Rgb> colors = cfg.targets;
  colors.push_back(cfg.background);
  const std::size_t P = colors.size();  // detected colors (targets + background)
  const std::size_t NC = cfg.classes(), NR = cfg.redundant;
  NetGraph g({3, H, W});

  auto component = [](const Rgb& c, std::size_t ch) { return double(ch == 0 ? c.r : ch == 1 ? c.g : c.b); };

  // Per (color, channel): x-(v-1), x-v, x-v, x-(v+1)
  Tensor w1({P * 12, 3, 1, 1}), b1({P * 12});
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = component(colors[p], ch);
      const double shifts[4] = {-(v - 1.0), -v, -v, -(v + 1.0)};
      for (std::size_t r = 0; r < 4; ++r) {
        const std::size_t o = (p * 3 + ch) * 4 + r;
        w1[o * 3 + ch] = 1.0;
        b1[o] = shifts[r];
      }
    }
  g.add(Layer::conv2d(std::move(w1), std::move(b1), 1, 1));
  g.add(Layer::relu());

  // I_{>v-1}, I_{>v}
  Tensor w2({P * 6, P * 12, 1, 1});
  for (std::size_t q = 0; q < P * 3; ++q) {
    w2[(2 * q) * P * 12 + 4 * q] = 1.0;
    w2[(2 * q) * P * 12 + 4 * q + 1] = -1.0;
    w2[(2 * q + 1) * P * 12 + 4 * q + 2] = 1.0;
    w2[(2 * q + 1) * P * 12 + 4 * q + 3] = -1.0;
  }
  g.add(Layer::conv2d(std::move(w2), Tensor({P * 6}), 1, 1));
  g.add(Layer::relu());

  // I_v per (color, channel)
  Tensor w3({P * 3, P * 6, 1, 1});
  for (std::size_t q = 0; q < P * 3; ++q) {
    w3[q * P * 6 + 2 * q] = 1.0;
    w3[q * P * 6 + 2 * q + 1] = -1.0;
  }
  g.add(Layer::conv2d(std::move(w3), Tensor({P * 3}), 1, 1));
  g.add(Layer::relu());

  // C_p = ReLU(I_R + I_G + I_B - 2)
  Tensor w4({P, P * 3, 1, 1}), b4({P}, -2.0);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t ch = 0; ch < 3; ++ch) w4[p * P * 3 + p * 3 + ch] = 1.0;
  g.add(Layer::conv2d(std::move(w4), std::move(b4), 1, 1));
  g.add(Layer::relu());

  // targets pass through; redundant channels fire when nothing matched
  Tensor w5({NC + NR, P, 1, 1}), b5({NC + NR});
  for (std::size_t t = 0; t < NC; ++t) w5[t * P + t] = 1.0;
  for (std::size_t r = 0; r < NR; ++r) {
    for (std::size_t p = 0; p < P; ++p) w5[(NC + r) * P + p] = -1.0;
    b5[NC + r] = 1.0;
  }
  g.add(Layer::conv2d(std::move(w5), std::move(b5), 1, 1));
  g.add(Layer::relu());
  g.add_tap("out", g.size() - 1);
  return g;
}

std::vector<double> redundant_weights(const MultiColorConfig& cfg) {
  const std::size_t NC = cfg.classes(), NR = cfg.redundant;
  std::vector<double> v(NC * NR, 0.0);
  if (NR == 0) return v;
  for (std::size_t attempt = 0;; ++attempt) {
    auto rng = make_rng(cfg.seed, 0x5ed, attempt);
    for (double& x : v) x = uniform(rng, -1.0, 1.0);
    double best = -1e300;
    for (std::size_t t = 0; t < NC; ++t) {
      double s = 0.0;
      for (std::size_t r = 0; r < NR; ++r) s += v[t * NR + r];
      best = std::max(best, s);
    }
    if (best > 0.1) return v;
  }
}

// ---------------------------------------------------------------------------
// Complete networks

NetGraph build_single_color_net(const SingleColorConfig& cfg) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width;
  NetGraph g({1, H, W});
  // Linear white indicator: 255 -> 1, 0 -> 0.
  g.add(Layer::conv2d(Tensor({1, 1, 1, 1}, {1.0 / 255.0}), Tensor({1}), 1, 1), "gate");
  g.append(build_accumulator(cfg.accumulator, 1, H, W, cfg.seed), "accumulator");
  g.add_tap("count", g.tap("accumulator.sum"));
  g.add(Layer::flatten());
  g.append(build_modulo_head(cfg.modulus, cfg.effective_capacity()), "modulo");
  return g;
}

NetGraph build_multi_color_net(const MultiColorConfig& cfg) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width;
  const std::size_t NC = cfg.classes(), NR = cfg.redundant;
  NetGraph g({3, H, W});
  g.append(build_color_detector(cfg, H, W), "detector");

  Tensor mix({NC, NC + NR, 1, 1});
  const auto v = redundant_weights(cfg);
  for (std::size_t t = 0; t < NC; ++t) {
    mix[t * (NC + NR) + t] = 1.0;
    for (std::size_t r = 0; r < NR; ++r) mix[t * (NC + NR) + NC + r] = cfg.rho * v[t * NR + r];
  }
  g.add(Layer::conv2d(std::move(mix), Tensor({NC}), 1, 1), "mix");
  g.append(build_accumulator(cfg.accumulator, NC, H, W, cfg.seed), "accumulator");
  g.add(Layer::flatten());

  Tensor eye({NC, NC});
  for (std::size_t t = 0; t < NC; ++t) eye.at(t, t) = 1.0;
  g.add(Layer::linear(std::move(eye), Tensor({NC})), "logits");
  g.add(Layer::softmax(), "probabilities");
  return g;
}

}  // namespace alab
