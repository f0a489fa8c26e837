#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "alab/error.hpp"
#include "alab/rng.hpp"
#include "internal.hpp"

namespace alab {

OcclusionConfig default_occlusion(EnvironmentKind env) {
  OcclusionConfig c;
  if (env == EnvironmentKind::SingleColor) c.window_c = c.stride_c = 1;
  return c;
}

AttributionMap occlusion(const NetGraph& net, const LabSample& sample, int target, const OcclusionConfig& cfg) {
  const Tensor& x0 = sample.image;
  if (x0.shape() != net.input_shape()) fail(ErrorKind::InvalidInput, "occlusion: sample does not match network");
  cfg.baseline.validate();
  const std::size_t C = x0.dim(0), H = x0.dim(1), W = x0.dim(2);
  if (cfg.window_c == 0 || cfg.window_h == 0 || cfg.window_w == 0 || cfg.stride_c == 0 || cfg.stride_h == 0 ||
      cfg.stride_w == 0) {
    fail(ErrorKind::Config, "occlusion: window and strides must be positive");
  }
  if (cfg.window_c > C || cfg.window_h > H || cfg.window_w > W) {
    fail(ErrorKind::Config, "occlusion: window larger than the image");
  }
  const NetGraph ex = detail::explained_net(net, cfg.output);
  const std::size_t idx = detail::output_index(ex, target);
  const double y0 = evaluate(ex, x0)[idx];

  Tensor total(x0.shape()), cover(x0.shape());
  Tensor x = x0;
  for (std::size_t c0 = 0; c0 + cfg.window_c <= C; c0 += cfg.stride_c) {
    for (std::size_t i0 = 0; i0 + cfg.window_h <= H; i0 += cfg.stride_h) {
      for (std::size_t j0 = 0; j0 + cfg.window_w <= W; j0 += cfg.stride_w) {
        for (std::size_t c = c0; c < c0 + cfg.window_c; ++c) {
          for (std::size_t i = i0; i < i0 + cfg.window_h; ++i) {
            for (std::size_t j = j0; j < j0 + cfg.window_w; ++j) x.at(c, i, j) = cfg.baseline.channel_value(c);
          }
        }
        const double d = y0 - evaluate(ex, x)[idx];
        for (std::size_t c = c0; c < c0 + cfg.window_c; ++c) {
          for (std::size_t i = i0; i < i0 + cfg.window_h; ++i) {
            for (std::size_t j = j0; j < j0 + cfg.window_w; ++j) {
              total.at(c, i, j) += d;
              cover.at(c, i, j) += 1.0;
              x.at(c, i, j) = x0.at(c, i, j);
            }
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < total.size(); ++i) {
    if (cover[i] > 0.0) total[i] /= cover[i];
  }
  return detail::make_map(detail::reduce_channels(total, false), "occlusion", target,
                          {{"window", {cfg.window_c, cfg.window_h, cfg.window_w}},
                           {"strides", {cfg.stride_c, cfg.stride_h, cfg.stride_w}},
                           {"baseline", cfg.baseline.to_json()},
                           {"output", output_mode_name(cfg.output)},
                           {"reduction", "signed-sum"}});
}

// ---------------------------------------------------------------------------
// LIME

std::vector<double> weighted_ridge(const std::vector<std::vector<double>>& z, const std::vector<double>& y,
                                   const std::vector<double>& weights, double lambda) {
  const std::size_t n = z.size();
  if (n == 0 || y.size() != n || weights.size() != n) fail(ErrorKind::InvalidInput, "weighted_ridge: size mismatch");
  const std::size_t d = z.front().size();
  double wsum = 0.0;
  Eigen::VectorXd zmean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  double ymean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (z[i].size() != d) fail(ErrorKind::InvalidInput, "weighted_ridge: ragged design matrix");
    wsum += weights[i];
    ymean += weights[i] * y[i];
    for (std::size_t k = 0; k < d; ++k) zmean[static_cast<Eigen::Index>(k)] += weights[i] * z[i][k];
  }
  if (!(wsum > 0.0)) fail(ErrorKind::Numeric, "weighted_ridge: weights sum to zero");
  zmean /= wsum;
  ymean /= wsum;

  const auto D = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(D, D);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(D);
  Eigen::VectorXd row(D);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < D; ++k) row[k] = z[i][static_cast<std::size_t>(k)] - zmean[k];
    A.selfadjointView<Eigen::Lower>().rankUpdate(row, weights[i]);
    b += weights[i] * (y[i] - ymean) * row;
  }
  A = A.selfadjointView<Eigen::Lower>();

  for (int attempt = 0; attempt < 2; ++attempt) {
    const double lam = attempt == 0 ? lambda : std::max(lambda, 1e-12) * 1e3;
    Eigen::MatrixXd M = A;
    M.diagonal().array() += lam;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-14) continue;
    const Eigen::VectorXd w = ldlt.solve(b);
    if (!w.allFinite()) continue;
    std::vector<double> out(w.data(), w.data() + D);
    out.push_back(ymean - zmean.dot(w));
    return out;
  }
  fail(ErrorKind::Numeric, "weighted_ridge: system is singular even after raising the ridge penalty");
}

AttributionMap lime(const NetGraph& net, const LabSample& sample, int target, const LimeConfig& cfg) {
  const Tensor& x0 = sample.image;
  if (x0.shape() != net.input_shape()) fail(ErrorKind::InvalidInput, "lime: sample does not match network");
  cfg.baseline.validate();
  if (!(cfg.kernel_width > 0.0) || cfg.ridge < 0.0) fail(ErrorKind::Config, "lime: kernel_width > 0, ridge >= 0");
  const Segmentation seg = segment(sample, cfg.segmentation);
  const std::size_t S = seg.count;
  if (cfg.samples < 2 * S) {
    fail(ErrorKind::Config, "lime: samples (" + std::to_string(cfg.samples) + ") must be at least twice the " +
                                std::to_string(S) + " segments");
  }
  const NetGraph ex = detail::explained_net(net, cfg.output);
  const std::size_t idx = detail::output_index(ex, target);
  const std::size_t C = x0.dim(0), plane = x0.dim(1) * x0.dim(2);

  std::vector<std::vector<std::size_t>> members(S);
  for (std::size_t p = 0; p < plane; ++p) members[static_cast<std::size_t>(seg.labels[p])].push_back(p);

  auto g = make_rng(cfg.seed, 0x11e, sample.index);
  std::vector<std::vector<double>> z(cfg.samples, std::vector<double>(S, 1.0));
  std::vector<double> y(cfg.samples), w(cfg.samples);
  Tensor x = x0;
  for (std::size_t n = 0; n < cfg.samples; ++n) {
    // The first row is the unperturbed image.
    if (n > 0) {
      for (double& bit : z[n]) bit = static_cast<double>(g() >> 63);
    }
    std::size_t on = 0;
    for (std::size_t s = 0; s < S; ++s) {
      const bool keep = z[n][s] != 0.0;
      on += keep ? 1 : 0;
      for (std::size_t c = 0; c < C; ++c) {
        const double fill = cfg.baseline.channel_value(c);
        for (std::size_t p : members[s]) x[c * plane + p] = keep ? x0[c * plane + p] : fill;
      }
    }
    y[n] = evaluate(ex, x)[idx];
    const double cosine = on == 0 ? 0.0 : std::sqrt(static_cast<double>(on) / static_cast<double>(S));
    const double dist = 1.0 - cosine;
    w[n] = std::sqrt(std::exp(-(dist * dist) / (cfg.kernel_width * cfg.kernel_width)));
  }
  const std::vector<double> coef = weighted_ridge(z, y, w, cfg.ridge);

  Tensor values({x0.dim(1), x0.dim(2)});
  for (std::size_t p = 0; p < plane; ++p) values[p] = coef[static_cast<std::size_t>(seg.labels[p])];
  return detail::make_map(std::move(values), "lime", target,
                          {{"segmentation", cfg.segmentation.to_json()},
                           {"samples", cfg.samples},
                           {"kernel_width", cfg.kernel_width},
                           {"ridge", cfg.ridge},
                           {"seed", cfg.seed},
                           {"baseline", cfg.baseline.to_json()},
                           {"output", output_mode_name(cfg.output)}});
}

// ---------------------------------------------------------------------------
// Extremal perturbation

AttributionMap extremal_perturbation(const NetGraph& net, const LabSample& sample, int target,
                                     const ExPerturbConfig& cfg) {
  const Tensor& x0 = sample.image;
  if (x0.shape() != net.input_shape()) fail(ErrorKind::InvalidInput, "extremal_perturbation: sample mismatch");
  if (!(cfg.area > 0.0 && cfg.area <= 1.0)) fail(ErrorKind::Config, "extremal_perturbation: area must be in (0, 1]");
  if (cfg.mask_stride == 0 || cfg.steps == 0 || !(cfg.step_size > 0.0) || cfg.penalty < 0.0) {
    fail(ErrorKind::Config, "extremal_perturbation: steps, step_size and mask_stride must be positive");
  }
  const std::size_t C = x0.dim(0), H = x0.dim(1), W = x0.dim(2), n = H * W;
  const double sigma =
      cfg.blur_sigma > 0.0 ? cfg.blur_sigma : 21.0 * static_cast<double>(std::min(H, W)) / 224.0;
  const Tensor blurred = gaussian_blur(x0, sigma);
  const Tensor diff = x0 - blurred;

  const NetGraph ex = detail::explained_net(net, cfg.output);
  const std::size_t idx = detail::output_index(ex, target);
  const Tensor seed = detail::one_hot(ex, target);
  const double y_ref = std::abs(evaluate(ex, x0)[idx]);
  const double scale = y_ref > 0.0 ? 1.0 / y_ref : 1.0;

  const std::size_t h = (H + cfg.mask_stride - 1) / cfg.mask_stride;
  const std::size_t w = (W + cfg.mask_stride - 1) / cfg.mask_stride;
  const auto taps = detail::bilinear_taps(h, w, H, W);
  std::vector<double> theta(h * w, cfg.init_logit), p(h * w), m(n), gm(n), gp(h * w);

  // Target for the sorted mask: zeros then ones, with `area` of them ones.
  const auto ones = static_cast<std::size_t>(std::lround(cfg.area * static_cast<double>(n)));
  std::vector<double> ref(n, 0.0);
  std::fill(ref.end() - static_cast<std::ptrdiff_t>(std::min(ones, n)), ref.end(), 1.0);
  std::vector<std::size_t> order(n);

  Tensor x(x0.shape());
  auto build_mask = [&] {
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = 1.0 / (1.0 + std::exp(-theta[k]));
    for (std::size_t i = 0; i < n; ++i) {
      double v = 0.0;
      for (const auto& [src, wt] : taps[i]) v += wt * p[src];
      m[i] = v;
    }
  };
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    build_mask();
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < n; ++i) x[c * n + i] = blurred[c * n + i] + m[i] * diff[c * n + i];
    }
    const ForwardResult fr = forward(ex, x);
    if (!std::isfinite(fr.output[idx])) {
      fail(ErrorKind::Numeric, "extremal_perturbation diverged at iteration " + std::to_string(step));
    }
    const Tensor g = backward(ex, fr.trace, seed);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < C; ++c) acc += g[c * n + i] * diff[c * n + i];
      gm[i] = scale * acc;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m[a] < m[b]; });
    for (std::size_t k = 0; k < n; ++k) gm[order[k]] -= 2.0 * cfg.penalty * (m[order[k]] - ref[k]);

    std::fill(gp.begin(), gp.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& [src, wt] : taps[i]) gp[src] += wt * gm[i];
    }
    for (std::size_t k = 0; k < theta.size(); ++k) {
      theta[k] += cfg.step_size * gp[k] * p[k] * (1.0 - p[k]);
      if (!std::isfinite(theta[k])) {
        fail(ErrorKind::Numeric, "extremal_perturbation diverged at iteration " + std::to_string(step));
      }
    }
  }
  build_mask();
  Tensor values({H, W});
  std::copy(m.begin(), m.end(), values.raw());
  return detail::make_map(std::move(values), "extremal-perturbation", target,
                          {{"area", cfg.area},
                           {"blur_sigma", sigma},
                           {"steps", cfg.steps},
                           {"step_size", cfg.step_size},
                           {"penalty", cfg.penalty},
                           {"init_logit", cfg.init_logit},
                           {"mask_stride", cfg.mask_stride},
                           {"output", output_mode_name(cfg.output)}});
}

}  // namespace alab
