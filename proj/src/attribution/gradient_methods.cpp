#include <algorithm>
#include <cmath>
#include <tuple>

#include "alab/error.hpp"
#include "internal.hpp"

namespace alab {

namespace {

const Tensor& checked_image(const NetGraph& net, const LabSample& sample) {
  if (sample.image.shape() != net.input_shape()) {
    fail(ErrorKind::InvalidInput, "sample image " + shape_string(sample.image.shape()) +
                                      " does not match network input " + shape_string(net.input_shape()));
  }
  return sample.image;
}

bool explains_probability(const NetGraph& net, OutputMode mode) {
  return mode != OutputMode::Logit && net.ends_with_softmax();
}

}  // namespace

AttributionMap saliency(const NetGraph& net, const LabSample& sample, int target, const SaliencyConfig& cfg) {
  const Tensor& x = checked_image(net, sample);
  const NetGraph ex = detail::explained_net(net, cfg.output);
  const ForwardResult fr = forward(ex, x);
  const Tensor g = backward(ex, fr.trace, detail::one_hot(ex, target));
  return detail::make_map(detail::reduce_channels(g, true), "saliency", target,
                          {{"output", output_mode_name(cfg.output)}, {"reduction", "abs-sum"}});
}

AttributionMap guided_backprop(const NetGraph& net, const LabSample& sample, int target, const GuidedConfig& cfg) {
  const Tensor& x = checked_image(net, sample);
  const NetGraph ex = detail::explained_net(net, cfg.output);
  const ForwardResult fr = forward(ex, x);
  const Tensor g = modified_backward(ex, fr.trace, detail::one_hot(ex, target), BackwardRule::GuidedReLU);
  return detail::make_map(detail::reduce_channels(g, true), "guided-backprop", target,
                          {{"output", output_mode_name(cfg.output)}, {"reduction", "abs-sum"}});
}

Tensor integrated_gradients_raw(const NetGraph& net, const Tensor& x, const Tensor& baseline, int target,
                                const IgConfig& cfg, std::size_t* segments) {
  if (x.shape() != net.input_shape() || baseline.shape() != net.input_shape()) {
    fail(ErrorKind::InvalidInput, "integrated gradients: input and baseline must match the network input");
  }
  const Tensor dx = x - baseline;
  Tensor acc(x.shape());
  std::size_t pieces = 0;

  if (cfg.integration == IgIntegration::Midpoint) {
    if (cfg.steps < 8) fail(ErrorKind::Config, "integrated gradients: steps must be at least 8");
    const NetGraph ex = detail::explained_net(net, cfg.output);
    const Tensor seed = detail::one_hot(ex, target);
    for (std::size_t k = 0; k < cfg.steps; ++k) {
      const double a = (static_cast<double>(k) + 0.5) / static_cast<double>(cfg.steps);
      const ForwardResult fr = forward(ex, baseline + dx * a);
      acc += backward(ex, fr.trace, seed);
    }
    acc *= 1.0 / static_cast<double>(cfg.steps);
    pieces = cfg.steps;
  } else {
    // On each linear piece of the path the gradient of the piecewise-linear
    // part is constant, so one backward pass per piece is exact. A trailing
    // softmax is integrated analytically along the piece's logit segment.
    const bool prob = explains_probability(net, cfg.output);
    const NetGraph pl = net.without_softmax();
    const Tensor seed = detail::one_hot(pl, target);
    auto next_piece = [&](double a, double breakpoint) {
      if (++pieces > cfg.max_segments) {
        fail(ErrorKind::Numeric, "integrated gradients: more than " + std::to_string(cfg.max_segments) +
                                     " linear pieces along the path");
      }
      return std::min(1.0, a + breakpoint);
    };
    auto piece_seed = [&](const TangentResult& tr, double len) {
      Tensor s = prob ? integrated_softmax_vjp(tr.output, tr.output + tr.output_tangent * len, seed) : seed;
      s *= len;
      return s;
    };

    const std::size_t lead = cfg.compress_pixels ? pl.pointwise_prefix() : 0;
    PixelClasses pc;
    if (lead > 0 && lead < pl.size()) pc = pixel_classes(x, &baseline);
    const std::size_t plane = x.rank() == 3 ? x.dim(1) * x.dim(2) : 0;

    if (pc.count() == 0 || 4 * pc.count() > plane) {
      double a = 0.0;
      while (a < 1.0) {
        const TangentResult tr = forward_tangent(pl, baseline + dx * a, dx);
        const double b = next_piece(a, tr.next_breakpoint);
        const ForwardResult fr = forward(pl, baseline + dx * (0.5 * (a + b)));
        acc += backward(pl, fr.trace, piece_seed(tr, b - a));
        a = b;
      }
    } else {
      // The pointwise block runs on one column per distinct pixel; its
      // Jacobian per column maps the rest's input gradient back per pixel.
      const std::size_t H = x.dim(1), W = x.dim(2), K = pc.count(), Cin = x.dim(0);
      const NetGraph strip = pl.pointwise_strip(lead, K);
      const NetGraph rest = pl.suffix(lead);
      const Tensor bs = gather_strip(baseline, pc), ds = gather_strip(dx, pc);
      const std::size_t Cl = strip.output_shape()[0];
      std::vector<Tensor> jac(Cl);
      double a = 0.0;
      while (a < 1.0) {
        const TangentResult t1 = forward_tangent(strip, bs + ds * a, ds);
        const Tensor V = scatter_strip(t1.output, pc, H, W), T = scatter_strip(t1.output_tangent, pc, H, W);
        const TangentResult t2 = forward_tangent(rest, V, T);
        const double b = next_piece(a, std::min(t1.next_breakpoint, t2.next_breakpoint));
        const double len = b - a;
        const ForwardResult fr = forward(rest, V + T * (0.5 * len));
        const Tensor gl = backward(rest, fr.trace, piece_seed(t2, len));
        const ForwardResult fs = forward(strip, bs + ds * (0.5 * (a + b)));
        for (std::size_t c = 0; c < Cl; ++c) {
          Tensor sc(strip.output_shape());
          std::fill_n(sc.raw() + c * K, K, 1.0);
          jac[c] = backward(strip, fs.trace, sc);
        }
        for (std::size_t ch = 0; ch < Cin; ++ch) {
          double* out = acc.raw() + ch * plane;
          for (std::size_t c = 0; c < Cl; ++c) {
            const double* j = jac[c].raw() + ch * K;
            const double* g = gl.raw() + c * plane;
            for (std::size_t p = 0; p < plane; ++p) out[p] += j[pc.class_of[p]] * g[p];
          }
        }
        a = b;
      }
    }
  }
  if (segments) *segments = pieces;
  return hadamard(acc, dx);
}

AttributionMap integrated_gradients(const NetGraph& net, const LabSample& sample, int target, const IgConfig& cfg) {
  const Tensor& x = checked_image(net, sample);
  cfg.baseline.validate();
  const Tensor attr = integrated_gradients_raw(net, x, cfg.baseline.image(x.shape()), target, cfg);
  nlohmann::json p{{"baseline", cfg.baseline.to_json()},
                   {"integration", cfg.integration == IgIntegration::Exact ? "exact" : "midpoint"},
                   {"output", output_mode_name(cfg.output)},
                   {"reduction", "signed-sum"}};
  if (cfg.integration == IgIntegration::Midpoint) p["steps"] = cfg.steps;
  return detail::make_map(detail::reduce_channels(attr, false), "integrated-gradients", target, std::move(p));
}

AttributionMap deeplift_rescale(const NetGraph& net, const LabSample& sample, int target,
                                const DeepLiftConfig& cfg) {
  const Tensor& x = checked_image(net, sample);
  cfg.baseline.validate();
  const NetGraph ex = detail::explained_net(net, cfg.output);
  const ForwardResult fx = forward(ex, x);
  const ForwardResult fb = forward(ex, cfg.baseline.image(x.shape()));
  const Tensor c = modified_backward(ex, fx.trace, detail::one_hot(ex, target), BackwardRule::DeepLIFTRescale,
                                     &fb.trace);
  return detail::make_map(detail::reduce_channels(c, false), "deeplift", target,
                          {{"baseline", cfg.baseline.to_json()},
                           {"output", output_mode_name(cfg.output)},
                           {"reduction", "signed-sum"}});
}

AttributionMap lrp_epsilon(const NetGraph& net, const LabSample& sample, int target, const LrpConfig& cfg) {
  const Tensor& x = checked_image(net, sample);
  const ForwardResult fr = forward(net, x);
  const Tensor r =
      modified_backward(net, fr.trace, detail::one_hot(net, target), BackwardRule::LRPEpsilon, nullptr, cfg.epsilon);
  return detail::make_map(detail::reduce_channels(r, false), "lrp", target,
                          {{"epsilon", cfg.epsilon}, {"output", "logit"}, {"reduction", "signed-sum"}});
}

std::string default_gradcam_tap(EnvironmentKind env) {
  return env == EnvironmentKind::SingleColor ? "accumulator.layers.5" : "accumulator.layers.7";
}

namespace detail {

BilinearTaps bilinear_taps(std::size_t h, std::size_t w, std::size_t height, std::size_t width) {
  auto coord = [](std::size_t dst, std::size_t in, std::size_t out) {
    const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    const double c = std::max(s, 0.0);
    const auto i0 = std::min(static_cast<std::size_t>(c), in - 1);
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    return std::tuple{i0, i1, std::min(c - static_cast<double>(i0), 1.0)};
  };
  BilinearTaps taps(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    const auto [y0, y1, fy] = coord(y, h, height);
    for (std::size_t x = 0; x < width; ++x) {
      const auto [x0, x1, fx] = coord(x, w, width);
      taps[y * width + x] = {{{y0 * w + x0, (1.0 - fy) * (1.0 - fx)},
                              {y0 * w + x1, (1.0 - fy) * fx},
                              {y1 * w + x0, fy * (1.0 - fx)},
                              {y1 * w + x1, fy * fx}}};
    }
  }
  return taps;
}

}  // namespace detail

Tensor bilinear_upsample(const Tensor& map, std::size_t height, std::size_t width) {
  if (map.rank() != 2) fail(ErrorKind::InvalidInput, "bilinear_upsample expects an h x w map");
  const auto taps = detail::bilinear_taps(map.dim(0), map.dim(1), height, width);
  Tensor out({height, width});
  for (std::size_t i = 0; i < taps.size(); ++i) {
    for (const auto& [src, wt] : taps[i]) out[i] += wt * map[src];
  }
  return out;
}

AttributionMap gradcam(const NetGraph& net, const LabSample& sample, int target, const GradCamConfig& cfg) {
  const Tensor& x = checked_image(net, sample);
  const std::string tap = cfg.tap.empty() ? default_gradcam_tap(sample.environment) : cfg.tap;
  const NetGraph ex = detail::explained_net(net, cfg.output);
  const std::size_t k = ex.tap(tap);
  const ForwardResult fr = forward(ex, x);
  const Tensor& A = fr.trace.output(k);
  if (A.rank() != 3) {
    fail(ErrorKind::InvalidInput, "gradcam: tap '" + tap + "' has shape " + shape_string(A.shape()) +
                                      ", expected C x h x w");
  }
  const Tensor g = backward_to_layer(ex, fr.trace, detail::one_hot(ex, target), k);
  const std::size_t C = A.dim(0), plane = A.dim(1) * A.dim(2);
  Tensor cam({A.dim(1), A.dim(2)});
  for (std::size_t c = 0; c < C; ++c) {
    double w = 0.0;
    for (std::size_t i = 0; i < plane; ++i) w += g[c * plane + i];
    w /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) cam[i] += w * A[c * plane + i];
  }
  for (double& v : cam.data()) v = std::max(v, 0.0);
  return detail::make_map(bilinear_upsample(cam, sample.height(), sample.width()), "gradcam", target,
                          {{"tap", tap}, {"output", output_mode_name(cfg.output)}, {"upsample", "bilinear"}});
}

}  // namespace alab
