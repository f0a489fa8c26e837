#include <algorithm>
#include <cmath>
#include <limits>

#include "alab/datagen.hpp"
#include "alab/error.hpp"
#include "alab/netforge.hpp"

namespace alab {

namespace {

constexpr double kIntTol = 1e-6;

void record_counts(VerificationReport& r, const NetGraph& net) {
  r.layers = net.size();
  r.weighted_layers = net.weighted_layer_count();
  r.parameters = net.parameter_count();
}

void failure(VerificationReport& r, std::string msg) {
  r.passed = false;
  if (r.failures.size() < 20) r.failures.push_back(std::move(msg));
}

struct FlipStats {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double d) {
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
};

}  // namespace

VerificationReport verify_single_color(const NetGraph& net, const SingleColorConfig& cfg, std::size_t budget,
                                       std::uint64_t data_seed) {
  VerificationReport r;
  record_counts(r, net);
  const std::size_t H = cfg.height, W = cfg.width, U = cfg.effective_capacity();
  const auto N = static_cast<std::size_t>(cfg.modulus);

  // (a) generated samples against the counting oracle
  DataConfig d;
  d.count = std::max<std::size_t>(budget, 1);
  d.seed = data_seed;
  const auto samples = gen_single_color(cfg, d);
  for (const auto& s : samples) {
    std::size_t white = 0;
    for (double v : s.image.data()) white += v == 255.0 ? 1 : 0;
    const double y = evaluate(net, s.image)[0];
    ++r.samples_checked;
    if (std::abs(y - static_cast<double>(white % N)) <= kIntTol) {
      ++r.samples_agreeing;
    } else {
      failure(r, "sample " + std::to_string(s.index) + ": output " + std::to_string(y) + ", expected " +
                     std::to_string(white % N));
    }
  }

  // Exhaustive counts injected after the gate. Only the first H*W counts fit
  // in the image; larger ones go straight into the modulo head.
  const std::size_t count_layer = net.tap("count");
  const NetGraph after_gate = net.suffix(net.tap("gate") + 1);
  const NetGraph head = net.suffix(count_layer + 1);
  Tensor map({1, H, W});
  for (std::size_t c = 0; c <= U; ++c) {
    double y;
    if (c <= H * W) {
      if (c > 0) map[c - 1] = 1.0;
      y = evaluate(after_gate, map)[0];
    } else {
      y = evaluate(head, Tensor({1, 1, 1}, static_cast<double>(c)))[0];
    }
    ++r.exhaustive_checked;
    if (std::abs(y - static_cast<double>(c % N)) > kIntTol) {
      failure(r, "count " + std::to_string(c) + ": modulo output " + std::to_string(y));
    }
  }

  // (b)/(c) removing any white pixel lowers the count by exactly one
  const NetGraph counter = net.prefix(count_layer + 1);
  FlipStats fs;
  const std::size_t flip_samples = std::min<std::size_t>(samples.size(), 100);
  for (std::size_t n = 0; n < flip_samples; ++n) {
    Tensor x = samples[n].image;
    const double base = evaluate(counter, x)[0];
    for (std::size_t i = 0; i < H * W; ++i) {
      if (samples[n].gt_signed[i] <= 0.0) continue;
      x[i] = 0.0;
      const double delta = base - evaluate(counter, x)[0];
      x[i] = 255.0;
      fs.add(delta);
      ++r.flips_checked;
      r.max_flip_error = std::max(r.max_flip_error, std::abs(delta - 1.0));
      if (std::abs(delta - 1.0) > 1e-9) {
        failure(r, "sample " + std::to_string(n) + " pixel (" + std::to_string(i / W) + "," +
                       std::to_string(i % W) + "): count delta " + std::to_string(delta));
      }
    }
  }
  if (r.flips_checked > 0) r.flip_delta_spread = fs.hi - fs.lo;
  if (r.flip_delta_spread > 1e-9) failure(r, "count delta depends on pixel position");
  r.notes.push_back("modulo exact on [0," + std::to_string(U) + "]");
  return r;
}

VerificationReport verify_multi_color(const NetGraph& net, const MultiColorConfig& cfg, std::size_t budget,
                                      std::uint64_t data_seed) {
  VerificationReport r;
  record_counts(r, net);
  const std::size_t H = cfg.height, W = cfg.width, NC = cfg.classes();
  const NetGraph logits_net = net.prefix(net.tap("logits") + 1);

  // Detector predicate around every decision boundary, on a 1x1 image.
  {
    MultiColorConfig one = cfg;
    one.height = one.width = 1;
    const NetGraph det = build_color_detector(one, 1, 1);
    std::vector<Rgb> probes;
    for (const Rgb& t : cfg.targets) {
      for (int ch = 0; ch < 3; ++ch) {
        for (int dv = -1; dv <= 1; ++dv) {
          Rgb p = t;
          int& comp = ch == 0 ? p.r : ch == 1 ? p.g : p.b;
          comp += dv;
          if (comp >= 0 && comp <= 255) probes.push_back(p);
        }
      }
    }
    probes.push_back(cfg.background);
    probes.push_back({0, 0, 0});
    for (const Rgb& p : probes) {
      const Tensor y = evaluate(det, Tensor({3, 1, 1}, {double(p.r), double(p.g), double(p.b)}));
      bool any_target = false;
      for (std::size_t t = 0; t < NC; ++t) {
        const double want = p == cfg.targets[t] ? 1.0 : 0.0;
        any_target = any_target || want == 1.0;
        if (y[t] != want) failure(r, "detector channel " + std::to_string(t) + " at " + rgb_string(p));
      }
      const double red = (!any_target && p != cfg.background) ? 1.0 : 0.0;
      for (std::size_t k = NC; k < y.size(); ++k) {
        if (y[k] != red) failure(r, "redundant channel " + std::to_string(k - NC) + " at " + rgb_string(p));
      }
      ++r.exhaustive_checked;
    }
  }

  DataConfig d;
  d.count = std::max<std::size_t>(budget, 1);
  d.seed = data_seed;
  const auto samples = gen_multi_color(cfg, d);
  FlipStats fs;
  const std::size_t flip_samples = std::min<std::size_t>(samples.size(), 100);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const auto& s = samples[n];
    std::vector<double> counts(NC, 0.0);
    for (std::size_t i = 0; i < H * W; ++i) {
      const Rgb px{int(s.image[i]), int(s.image[H * W + i]), int(s.image[2 * H * W + i])};
      for (std::size_t t = 0; t < NC; ++t) counts[t] += px == cfg.targets[t] ? 1.0 : 0.0;
    }
    const Tensor z = evaluate(logits_net, s.image);
    ++r.samples_checked;
    bool exact = true;
    for (std::size_t t = 0; t < NC; ++t) exact = exact && std::abs(z[t] - counts[t]) <= kIntTol;
    const auto arg = static_cast<int>(std::max_element(z.data().begin(), z.data().end()) - z.data().begin());
    if (exact && arg == s.label) {
      ++r.samples_agreeing;
    } else {
      failure(r, "sample " + std::to_string(n) + ": logits differ from pixel counts");
    }
    if (n >= flip_samples) continue;
    // Recolor each winning-color pixel to background: that logit drops by one.
    Tensor x = s.image;
    for (std::size_t i = 0; i < H * W; ++i) {
      if (s.gt_signed[i] <= 0.0) continue;
      const double keep[3] = {x[i], x[H * W + i], x[2 * H * W + i]};
      x[i] = cfg.background.r;
      x[H * W + i] = cfg.background.g;
      x[2 * H * W + i] = cfg.background.b;
      const double delta = z[static_cast<std::size_t>(s.label)] - evaluate(logits_net, x)[static_cast<std::size_t>(s.label)];
      x[i] = keep[0];
      x[H * W + i] = keep[1];
      x[2 * H * W + i] = keep[2];
      fs.add(delta);
      ++r.flips_checked;
      r.max_flip_error = std::max(r.max_flip_error, std::abs(delta - 1.0));
      if (std::abs(delta - 1.0) > 1e-9) {
        failure(r, "sample " + std::to_string(n) + " pixel (" + std::to_string(i / W) + "," +
                       std::to_string(i % W) + "): logit delta " + std::to_string(delta));
      }
    }
  }
  if (r.flips_checked > 0) r.flip_delta_spread = fs.hi - fs.lo;
  if (r.flip_delta_spread > 1e-9) failure(r, "logit delta depends on pixel position");
  return r;
}

}  // namespace alab
