// Acceptance run: one line per criterion, at desk scale (64 x 64 images,
// 50 samples per environment). Exit status is the number of failed
// criteria that are not listed with --known-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "alab/kernels.hpp"
#include "alab/lab.hpp"
#include "alab/netgraph.hpp"
#include "support.hpp"

using namespace alab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::size_t threads() { return lab_threads(); }

/// Runs fn over [0, n) on the pool and rethrows the first cell failure.
void each(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto errors = parallel_cells(n, threads(), fn);
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw std::runtime_error("cell " + std::to_string(i) + ": " + errors[i]);
  }
}

constexpr std::size_t kSamples = 50;

// Shared environments ---------------------------------------------------------

struct Env {
  NetGraph net;
  std::vector<LabSample> samples;
};

SingleColorConfig single_cfg() { return {}; }

MultiColorConfig multi_cfg(double rho, std::uint64_t seed = 1) {
  MultiColorConfig m;
  m.rho = rho;
  m.redundant = 4;
  m.seed = seed;
  return m;
}

DataConfig data_cfg(std::size_t count, std::uint64_t seed = 7) {
  DataConfig d;
  d.count = count;
  d.seed = seed;
  return d;
}

const Env& single_env() {
  static const Env e{build_single_color_net(single_cfg()), gen_single_color(single_cfg(), data_cfg(500))};
  return e;
}

const Env& multi_env(double rho) {
  static const Env e0{build_multi_color_net(multi_cfg(0.0)), gen_multi_color(multi_cfg(0.0), data_cfg(500))};
  static const Env e1{build_multi_color_net(multi_cfg(1.0)), gen_multi_color(multi_cfg(1.0), data_cfg(500))};
  return rho == 0.0 ? e0 : e1;
}

std::vector<double> f1s(const std::vector<Tensor>& maps, const std::vector<LabSample>& samples, const GtVariant& v) {
  std::vector<double> out;
  for (std::size_t i = 0; i < maps.size(); ++i) out.push_back(score(maps[i], samples[i], v).f1);
  return out;
}

/// Maps of one method over the first `n` samples.
std::vector<Tensor> run_all(const std::function<AttributionMap(const LabSample&)>& method,
                            const std::vector<LabSample>& samples, std::size_t n = kSamples) {
  std::vector<Tensor> maps(n);
  each(n, [&](std::size_t i) { maps[i] = method(samples[i]).values; });
  return maps;
}

// Exact IG on the rho = 1 net is the costliest map; C5 and C6 share it.
const std::vector<Tensor>& ig_zero_maps() {
  static const std::vector<Tensor> maps = run_all(
      [](const LabSample& s) {
        const NetGraph& net = multi_env(1.0).net;
        return integrated_gradients(net, s, default_target(net, s));
      },
      multi_env(1.0).samples);
  return maps;
}

// Criteria ----------------------------------------------------------------------

Outcome c1_network_exactness() {
  const Env& e = single_env();
  const auto N = static_cast<std::size_t>(single_cfg().modulus);
  double worst = 0.0, worst_int = 0.0;
  for (const LabSample& s : e.samples) {
    std::size_t white = 0;
    for (double v : s.image.data()) white += v == 255.0;
    const double y = evaluate(e.net, s.image)[0];
    worst = std::max(worst, std::abs(y - static_cast<double>(white % N)));
    worst_int = std::max(worst_int, std::abs(y - std::round(y)));
  }
  // Every count 0..H*W, injected after the gate as a growing binary mask.
  const NetGraph after_gate = e.net.suffix(e.net.tap("gate") + 1);
  const std::size_t HW = single_cfg().height * single_cfg().width;
  std::vector<std::size_t> order(HW);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(11));
  IncrementalForward inc(after_gate, Tensor({1, single_cfg().height, single_cfg().width}));
  const Tensor ones({1, single_cfg().height, single_cfg().width}, 1.0);
  double worst_count = std::abs(inc.output()[0]);
  for (std::size_t c = 1; c <= HW; ++c) {
    inc.assign({order[c - 1]}, ones);
    worst_count = std::max(worst_count, std::abs(inc.output()[0] - static_cast<double>(c % N)));
  }
  const NetGraph head = e.net.suffix(e.net.tap("count") + 1);
  for (std::size_t c = 0; c <= HW; ++c) {
    const double y = evaluate(head, Tensor({1, 1, 1}, static_cast<double>(c)))[0];
    worst_count = std::max(worst_count, std::abs(y - static_cast<double>(c % N)));
  }
  const bool pass = worst <= 1e-6 && worst_int <= 1e-6 && worst_count <= 1e-6;
  return {pass, fmt("%zu samples max |y - count mod %zu| = %.1e; counts 0..%zu max error %.1e", e.samples.size(), N,
                    worst, HW, worst_count)};
}

Outcome c2_flip_symmetry() {
  const Env& e = single_env();
  const NetGraph counter = e.net.prefix(e.net.tap("count") + 1);
  double lo = INFINITY, hi = -INFINITY, worst = 0.0;
  std::size_t flips = 0;
  for (std::size_t n = 0; n < 100; ++n) {
    const LabSample& s = e.samples[n];
    Tensor off = s.image;
    IncrementalForward inc(counter, s.image);
    const double base = inc.output()[0];
    for (std::size_t i = 0; i < s.gt_signed.size(); ++i) {
      if (s.gt_signed[i] <= 0.0) continue;
      off[i] = 0.0;
      inc.assign({i}, off);
      const double delta = base - inc.output()[0];
      inc.assign({i}, s.image);
      off[i] = s.image[i];
      lo = std::min(lo, delta);
      hi = std::max(hi, delta);
      worst = std::max(worst, std::abs(delta - 1.0));
      ++flips;
    }
  }
  return {worst <= 1e-9 && hi - lo <= 1e-9,
          fmt("%zu flips on 100 samples: max |delta - 1| = %.1e, spread %.1e", flips, worst, hi - lo)};
}

std::vector<double> color_counts(const LabSample& s, const std::vector<Rgb>& targets) {
  const std::size_t HW = s.height() * s.width();
  std::vector<double> c(targets.size(), 0.0);
  for (std::size_t p = 0; p < HW; ++p) {
    for (std::size_t k = 0; k < targets.size(); ++k) {
      if (s.image[p] == targets[k].r && s.image[HW + p] == targets[k].g && s.image[2 * HW + p] == targets[k].b) {
        c[k] += 1.0;
      }
    }
  }
  return c;
}

Outcome c3_multi_color_classification() {
  const Env& e = multi_env(0.0);
  const auto targets = multi_cfg(0.0).targets;
  const NetGraph logits = e.net.prefix(e.net.tap("logits") + 1);
  std::size_t agree = 0;
  double worst = 0.0;
  for (const LabSample& s : e.samples) {
    const std::vector<double> counts = color_counts(s, targets);
    const Tensor z = evaluate(logits, s.image);
    const Tensor p = evaluate(e.net, s.image);
    for (std::size_t k = 0; k < counts.size(); ++k) worst = std::max(worst, std::abs(z[k] - counts[k]));
    const auto oracle = std::max_element(counts.begin(), counts.end()) - counts.begin();
    const auto predicted = std::max_element(p.data().begin(), p.data().end()) - p.data().begin();
    agree += oracle == predicted && oracle == s.label;
  }
  return {agree == e.samples.size() && worst <= 1e-6,
          fmt("%zu/%zu labels agree with the count oracle; max |logit - count| = %.1e", agree, e.samples.size(),
              worst)};
}

/// Fraction of samples whose logits move when one background pixel turns
/// black, and the largest move.
std::pair<double, double> recolor_effect(const Env& e, std::size_t n) {
  const NetGraph logits = e.net.prefix(e.net.tap("logits") + 1);
  const Rgb bg = multi_cfg(0.0).background;
  std::size_t moved = 0;
  double largest = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const LabSample& s = e.samples[i];
    const std::size_t HW = s.height() * s.width();
    std::vector<std::size_t> background;
    for (std::size_t p = 0; p < HW; ++p) {
      if (s.image[p] == bg.r && s.image[HW + p] == bg.g && s.image[2 * HW + p] == bg.b) background.push_back(p);
    }
    std::mt19937_64 g(1000 + i);
    const std::size_t p = background[g() % background.size()];
    Tensor x = s.image;
    for (std::size_t c = 0; c < 3; ++c) x[c * HW + p] = 0.0;
    const Tensor a = evaluate(logits, s.image), b = evaluate(logits, x);
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
    moved += d > 1e-9;
    largest = std::max(largest, d);
  }
  return {static_cast<double>(moved) / static_cast<double>(n), largest};
}

Outcome c4_unseen_data_toggle() {
  const std::size_t n = 200;
  const auto [on, on_max] = recolor_effect(multi_env(1.0), n);
  const auto [off, off_max] = recolor_effect(multi_env(0.0), n);
  return {on >= 0.95 && off == 0.0 && off_max <= 1e-9,
          fmt("rho=1, 4 redundant: %.1f%% of %zu samples change a logit; rho=0: %.1f%% (max change %.1e)", 100 * on,
              n, 100 * off, off_max)};
}

Outcome c5_ig_completeness() {
  const Env& e = multi_env(1.0);
  const auto& maps = ig_zero_maps();
  double worst = 0.0;
  for (std::size_t i = 0; i < kSamples; ++i) {
    const LabSample& s = e.samples[i];
    const int t = default_target(e.net, s);
    const double delta = evaluate(e.net, s.image)[t] - evaluate(e.net, Tensor(s.image.shape()))[t];
    const double sum = std::accumulate(maps[i].data().begin(), maps[i].data().end(), 0.0);
    worst = std::max(worst, std::abs(sum - delta) / std::max(std::abs(delta), 1e-12));
  }
  // The 256-step midpoint rule, reported for comparison only.
  const std::size_t probe = 4;
  std::vector<double> mid(probe);
  each(probe, [&](std::size_t i) {
    const LabSample& s = e.samples[i];
    const int t = default_target(e.net, s);
    IgConfig cfg;
    cfg.integration = IgIntegration::Midpoint;
    cfg.steps = 256;
    const Tensor base(s.image.shape());
    const Tensor raw = integrated_gradients_raw(e.net, s.image, base, t, cfg);
    const double delta = evaluate(e.net, s.image)[t] - evaluate(e.net, base)[t];
    const double sum = std::accumulate(raw.data().begin(), raw.data().end(), 0.0);
    mid[i] = std::abs(sum - delta) / std::max(std::abs(delta), 1e-12);
  });
  return {worst <= 0.005, fmt("exact path integral, %zu samples (rho=1): max relative gap %.1e; midpoint-256 on %zu "
                              "samples for comparison: max %.1e",
                              kSamples, worst, probe, *std::max_element(mid.begin(), mid.end()))};
}

Outcome c6_baseline_ablation() {
  const Env& e = multi_env(1.0);
  const BaselineSpec truth = BaselineSpec::true_color(multi_cfg(1.0).background);
  const auto ig_true = run_all(
      [&](const LabSample& s) {
        IgConfig c;
        c.baseline = truth;
        return integrated_gradients(e.net, s, default_target(e.net, s), c);
      },
      e.samples);
  auto occ = [&](const BaselineSpec& b) {
    return run_all(
        [&](const LabSample& s) {
          OcclusionConfig c = default_occlusion(EnvironmentKind::MultiColor);
          c.baseline = b;
          return occlusion(e.net, s, default_target(e.net, s), c);
        },
        e.samples);
  };
  const GtVariant v = GtVariant::overall();
  const double ig0 = mean(f1s(ig_zero_maps(), e.samples, v)), ig1 = mean(f1s(ig_true, e.samples, v));
  const double oc0 = mean(f1s(occ(BaselineSpec::zero()), e.samples, v));
  const double oc1 = mean(f1s(occ(truth), e.samples, v));
  const bool pass = ig1 > ig0 && faithfulness_test(ig1).pass && oc1 > oc0;
  return {pass, fmt("overall F1, rho=1: IG true %.3f vs zero %.3f (gamma 0.5 %s); occlusion true %.3f vs zero %.3f",
                    ig1, ig0, faithfulness_test(ig1).pass ? "passed" : "failed", oc1, oc0)};
}

Outcome c7_single_color_optimality() {
  const Env& e = single_env();
  struct Entry {
    const char* name;
    std::function<AttributionMap(const LabSample&)> fn;
  };
  const std::vector<Entry> methods{
      {"lrp", [&](const LabSample& s) { return lrp_epsilon(e.net, s, kScalarTarget); }},
      {"deeplift", [&](const LabSample& s) { return deeplift_rescale(e.net, s, kScalarTarget); }},
      {"ig", [&](const LabSample& s) { return integrated_gradients(e.net, s, kScalarTarget); }},
  };
  std::ostringstream os;
  bool pass = true;
  std::vector<double> oracle_ins(kSamples), oracle_del(kSamples);
  each(kSamples, [&](std::size_t i) {
    oracle_ins[i] = adapted_oracle_curve(e.net, e.samples[i], CurveMode::Insertion).auc;
    oracle_del[i] = adapted_oracle_curve(e.net, e.samples[i], CurveMode::Deletion).auc;
  });
  for (const Entry& m : methods) {
    const auto maps = run_all(m.fn, e.samples);
    const double f1 = mean(f1s(maps, e.samples, GtVariant::overall()));
    std::vector<double> gaps(kSamples);
    each(kSamples, [&](std::size_t i) {
      const double a = adapted_insertion_deletion(e.net, e.samples[i], maps[i], CurveMode::Insertion).auc;
      const double d = adapted_insertion_deletion(e.net, e.samples[i], maps[i], CurveMode::Deletion).auc;
      gaps[i] = std::max(std::abs(a - oracle_ins[i]), std::abs(d - oracle_del[i]));
    });
    const double gap = *std::max_element(gaps.begin(), gaps.end());
    pass = pass && f1 >= 0.99 && gap <= 1e-12;
    os << m.name << fmt(" F1 %.4f, AUC gap %.0e; ", f1, gap);
  }
  std::vector<double> random_auc(kSamples);
  each(kSamples, [&](std::size_t i) {
    random_auc[i] =
        adapted_insertion_deletion(e.net, e.samples[i], control_random(e.samples[i], 100 + i).values,
                                   CurveMode::Insertion)
            .auc;
  });
  const double r = mean(random_auc);
  pass = pass && r >= 0.45 && r <= 0.55;
  os << fmt("random insertion AUC %.4f; oracle insertion AUC %.4f", r, mean(oracle_ins));
  return {pass, os.str()};
}

Outcome c8_lime_segmentation() {
  const Env& e = multi_env(1.0);
  auto run = [&](std::size_t cell) {
    return run_all(
        [&](const LabSample& s) {
          LimeConfig c;
          c.segmentation.kind = SegmentationKind::Grid;
          c.segmentation.cell = cell;
          return lime(e.net, s, default_target(e.net, s), c);
        },
        e.samples);
  };
  const double f4 = mean(f1s(run(4), e.samples, GtVariant::overall()));
  const double f16 = mean(f1s(run(16), e.samples, GtVariant::overall()));
  return {std::abs(f4 - f16) >= 0.05,
          fmt("overall F1, rho=1: grid 4 %.3f, grid 16 %.3f, gap %.3f", f4, f16, std::abs(f4 - f16))};
}

Outcome c9_gradcam_experturb() {
  const Env& e = multi_env(1.0);
  const GtVariant v = GtVariant::smoothed_positive(1);
  const auto cam = run_all([&](const LabSample& s) { return gradcam(e.net, s, default_target(e.net, s)); },
                           e.samples);
  const auto ep = run_all(
      [&](const LabSample& s) { return extremal_perturbation(e.net, s, default_target(e.net, s)); }, e.samples);
  std::vector<double> cam_r, ep_r, ep_p;
  std::size_t ordered = 0;
  for (std::size_t i = 0; i < kSamples; ++i) {
    cam_r.push_back(score(cam[i], e.samples[i], v).recall);
    const ScoreTriple t = score(ep[i], e.samples[i], v);
    ep_r.push_back(t.recall);
    ep_p.push_back(t.precision);
    ordered += t.precision < t.recall;
  }
  const double share = static_cast<double>(ordered) / kSamples;
  const bool pass = mean(cam_r) >= 0.8 && mean(ep_r) >= 0.8 && share >= 0.8;
  return {pass, fmt("smoothed-positive r1, rho=1: gradcam recall %.3f; extremal perturbation recall %.3f, precision "
                    "%.3f, P < R on %.0f%%",
                    mean(cam_r), mean(ep_r), mean(ep_p), 100 * share)};
}

/// Adapted curves replayed one forward pass per step.
double brute_adapted_auc(const NetGraph& net, const LabSample& s, const Tensor& map, bool insertion) {
  const std::size_t HW = map.size();
  std::vector<std::size_t> order(HW);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return map[a] > map[b]; });
  double g = 0.0;
  for (double v : s.gt_signed.data()) g += v != 0.0;
  Tensor x = insertion ? Tensor(s.image.shape()) : s.image;
  double prev = evaluate(net, x)[0], correct = 0.0, auc = 0.0;
  double y_prev = insertion ? 0.0 : 1.0;
  for (std::size_t k = 0; k < HW; ++k) {
    for (std::size_t c = 0; c < s.image.dim(0); ++c) x[c * HW + order[k]] = insertion ? s.image[c * HW + order[k]] : 0;
    const double y = evaluate(net, x)[0];
    correct += std::abs(y - prev) > 1e-6;
    prev = y;
    const double point = insertion ? correct / g : 1.0 - correct / g;
    auc += 0.5 * (y_prev + point) / static_cast<double>(HW);
    y_prev = point;
  }
  return auc;
}

Outcome c10_metric_sanity() {
  double worst_oracle = 0.0, worst_const = 0.0;
  for (const Env* e : {&single_env(), &multi_env(1.0)}) {
    for (std::size_t i = 0; i < kSamples; ++i) {
      const LabSample& s = e->samples[i];
      const ScoreTriple o = score(s.gt_signed, s, GtVariant::overall());
      worst_oracle = std::max({worst_oracle, std::abs(o.precision - 1), std::abs(o.recall - 1), std::abs(o.f1 - 1)});
      const ScoreTriple c = score(control_constant(s, 1.0).values, s, GtVariant::overall());
      double density = 0.0;
      for (double v : s.gt_signed.data()) density += v != 0.0;
      density /= static_cast<double>(s.gt_signed.size());
      worst_const = std::max({worst_const, std::abs(c.recall - 1), std::abs(c.precision - density)});
    }
  }
  // 8 x 8 single-color images: library curves against a brute-force replay.
  SingleColorConfig small;
  small.height = small.width = 8;
  small.modulus = 30;
  DataConfig d = data_cfg(20, 3);
  d.patches = 2;
  d.min_radius_fraction = 0.2;
  d.max_radius_fraction = 0.3;
  d.min_patch_pixels = 4;
  const NetGraph net = build_single_color_net(small);
  const auto samples = gen_single_color(small, d);
  double worst_sum = 0.0, worst_brute = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::uint64_t r = 0; r < 5; ++r) {
      const Tensor map = control_random(samples[i], 31 * i + r).values;
      const double ins = adapted_insertion_deletion(net, samples[i], map, CurveMode::Insertion).auc;
      const double del = adapted_insertion_deletion(net, samples[i], map, CurveMode::Deletion).auc;
      worst_sum = std::max(worst_sum, std::abs(ins + del - 1.0));
      worst_brute = std::max({worst_brute, std::abs(ins - brute_adapted_auc(net, samples[i], map, true)),
                              std::abs(del - brute_adapted_auc(net, samples[i], map, false))});
    }
  }
  const bool pass = worst_oracle <= 1e-12 && worst_const <= 1e-12 && worst_sum <= 1.0 / 64 && worst_brute <= 1e-12;
  return {pass, fmt("oracle map max |P,R,F1 - 1| %.0e; constant map max |R - 1|, |P - density| %.0e; 8x8 |ins + del "
                    "- 1| max %.1e (bound %.1e), brute-force gap %.0e",
                    worst_oracle, worst_const, worst_sum, 1.0 / 64, worst_brute)};
}

Outcome c11_rank_correlation() {
  std::vector<MethodSpec> methods;
  for (const MethodSpec& m : default_methods(EnvironmentKind::MultiColor)) {
    if (m.display() != "lime" && m.display() != "extremal-perturbation" && m.display() != "ig") methods.push_back(m);
  }
  const std::size_t n = 25;
  std::ostringstream os;
  std::size_t held = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    double rho_of[2];
    for (int on = 0; on < 2; ++on) {
      const MultiColorConfig mc = multi_cfg(on, seed);
      const NetGraph net = build_multi_color_net(mc);
      const auto samples = gen_multi_color(mc, data_cfg(n, 100 + seed));
      std::vector<double> f1(methods.size() * n), ins(methods.size() * n);
      each(methods.size() * n, [&](std::size_t cell) {
        const LabSample& s = samples[cell % n];
        const Tensor map = run_method(methods[cell / n], net, s).values;
        f1[cell] = score(map, s, GtVariant::positive()).f1;
        ins[cell] = insertion_deletion(net, s, map, CurveMode::Insertion).auc;
      });
      std::vector<double> mf(methods.size()), mi(methods.size());
      for (std::size_t m = 0; m < methods.size(); ++m) {
        mf[m] = mean({f1.begin() + m * n, f1.begin() + (m + 1) * n});
        mi[m] = mean({ins.begin() + m * n, ins.begin() + (m + 1) * n});
      }
      rho_of[on] = spearman(mi, mf);
    }
    held += rho_of[1] < rho_of[0];
    os << fmt("seed %llu: %.2f (rho=1) vs %.2f (rho=0); ", static_cast<unsigned long long>(seed), rho_of[1],
              rho_of[0]);
  }
  os << fmt("%zu methods, %zu samples, lower with redundancy in %zu/3", methods.size(), n, held);
  return {held >= 2, os.str()};
}

// Textbook reference statistics.
double naive_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  long double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    sab += static_cast<long double>(a[i]) * b[i];
    saa += static_cast<long double>(a[i]) * a[i];
    sbb += static_cast<long double>(b[i]) * b[i];
  }
  return static_cast<double>((n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb)));
}

std::vector<double> naive_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double above = 0, equal = 0;
    for (double w : v) {
      above += w > v[i];
      equal += w == v[i];
    }
    r[i] = above + (equal + 1) / 2;
  }
  return r;
}

Outcome c12_numeric_kernels() {
  std::mt19937_64 g(5);
  double grad = 0.0, lrp = 0.0, soft = 0.0, corr = 0.0, simd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const NetGraph net = testing::random_net(g, true, trial % 2 == 0);
    const Tensor x = testing::random_tensor(g, {2, 6, 6});
    const ForwardResult f = forward(net, x);
    for (std::size_t t = 0; t < f.output.size(); ++t) {
      Tensor seed(f.output.shape());
      seed[t] = 1.0;
      const Tensor gr = backward(net, f.trace, seed);
      Tensor fd(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor a = x, b = x;
        a[i] += 1e-6;
        b[i] -= 1e-6;
        fd[i] = (evaluate(net, a)[t] - evaluate(net, b)[t]) / 2e-6;
      }
      grad = std::max(grad, testing::rel_err(gr, fd));
    }
    const NetGraph bare = testing::random_net(g, false, false);
    LabSample s;
    s.image = testing::random_tensor(g, {2, 6, 6}, 0.0, 1.0);
    const Tensor out = evaluate(bare, s.image);
    const AttributionMap r = lrp_epsilon(bare, s, 0);
    const double total = std::accumulate(r.values.data().begin(), r.values.data().end(), 0.0);
    lrp = std::max(lrp, std::abs(total - out[0]) / std::max(std::abs(out[0]), 1e-12));

    const Tensor z = testing::random_tensor(g, {50}, -300.0, 300.0);
    const Tensor p = softmax(z);
    soft = std::max(soft, std::abs(std::accumulate(p.data().begin(), p.data().end(), 0.0) - 1.0));

    std::vector<double> a(40), b(40);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = std::round(uniform(g, 0, 10));
      b[i] = a[i] * 0.3 + uniform(g, -2, 2);
    }
    corr = std::max({corr, std::abs(pearson(a, b) - naive_pearson(a, b)),
                     std::abs(spearman(a, b) - naive_pearson(naive_ranks(a), naive_ranks(b)))});

    const kernels::KernelTable& ref = kernels::scalar::table();
    const kernels::KernelTable& act = kernels::active();
    const Tensor u = testing::random_tensor(g, {257}), w = testing::random_tensor(g, {257});
    simd = std::max(simd, std::abs(ref.dot(u.data().data(), w.data().data(), 257) -
                                   act.dot(u.data().data(), w.data().data(), 257)));
  }
  const bool pass = grad <= 1e-5 && lrp <= 1e-4 && soft <= 1e-12 && corr <= 1e-12 && simd <= 1e-12;
  return {pass, fmt("gradient vs central differences %.1e; LRP conservation %.1e; softmax sum %.1e; Pearson/Spearman "
                    "vs naive %.1e; %s dot vs scalar %.1e",
                    grad, lrp, soft, corr, std::string(kernels::isa_name(kernels::active_isa())).c_str(), simd)};
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  std::set<std::string> known, only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    auto split = [](const std::string& list, std::set<std::string>& into) {
      std::stringstream ss(list);
      for (std::string item; std::getline(ss, item, ',');) into.insert(item);
    };
    if (a.rfind("--known-fail=", 0) == 0) split(a.substr(13), known);
    else if (a.rfind("--only=", 0) == 0) split(a.substr(7), only);
  }
  const std::vector<std::tuple<std::string, std::string, std::function<Outcome()>>> criteria{
      {"C1", "network exactness", c1_network_exactness},
      {"C2", "flip sensitivity and symmetry", c2_flip_symmetry},
      {"C3", "multi-color classification", c3_multi_color_classification},
      {"C4", "unseen data effect toggle", c4_unseen_data_toggle},
      {"C5", "IG completeness", c5_ig_completeness},
      {"C6", "baseline ablation", c6_baseline_ablation},
      {"C7", "single-color optimality", c7_single_color_optimality},
      {"C8", "LIME segmentation sensitivity", c8_lime_segmentation},
      {"C9", "GradCAM / extremal perturbation profile", c9_gradcam_experturb},
      {"C10", "metric sanity", c10_metric_sanity},
      {"C11", "rank-correlation direction", c11_rank_correlation},
      {"C12", "numeric kernels", c12_numeric_kernels},
  };
  int unexpected = 0;
  std::size_t passed = 0, ran = 0;
  for (const auto& [id, name, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* verdict = o.pass ? "PASS" : (known.count(id) ? "FAIL (known)" : "FAIL");
    std::cout << fmt("%-4s %-13s %s: %s [%.1fs]", id.c_str(), verdict, name.c_str(), o.detail.c_str(), secs)
              << std::endl;
    passed += o.pass;
    if (!o.pass && !known.count(id)) ++unexpected;
  }
  std::cout << passed << "/" << ran << " criteria passed" << std::endl;
  return unexpected;
}
