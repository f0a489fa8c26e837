#include <filesystem>
#include <numeric>

#include "alab/attribution.hpp"
#include "alab/error.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace alab;
using testing::random_net;
using testing::random_tensor;
using testing::rel_err;

namespace {

LabSample wrap(const Tensor& image, int label = 0) {
  LabSample s;
  s.environment = EnvironmentKind::MultiColor;
  s.image = image;
  s.label = label;
  s.gt_signed = Tensor({image.dim(1), image.dim(2)});
  return s;
}

/// Central differences of one output with respect to chosen input features.
double finite_difference(const NetGraph& net, Tensor x, std::size_t feature, std::size_t out, double h) {
  const double keep = x[feature];
  x[feature] = keep + h;
  const double up = evaluate(net, x)[out];
  x[feature] = keep - h;
  const double down = evaluate(net, x)[out];
  return (up - down) / (2.0 * h);
}

/// Naive dense solve with partial pivoting, independent of Eigen.
std::vector<double> gauss_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

/// Patch sizes that still fit on 16 x 16 images.
DataConfig small_data(std::size_t count) {
  DataConfig d;
  d.count = count;
  d.patches = 2;
  d.min_radius_fraction = 0.2;
  d.max_radius_fraction = 0.3;
  d.min_patch_pixels = 4;
  return d;
}

NetGraph scaled_scalar_net(double w) {
  NetGraph net({1, 1, 1});
  net.add(Layer::flatten());
  net.add(Layer::linear(Tensor({1, 1}, w), Tensor({1})));
  return net;
}

}  // namespace

TEST_SUITE("attribution") {

TEST_CASE("saliency on trivial nets") {
  const LabSample s = wrap(Tensor({1, 1, 1}, 2.0));
  CHECK(saliency(scaled_scalar_net(3.0), s, kScalarTarget).values[0] == doctest::Approx(3.0));
  CHECK(saliency(scaled_scalar_net(0.0), s, kScalarTarget).values[0] == 0.0);
}

TEST_CASE("gradient methods agree with finite differences") {
  auto g = make_rng(41);
  for (int trial = 0; trial < 3; ++trial) {
    const NetGraph net = random_net(g, true, true);
    const Tensor x = random_tensor(g, net.input_shape());
    const LabSample s = wrap(x);
    // Saliency sums |d/dx| over channels, so compare one-channel nets by hand.
    const ForwardResult fr = forward(net, x);
    Tensor seed(net.output_shape());
    seed[1] = 1.0;
    const Tensor grad = backward(net, fr.trace, seed);
    for (std::size_t f = 0; f < x.size(); f += 3) {
      const double fd = finite_difference(net, x, f, 1, 1e-6);
      CHECK(std::abs(fd - grad[f]) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
    const Tensor sal = saliency(net, s, 1).values;
    const std::size_t plane = x.dim(1) * x.dim(2);
    for (std::size_t p = 0; p < plane; ++p) {
      CHECK(sal[p] == doctest::Approx(std::abs(grad[p]) + std::abs(grad[plane + p])).epsilon(1e-12));
    }
  }
}

TEST_CASE("saliency matches finite differences on the designed single-color net") {
  SingleColorConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.modulus = 7;
  const NetGraph net = build_single_color_net(cfg);
  auto g = make_rng(5);
  // Non-integer intensities keep every ReLU away from its kink.
  const Tensor x = random_tensor(g, net.input_shape(), 10.3, 200.7);
  const Tensor sal = saliency(net, wrap(x), kScalarTarget).values;
  for (int k = 0; k < 50; ++k) {
    const auto p = static_cast<std::size_t>(g() % x.size());
    const double fd = finite_difference(net, x, p, 0, 1e-4);
    CHECK(sal[p] == doctest::Approx(std::abs(fd)).epsilon(1e-4));
  }
}

TEST_CASE("guided backprop clips negatives and matches saliency on positive paths") {
  auto g = make_rng(8);
  NetGraph pos({2, 6, 6});
  pos.add(Layer::conv2d(random_tensor(g, {3, 2, 3, 3}, 0.1, 1.0), Tensor({3}), 1, 1));
  pos.add(Layer::relu());
  pos.add(Layer::flatten());
  pos.add(Layer::linear(random_tensor(g, {2, 48}, 0.1, 1.0), Tensor({2})));
  const LabSample s = wrap(random_tensor(g, pos.input_shape()));
  CHECK(rel_err(guided_backprop(pos, s, 0).values, saliency(pos, s, 0).values) < 1e-12);

  const NetGraph net = random_net(g, true, false);
  const LabSample t = wrap(random_tensor(g, net.input_shape()));
  const AttributionMap gb = guided_backprop(net, t, 2);
  for (double v : gb.values.data()) CHECK(v >= 0.0);
}

TEST_CASE("integrated gradients: zero path, completeness, compression and midpoint convergence") {
  auto g = make_rng(12);
  const NetGraph net = random_net(g, true, true);
  const Tensor x = random_tensor(g, net.input_shape());
  const Tensor b = random_tensor(g, net.input_shape(), -0.2, 0.2);

  IgConfig ig;
  const Tensor zero = integrated_gradients_raw(net, x, x, 0, ig);
  for (double v : zero.data()) CHECK(v == 0.0);

  std::size_t pieces = 0;
  const Tensor prob = integrated_gradients_raw(net, x, b, 0, ig, &pieces);
  CHECK(pieces >= 1);
  const double dp = evaluate(net, x)[0] - evaluate(net, b)[0];
  CHECK(prob.sum() == doctest::Approx(dp).epsilon(1e-9));

  ig.output = OutputMode::Logit;
  const NetGraph logits = net.without_softmax();
  const Tensor lin = integrated_gradients_raw(net, x, b, 2, ig);
  CHECK(lin.sum() == doctest::Approx(evaluate(logits, x)[2] - evaluate(logits, b)[2]).epsilon(1e-9));

  IgConfig mid = ig;
  mid.integration = IgIntegration::Midpoint;
  mid.steps = 4096;
  CHECK(rel_err(integrated_gradients_raw(net, x, b, 2, mid), lin) < 5e-3);

  mid.steps = 4;
  CHECK_THROWS_AS(integrated_gradients_raw(net, x, b, 2, mid), LabError);
}

TEST_CASE("exact integrated gradients on a designed multi-color net") {
  MultiColorConfig mc;
  mc.height = mc.width = 16;
  mc.rho = 1.0;
  const NetGraph net = build_multi_color_net(mc);
  const DataConfig d = small_data(2);
  for (const LabSample& s : gen_multi_color(mc, d)) {
    for (const BaselineSpec& base : {BaselineSpec::true_color(mc.background), BaselineSpec::zero()}) {
      const Tensor b = base.image(s.image.shape());
      IgConfig fast;
      fast.output = OutputMode::Logit;
      IgConfig plain = fast;
      plain.compress_pixels = false;
      const Tensor a = integrated_gradients_raw(net, s.image, b, s.label, fast);
      const Tensor c = integrated_gradients_raw(net, s.image, b, s.label, plain);
      CHECK(rel_err(a, c) < 1e-9);
      const NetGraph logits = net.without_softmax();
      const double want = evaluate(logits, s.image)[s.label] - evaluate(logits, b)[s.label];
      // Breakpoints are located with a small look-ahead, so a sliver of each piece uses the next slope.
      CHECK_MESSAGE(std::abs(a.sum() - want) <= 1e-7 * std::max(1.0, std::abs(want)), (a.sum() - want));

      IgConfig pr;
      const Tensor p = integrated_gradients_raw(net, s.image, b, s.label, pr);
      CHECK(p.sum() == doctest::Approx(evaluate(net, s.image)[s.label] - evaluate(net, b)[s.label]).epsilon(1e-8));
    }
  }
}

TEST_CASE("deeplift: affine exactness and summation to delta") {
  auto g = make_rng(3);
  NetGraph aff({2, 3, 3});
  aff.add(Layer::flatten());
  const Tensor w = random_tensor(g, {1, 18});
  aff.add(Layer::linear(w, Tensor({1}, 0.4)));
  const Tensor x = random_tensor(g, aff.input_shape());
  DeepLiftConfig dc;
  dc.baseline = BaselineSpec::custom_scalar(0.25);
  const Tensor m = deeplift_rescale(aff, wrap(x), kScalarTarget, dc).values;
  for (std::size_t p = 0; p < 9; ++p) {
    const double want = (x[p] - 0.25) * w[p] + (x[9 + p] - 0.25) * w[9 + p];
    CHECK(m[p] == doctest::Approx(want).epsilon(1e-12));
  }

  for (bool sm : {false, true}) {
    const NetGraph net = random_net(g, true, sm);
    const Tensor xi = random_tensor(g, net.input_shape());
    const Tensor ref = dc.baseline.image(xi.shape());
    const double delta = evaluate(net, xi)[1] - evaluate(net, ref)[1];
    const double total = deeplift_rescale(net, wrap(xi), 1, dc).values.sum();
    CHECK(std::abs(total - delta) <= 1e-6 * std::max(1.0, std::abs(delta)));
  }
}

TEST_CASE("lrp conserves the target logit on bias-free nets") {
  auto g = make_rng(19);
  for (int trial = 0; trial < 4; ++trial) {
    const NetGraph net = random_net(g, false, true);
    const Tensor x = random_tensor(g, net.input_shape());
    const double logit = evaluate(net.without_softmax(), x)[0];
    const double total = lrp_epsilon(net, wrap(x), 0).values.sum();
    CHECK(std::abs(total - logit) <= 1e-4 * std::max(std::abs(logit), 1e-6));
    const Tensor z(net.input_shape());
    const AttributionMap none = lrp_epsilon(net, wrap(z), 0);
    for (double v : none.values.data()) CHECK(v == 0.0);
  }
}

TEST_CASE("gradcam: uniform map for uniform activations, nonnegative, tap checked") {
  NetGraph net({1, 4, 4});
  net.add(Layer::conv2d(Tensor({2, 1, 1, 1}, 1.0), Tensor({2}, 1.0), 1, 1), "features");
  net.add(Layer::relu());
  net.add(Layer::flatten());
  net.add(Layer::linear(Tensor({1, 32}, 1.0), Tensor({1})));
  GradCamConfig gc;
  gc.tap = "features";
  const AttributionMap m = gradcam(net, wrap(Tensor({1, 4, 4}, 2.0)), kScalarTarget, gc);
  for (double v : m.values.data()) CHECK(v == doctest::Approx(m.values[0]));
  CHECK(m.values[0] > 0.0);

  gc.tap = "nope";
  CHECK_THROWS_AS(gradcam(net, wrap(Tensor({1, 4, 4}, 2.0)), kScalarTarget, gc), LabError);

  MultiColorConfig mc;
  mc.height = mc.width = 16;
  const DataConfig d = small_data(1);
  LabSample s = gen_multi_color(mc, d)[0];
  const NetGraph mnet = build_multi_color_net(mc);
  const AttributionMap cam = gradcam(mnet, s, s.label);
  for (double v : cam.values.data()) CHECK(v >= 0.0);
}

TEST_CASE("bilinear upsampling of a 2x2 grid") {
  const Tensor m({2, 2}, {0.0, 1.0, 2.0, 3.0});
  const Tensor u = bilinear_upsample(m, 4, 4);
  CHECK(u.at(0, 0) == 0.0);
  CHECK(u.at(3, 3) == 3.0);
  CHECK(u.at(1, 1) == doctest::Approx(0.75));  // a quarter of the way toward each neighbor
  CHECK(u.at(1, 2) == doctest::Approx(1.25));
}

TEST_CASE("occlusion: per-pixel oracle, background baseline and window checks") {
  SingleColorConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.modulus = 5;
  const NetGraph net = build_single_color_net(cfg);
  const DataConfig d = small_data(1);
  const LabSample s = gen_single_color(cfg, d)[0];
  OcclusionConfig oc;
  oc.window_c = oc.window_h = oc.window_w = 1;
  oc.stride_c = oc.stride_h = oc.stride_w = 1;
  const Tensor m = occlusion(net, s, kScalarTarget, oc).values;
  const double y0 = evaluate(net, s.image)[0];
  Tensor x = s.image;
  for (std::size_t p = 0; p < x.size(); ++p) {
    const double keep = x[p];
    x[p] = 0.0;
    CHECK(m[p] == doctest::Approx(y0 - evaluate(net, x)[0]).epsilon(1e-12));
    x[p] = keep;
    if (s.gt_signed[p] == 0.0) CHECK(m[p] == 0.0);
  }

  MultiColorConfig mc;
  mc.height = mc.width = 16;
  mc.rho = 1.0;
  const NetGraph mnet = build_multi_color_net(mc);
  const LabSample t = gen_multi_color(mc, d)[0];
  OcclusionConfig mo = default_occlusion(EnvironmentKind::MultiColor);
  mo.window_h = mo.window_w = 1;
  mo.stride_h = mo.stride_w = 1;
  mo.baseline = BaselineSpec::true_color(mc.background);
  const Tensor bg = occlusion(mnet, t, t.label, mo).values;
  const std::size_t plane = 16 * 16;
  for (std::size_t p = 0; p < plane; ++p) {
    const bool background = t.image[p] == 20 && t.image[plane + p] == 20 && t.image[2 * plane + p] == 20;
    if (background) CHECK(bg[p] == 0.0);
  }

  OcclusionConfig big = oc;
  big.window_h = 17;
  CHECK_THROWS_AS(occlusion(net, s, kScalarTarget, big), LabError);
}

TEST_CASE("segmentation: grid cells, felzenszwalb two-tone oracle, full labeling") {
  LabSample s = wrap(Tensor({3, 64, 64}));
  const Segmentation grid = segment_grid(s, 8);
  CHECK(grid.count == 64);
  std::vector<int> sizes(64, 0);
  for (double v : grid.labels.data()) ++sizes[static_cast<std::size_t>(v)];
  for (int n : sizes) CHECK(n == 64);

  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < 64; ++i) {
      for (std::size_t j = 32; j < 64; ++j) s.image.at(c, i, j) = 200.0;
    }
  }
  const Segmentation fz = segment_felzenszwalb(s, 100.0, 0.0, 20);
  CHECK(fz.count == 2);
  CHECK(fz.labels.at(10, 5) != fz.labels.at(10, 60));

  MultiColorConfig mc;
  const DataConfig d = small_data(1);
  const LabSample t = gen_multi_color(mc, d)[0];
  const Segmentation real = segment_felzenszwalb(t, 100.0, 0.5, 20);
  std::vector<bool> used(real.count, false);
  for (double v : real.labels.data()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v < static_cast<double>(real.count));
    used[static_cast<std::size_t>(v)] = true;
  }
  CHECK(std::all_of(used.begin(), used.end(), [](bool b) { return b; }));
}

TEST_CASE("weighted ridge matches an independent normal-equation solve") {
  // Exhaustive masks over 6 segments with kernel-like weights.
  const std::size_t S = 6;
  std::vector<std::vector<double>> z;
  std::vector<double> y, w;
  auto g = make_rng(77);
  for (std::size_t m = 0; m < (1u << S); ++m) {
    std::vector<double> row(S);
    for (std::size_t k = 0; k < S; ++k) row[k] = static_cast<double>((m >> k) & 1u);
    z.push_back(row);
    y.push_back(uniform(g, -1.0, 1.0) + row[0] * 2.0 - row[3]);
    w.push_back(uniform(g, 0.1, 1.0));
  }
  const double lambda = 1e-3;
  const std::vector<double> got = weighted_ridge(z, y, w, lambda);

  // Augmented system with an unpenalized intercept column.
  const std::size_t D = S + 1;
  std::vector<std::vector<double>> a(D, std::vector<double>(D, 0.0));
  std::vector<double> b(D, 0.0);
  for (std::size_t i = 0; i < z.size(); ++i) {
    std::vector<double> row = z[i];
    row.push_back(1.0);
    for (std::size_t r = 0; r < D; ++r) {
      b[r] += w[i] * row[r] * y[i];
      for (std::size_t c = 0; c < D; ++c) a[r][c] += w[i] * row[r] * row[c];
    }
  }
  for (std::size_t k = 0; k < S; ++k) a[k][k] += lambda;
  const std::vector<double> want = gauss_solve(a, b);
  for (std::size_t k = 0; k < D; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-10));
}

TEST_CASE("lime: one segment recovers the output delta, two segments rank the relevant one") {
  MultiColorConfig mc;
  mc.height = mc.width = 16;
  const NetGraph net = build_multi_color_net(mc);
  const DataConfig d = small_data(1);
  const LabSample s = gen_multi_color(mc, d)[0];
  LimeConfig lc;
  lc.segmentation.cell = 16;
  lc.samples = 64;
  lc.ridge = 0.0;
  lc.baseline = BaselineSpec::true_color(mc.background);
  const Tensor m = lime(net, s, s.label, lc).values;
  const double delta = evaluate(net, s.image)[static_cast<std::size_t>(s.label)] -
                       evaluate(net, lc.baseline.image(s.image.shape()))[static_cast<std::size_t>(s.label)];
  for (double v : m.data()) CHECK(v == doctest::Approx(delta).epsilon(1e-9));

  // Left half holds all of the winning color; right half holds none of it.
  LabSample two = s;
  const std::size_t plane = 16 * 16;
  for (std::size_t p = 0; p < plane; ++p) {
    const bool left = p % 16 < 8;
    for (std::size_t c = 0; c < 3; ++c) two.image[c * plane + p] = mc.background.r;
    if (left && p % 2 == 0) {
      const Rgb t = mc.targets[0];
      two.image[p] = t.r;
      two.image[plane + p] = t.g;
      two.image[2 * plane + p] = t.b;
    }
    if (!left && p % 5 == 0) {
      const Rgb t = mc.targets[1];
      two.image[p] = t.r;
      two.image[plane + p] = t.g;
      two.image[2 * plane + p] = t.b;
    }
  }
  LimeConfig half = lc;
  half.segmentation.cell = 8;  // 2 x 2 grid: columns 0 and 1 split left and right
  half.samples = 16;
  const Tensor h = lime(net, two, 0, half).values;
  CHECK(h.at(0, 0) > h.at(0, 15));

  LimeConfig few = lc;
  few.segmentation.cell = 4;
  few.samples = 20;
  CHECK_THROWS_AS(lime(net, s, s.label, few), LabError);
}

TEST_CASE("extremal perturbation: full area keeps the image, values in [0,1]") {
  auto g = make_rng(2);
  const NetGraph net = random_net(g, true, false);
  const Tensor x = random_tensor(g, net.input_shape(), 0.0, 1.0);
  ExPerturbConfig ec;
  ec.area = 1.0;
  ec.steps = 50;
  ec.mask_stride = 2;
  const AttributionMap m = extremal_perturbation(net, wrap(x), 0, ec);
  for (double v : m.values.data()) {
    CHECK(v >= 0.99);
    CHECK(v <= 1.0);
  }
  ec.area = 0.2;
  const AttributionMap part = extremal_perturbation(net, wrap(x), 0, ec);
  for (double v : part.values.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  ec.area = 0.0;
  CHECK_THROWS_AS(extremal_perturbation(net, wrap(x), 0, ec), LabError);
}

TEST_CASE("controls and determinism") {
  const LabSample s = wrap(Tensor({3, 8, 8}));
  CHECK(control_random(s, 1).values == control_random(s, 1).values);
  CHECK(control_random(s, 1).values != control_random(s, 2).values);
  const AttributionMap noise = control_random(s, 4), flat = control_constant(s, 1.0);
  for (double v : noise.values.data()) CHECK((v >= 0.0 && v < 1.0));
  for (double v : flat.values.data()) CHECK(v == 1.0);

  MultiColorConfig mc;
  mc.height = mc.width = 16;
  mc.rho = 1.0;
  const NetGraph net = build_multi_color_net(mc);
  const DataConfig d = small_data(1);
  LabSample t = gen_multi_color(mc, d)[0];
  LabSample blind = t;
  blind.gt_signed.fill(0.0);
  for (const std::string& id : known_methods()) {
    MethodSpec spec{id, "", nlohmann::json::object()};
    if (id == "lime") spec.params = {{"samples", 40}, {"segmentation", {{"cell", 8}}}};
    if (id == "extremal-perturbation") spec.params = {{"steps", 5}};
    const AttributionMap a = run_method(spec, net, t);
    const AttributionMap b = run_method(spec, net, blind);
    CHECK_MESSAGE(a.values == b.values, id);
    CHECK(a.fingerprint == b.fingerprint);
    CHECK(a.values.shape() == Shape{16, 16});
  }
}

TEST_CASE("registry validation and map round trip") {
  CHECK_THROWS_AS(validate_method({"smoothgrad", "", nlohmann::json::object()}), LabError);
  CHECK_THROWS_AS(validate_method({"integrated-gradients", "", {{"stepz", 10}}}), LabError);
  CHECK_THROWS_AS(validate_method({"integrated-gradients", "", {{"steps", 4}}}), LabError);
  CHECK_NOTHROW(validate_method({"occlusion", "", {{"window", {1, 3, 3}}, {"strides", {1, 2, 2}}}}));
  CHECK_NOTHROW(validate_method({"integrated-gradients", "ig-true", {{"baseline", {{"color", {20, 20, 20}}, {"provenance", "true-baseline"}}}}}));

  const LabSample s = wrap(Tensor({3, 5, 7}));
  AttributionMap m = control_random(s, 9);
  m.values[3] = -2.5;
  const auto dir = std::filesystem::temp_directory_path() / "alab_map_rt";
  std::filesystem::remove_all(dir);
  save_map(m, dir, "0000_random", true);
  const AttributionMap back = load_map(dir, "0000_random");
  CHECK(back.values == m.values);
  CHECK(back.fingerprint == m.fingerprint);
  CHECK(back.method == "random");
  CHECK(std::filesystem::exists(dir / "0000_random.png"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("pixel-deduplicated evaluation equals the plain forward pass") {
  MultiColorConfig mc;
  mc.rho = 1.0;
  const NetGraph net = build_multi_color_net(mc);
  const DataConfig d = small_data(2);
  for (const LabSample& s : gen_multi_color(mc, d)) {
    CHECK(rel_err(evaluate(net, s.image), forward(net, s.image).output) < 1e-14);
  }
  SingleColorConfig sc;
  const NetGraph snet = build_single_color_net(sc);
  const LabSample t = gen_single_color(sc, d)[0];
  CHECK(evaluate(snet, t.image)[0] == forward(snet, t.image).output[0]);
}

}  // TEST_SUITE
