#include <algorithm>
#include <numeric>

#include "alab/error.hpp"
#include "alab/evalmetrics.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace alab;
using testing::random_tensor;

namespace {

LabSample with_gt(Tensor gt, std::size_t channels = 1) {
  LabSample s;
  s.image = Tensor({channels, gt.dim(0), gt.dim(1)});
  s.gt_signed = std::move(gt);
  return s;
}

DataConfig small_data(std::size_t count, std::uint64_t seed = 7) {
  DataConfig d;
  d.count = count;
  d.seed = seed;
  d.patches = 2;
  d.min_radius_fraction = 0.2;
  d.max_radius_fraction = 0.3;
  d.min_patch_pixels = 4;
  return d;
}

// Textbook formulas, kept apart from the library's two-pass version.
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
  const long double num = n * sab - sa * sb;
  return static_cast<double>(num / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb)));
}

double naive_spearman_distinct(const std::vector<double>& a, const std::vector<double>& b) {
  // 1 - 6 sum d^2 / (n (n^2 - 1)) holds when there are no ties.
  auto rank = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      r[i] = 1.0 + static_cast<double>(std::count_if(v.begin(), v.end(), [&](double w) { return w > v[i]; }));
    }
    return r;
  };
  const auto ra = rank(a), rb = rank(b);
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  const double n = static_cast<double>(a.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace

TEST_SUITE("evalmetrics") {

TEST_CASE("normalization") {
  const Tensor m({1, 3}, {2.0, -4.0, 0.0});
  const Tensor n = normalize_attribution(m);
  CHECK(n == Tensor({1, 3}, {1.0, -1.0, 0.0}));
  CHECK(normalize_attribution(n) == n);
  const Tensor pos({2, 2}, {0.5, 3.0, 1.5, 0.0});
  CHECK(normalize_attribution(pos)[1] == 1.0);
  CHECK(normalize_attribution(Tensor({2, 2})) == Tensor({2, 2}));
  CHECK_THROWS_AS(normalize_attribution(Tensor({1, 1}, std::nan(""))), LabError);
}

TEST_CASE("soft precision and recall") {
  const LabSample s = with_gt(Tensor({1, 3}, {1.0, 1.0, 0.0}));
  const ScoreTriple t = score(Tensor({1, 3}, {1.0, 0.5, 0.0}), s, GtVariant::overall());
  CHECK(t.precision == doctest::Approx(1.0));
  CHECK(t.recall == doctest::Approx(0.75));
  CHECK(t.f1 == doctest::Approx(2 * 0.75 / 1.75));

  auto g = make_rng(4);
  Tensor gt({8, 8});
  for (double& v : gt.data()) v = static_cast<double>(static_cast<int>(g() % 3)) - 1.0;
  const LabSample u = with_gt(gt);
  const ScoreTriple perfect = score(gt_mask(u, GtVariant::overall()), u, GtVariant::overall());
  CHECK(perfect.precision == 1.0);
  CHECK(perfect.recall == 1.0);
  CHECK(perfect.f1 == 1.0);

  const ScoreTriple flat = score(Tensor({8, 8}, 1.0), u, GtVariant::overall());
  std::size_t on = 0;
  for (double v : gt.data()) on += v != 0.0;
  CHECK(flat.recall == 1.0);
  CHECK(flat.precision == static_cast<double>(on) / 64.0);

  // Binary maps give set precision and recall.
  Tensor pick({8, 8});
  std::size_t chosen = 0, hit = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    if (g() % 2) {
      pick[i] = 1.0;
      ++chosen;
      hit += gt[i] != 0.0;
    }
  }
  const ScoreTriple b = score(pick, u, GtVariant::overall());
  CHECK(b.precision == doctest::Approx(static_cast<double>(hit) / static_cast<double>(chosen)).epsilon(1e-15));
  CHECK(b.recall == doctest::Approx(static_cast<double>(hit) / static_cast<double>(on)).epsilon(1e-15));

  // Scale invariance for non-negative maps.
  const Tensor a = random_tensor(g, {8, 8}, 0.0, 1.0);
  const ScoreTriple s1 = score(a, u, GtVariant::positive()), s2 = score(a * 37.0, u, GtVariant::positive());
  CHECK(s1.precision == doctest::Approx(s2.precision).epsilon(1e-14));
  CHECK(s1.recall == doctest::Approx(s2.recall).epsilon(1e-14));

  CHECK_THROWS_AS(score(Tensor({3, 1}), s, GtVariant::overall()), LabError);
}

TEST_CASE("signed variants") {
  const LabSample s = with_gt(Tensor({1, 4}, {1.0, -1.0, 0.0, 1.0}));
  const Tensor m({1, 4}, {1.0, -1.0, 0.0, 0.0});
  // Negative attributions stay out of the positive denominator.
  const ScoreTriple pos = score(m, s, GtVariant::positive());
  CHECK(pos.precision == 1.0);
  CHECK(pos.recall == 0.5);
  const ScoreTriple neg = score(m, s, GtVariant::negative());
  CHECK(neg.precision == 1.0);
  CHECK(neg.recall == 1.0);
  CHECK_FALSE(neg.incapable);

  const ScoreTriple none = score(Tensor({1, 4}, {1.0, 0.5, 0.0, 0.0}), s, GtVariant::negative(), "guided");
  CHECK(none.incapable);
  CHECK(none.f1 == 0.0);
  CHECK(none.to_json()["incapable"] == true);
}

TEST_CASE("faithfulness threshold is inclusive") {
  CHECK(faithfulness_test(0.51).pass);
  CHECK(faithfulness_test(0.5).pass);
  CHECK_FALSE(faithfulness_test(0.49).pass);
  CHECK(faithfulness_test(0.7, 0.8).gamma == 0.8);
}

TEST_CASE("ordering, trapezoids and curve output") {
  const Tensor m({2, 3}, {0.5, 2.0, 0.5, -1.0, 2.0, 0.0});
  CHECK(attribution_order(m) == std::vector<std::size_t>{1, 4, 0, 2, 5, 3});
  const auto shuffled = attribution_order(m, 3);
  CHECK(shuffled.size() == 6);
  CHECK(m[shuffled[0]] == 2.0);
  CHECK(m[shuffled[5]] == -1.0);
  CHECK(attribution_order(m, 3) == shuffled);

  CHECK(trapezoid_auc({0.0, 0.5, 1.0}, {0.0, 1.0, 1.0}) == doctest::Approx(0.75));
  CurveResult c;
  c.x = {0.0, 1.0};
  c.y = {1.0, 0.5};
  CHECK(c.to_csv() == "x,y\n0,1\n1,0.5\n");
}

TEST_CASE("insertion and deletion on an affine net follow the mixture oracle") {
  // For an affine net the expectation over random orderings of k pixels is
  // the output at the image mixed with the replacement at rate k / n.
  auto g = make_rng(6);
  NetGraph net({3, 8, 8});
  net.add(Layer::flatten());
  net.add(Layer::linear(random_tensor(g, {1, 192}), Tensor({1}, 0.3)));
  LabSample s = with_gt(Tensor({8, 8}), 3);
  s.image = random_tensor(g, {3, 8, 8}, 0.0, 255.0);
  const Tensor flat({8, 8}, 1.0);
  CurveConfig cfg;
  cfg.step_fraction = 0.125;
  cfg.replacement = BaselineSpec::custom_color({20, 20, 20});
  const Tensor fill = cfg.replacement.image(s.image.shape());

  for (CurveMode mode : {CurveMode::Insertion, CurveMode::Deletion}) {
    const int seeds = 400;
    std::vector<double> mean(9, 0.0);
    for (int k = 0; k < seeds; ++k) {
      cfg.tie_seed = static_cast<std::uint64_t>(k);
      const CurveResult c = insertion_deletion(net, s, flat, mode, cfg);
      REQUIRE(c.x.size() == 9);
      for (std::size_t i = 0; i < 9; ++i) mean[i] += c.y[i] / seeds;
    }
    for (std::size_t i = 0; i < 9; ++i) {
      const double f = static_cast<double>(i) / 8.0;
      const double kept = mode == CurveMode::Insertion ? f : 1.0 - f;
      const double want = evaluate(net, s.image * kept + fill * (1.0 - kept))[0];
      const double spread = std::abs(evaluate(net, s.image)[0] - evaluate(net, fill)[0]);
      CHECK(near(mean[i], want, 0.05 * spread + 1e-9));
    }
  }
}

TEST_CASE("ground-truth ordering on the multi-color net without redundant wiring") {
  MultiColorConfig mc;
  mc.height = mc.width = 16;
  mc.rho = 0.0;
  const NetGraph net = build_multi_color_net(mc);
  for (const LabSample& s : gen_multi_color(mc, small_data(3))) {
    CurveConfig cfg;
    cfg.replacement = BaselineSpec::true_color(mc.background);
    const CurveResult best = insertion_deletion(net, s, s.gt_signed, CurveMode::Insertion, cfg);
    auto g = make_rng(s.index, 99);
    for (int k = 0; k < 4; ++k) {
      const Tensor other = random_tensor(g, {16, 16});
      CHECK(insertion_deletion(net, s, other, CurveMode::Insertion, cfg).auc <= best.auc + 1e-12);
    }
    CHECK(insertion_deletion(net, s, Tensor({16, 16}, 1.0), CurveMode::Insertion, cfg).auc <= best.auc + 1e-12);

    // Deletion never rises while positive pixels remain.
    std::size_t positive = 0;
    for (double v : s.gt_signed.data()) positive += v > 0.0;
    const CurveResult del = insertion_deletion(net, s, s.gt_signed, CurveMode::Deletion, cfg);
    for (std::size_t i = 1; i < del.x.size() && del.x[i - 1] * 256.0 < static_cast<double>(positive); ++i) {
      CHECK(del.y[i] <= del.y[i - 1] + 1e-12);
    }
  }
}

TEST_CASE("zero replacement breaks monotonicity once redundant channels are wired") {
  MultiColorConfig mc;
  mc.height = mc.width = 16;
  mc.rho = 1.0;
  const NetGraph net = build_multi_color_net(mc);
  bool rises = false;
  for (const LabSample& s : gen_multi_color(mc, small_data(5))) {
    const CurveResult del = insertion_deletion(net, s, s.gt_signed, CurveMode::Deletion);
    for (std::size_t i = 1; i < del.y.size(); ++i) rises |= del.y[i] > del.y[i - 1] + 1e-9;
  }
  CHECK(rises);
}

TEST_CASE("adapted curves: oracle, worst case and step symmetry") {
  SingleColorConfig sc;
  sc.height = sc.width = 8;
  sc.modulus = 5;
  const NetGraph net = build_single_color_net(sc);
  DataConfig d = small_data(6);
  d.patches = 1;
  for (const LabSample& s : gen_single_color(sc, d)) {
    const double n = 64.0;
    double G = 0.0;
    for (double v : s.gt_signed.data()) G += v != 0.0;
    const double best = 1.0 - G / (2.0 * n);
    const CurveResult oracle = adapted_oracle_curve(net, s, CurveMode::Insertion);
    CHECK(oracle.auc == doctest::Approx(best).epsilon(1e-12));
    CHECK(adapted_oracle_curve(net, s, CurveMode::Deletion).auc == doctest::Approx(1.0 - best).epsilon(1e-12));

    const Tensor worst = gt_mask(s, GtVariant::overall()) * -1.0;
    CHECK(adapted_insertion_deletion(net, s, worst, CurveMode::Insertion).auc ==
          doctest::Approx(1.0 - best).epsilon(1e-12));

    auto g = make_rng(s.index, 5);
    for (int k = 0; k < 20; ++k) {
      const Tensor m = random_tensor(g, {8, 8});
      const double ins = adapted_insertion_deletion(net, s, m, CurveMode::Insertion).auc;
      const double del = adapted_insertion_deletion(net, s, m, CurveMode::Deletion).auc;
      CHECK(std::abs(ins + del - 1.0) <= 1.0 / n);
      CHECK(ins <= best + 1e-12);
      CHECK(ins >= 1.0 - best - 1e-12);
    }
  }
}

TEST_CASE("adapted insertion of random maps averages one half") {
  SingleColorConfig sc;
  sc.height = sc.width = 16;
  sc.modulus = 7;
  const NetGraph net = build_single_color_net(sc);
  const auto samples = gen_single_color(sc, small_data(10));
  double total = 0.0;
  int count = 0;
  for (const LabSample& s : samples) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const AttributionMap m = control_random(s, seed);
      total += adapted_insertion_deletion(net, s, m.values, CurveMode::Insertion).auc;
      ++count;
    }
  }
  CHECK(near(total / count, 0.5, 0.03));
}

TEST_CASE("adapted sensitivity-n of the oracle") {
  SingleColorConfig sc;
  sc.height = sc.width = 16;
  sc.modulus = 7;
  const NetGraph net = build_single_color_net(sc);
  const LabSample s = gen_single_color(sc, small_data(1))[0];
  SensitivityConfig cfg;
  cfg.mode = SensitivityMode::Adapted;
  cfg.repeats = 30;
  const SensitivityProbe probe = sensitivity_probe(net, s, cfg);
  CHECK(probe.n_grid == default_n_grid(256));
  const Tensor oracle = gt_mask(s, GtVariant::overall());
  const CurveResult up = sensitivity_n(probe, oracle);
  const CurveResult down = sensitivity_n(probe, oracle * -1.0);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < up.y.size(); ++i) {
    if (up.degenerate[i]) {
      CHECK(up.y[i] == 0.0);
      continue;
    }
    ++valid;
    CHECK(up.y[i] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(down.y[i] == doctest::Approx(-1.0).epsilon(1e-12));
  }
  CHECK(valid >= 4);
  CHECK(up.degenerate.back());  // every repeat perturbs the whole image
  CHECK(up.mean_y() == doctest::Approx(1.0));

  cfg.repeats = 1;
  CHECK_THROWS_AS(sensitivity_probe(net, s, cfg), LabError);
}

TEST_CASE("standard sensitivity-n") {
  auto g = make_rng(31);
  NetGraph affine({1, 6, 6});
  affine.add(Layer::flatten());
  const Tensor w = random_tensor(g, {1, 36});
  affine.add(Layer::linear(w, Tensor({1})));
  LabSample s = with_gt(Tensor({6, 6}));
  s.image = random_tensor(g, {1, 6, 6});
  SensitivityConfig cfg;
  cfg.repeats = 25;
  cfg.n_grid = {1, 3, 9, 20};
  const SensitivityProbe probe = sensitivity_probe(affine, s, cfg);
  // The exact contributions of an affine net correlate perfectly.
  Tensor exact({6, 6});
  for (std::size_t i = 0; i < 36; ++i) exact[i] = w[i] * s.image[i];
  for (double r : sensitivity_n(probe, exact).y) CHECK(r == doctest::Approx(1.0).epsilon(1e-12));

  // A sign-confused map on the wired multi-color net tends to anti-correlate.
  MultiColorConfig mc;
  mc.height = mc.width = 16;
  mc.rho = 1.0;
  const NetGraph net = build_multi_color_net(mc);
  SensitivityConfig sc;
  sc.repeats = 40;
  double mean = 0.0;
  const auto samples = gen_multi_color(mc, small_data(3));
  for (const LabSample& t : samples) mean += sensitivity_n(sensitivity_probe(net, t, sc), t.gt_signed * -1.0).mean_y();
  CHECK(mean < 0.0);

  cfg.n_grid = {3, 2};
  CHECK_THROWS_AS(sensitivity_probe(affine, s, cfg), LabError);
  cfg.n_grid = {40};
  CHECK_THROWS_AS(sensitivity_probe(affine, s, cfg), LabError);
}

TEST_CASE("correlations match naive references") {
  auto g = make_rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 5 + g() % 60;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = uniform(g, -3.0, 3.0);
      b[i] = 0.4 * a[i] + uniform(g, -1.0, 1.0);
    }
    CHECK(near(pearson(a, b), naive_pearson(a, b), 1e-12));
    CHECK(near(spearman(a, b), naive_spearman_distinct(a, b), 1e-12));
  }
  CHECK(spearman({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(average_ranks({5.0, 1.0, 5.0, 3.0}) == std::vector<double>{1.5, 4.0, 1.5, 3.0});
  CHECK(average_ranks({5.0, 1.0, 5.0, 3.0}, false) == std::vector<double>{3.5, 1.0, 3.5, 2.0});

  bool flat = false;
  CHECK(pearson({1, 1, 1}, {1, 2, 3}, &flat) == 0.0);
  CHECK(flat);
  // Equal sums accumulated in different orders still count as constant.
  CHECK(pearson({0.1 + 0.2 + 0.3, 0.3 + 0.2 + 0.1, 0.2 + 0.1 + 0.3}, {1, 2, 3}, &flat) == 0.0);
  CHECK(flat);
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), LabError);
}

TEST_CASE("rank table") {
  const std::vector<std::string> methods{"a", "b", "c", "d"};
  const RankTable t = build_rank_table(methods, rank_column("f1", {0.9, 0.5, 0.7, 0.1}),
                                       {rank_column("insertion", {0.8, 0.3, 0.6, 0.2}),
                                        rank_column("deletion", {0.1, 0.6, 0.2, 0.9}, false),
                                        rank_column("noise", {0.5, 0.5, 0.1, 0.9})});
  CHECK(t.reference.ranks == std::vector<double>{1, 3, 2, 4});
  CHECK(t.columns[0].spearman == doctest::Approx(1.0));
  CHECK(t.columns[1].spearman == doctest::Approx(1.0));
  CHECK(t.columns[2].ranks == std::vector<double>{2.5, 2.5, 4, 1});
  for (const RankColumn& c : t.columns) {
    CHECK(std::accumulate(c.ranks.begin(), c.ranks.end(), 0.0) == 10.0);
  }
  const nlohmann::json j = t.to_json();
  CHECK(j["columns"].size() == 3);
  CHECK(t.to_csv().rfind("method,f1_score,f1_rank,insertion_score", 0) == 0);
  CHECK_THROWS_AS(build_rank_table({"a", "b"}, rank_column("f1", {1, 2}), {}), LabError);
  CHECK_THROWS_AS(build_rank_table(methods, rank_column("f1", {1, 2, 3}), {}), LabError);
}

TEST_CASE("incremental evaluation on the designed nets") {
  SingleColorConfig sc;
  sc.height = sc.width = 32;
  const NetGraph snet = build_single_color_net(sc);
  MultiColorConfig mc;
  mc.height = mc.width = 32;
  const NetGraph mnet = build_multi_color_net(mc);
  const LabSample a = gen_single_color(sc, small_data(1))[0];
  const LabSample b = gen_multi_color(mc, small_data(1))[0];
  auto g = make_rng(3);
  for (const auto& [net, s] : {std::pair{&snet, &a}, std::pair{&mnet, &b}}) {
    IncrementalForward inc(*net, s->image);
    const Tensor blank(s->image.shape());
    for (int k = 0; k < 60; ++k) {
      inc.assign({static_cast<std::size_t>(g() % 1024)}, blank);
      if (k % 10 == 0) CHECK(testing::rel_err(inc.output(), evaluate(*net, inc.input())) < 1e-14);
    }
  }
}

}  // TEST_SUITE
