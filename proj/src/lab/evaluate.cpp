#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "alab/bundle.hpp"
#include "alab/error.hpp"
#include "alab/lab.hpp"

namespace alab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string stem_of(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::Io, p.string() + ": write failed");
}

/// Piecewise-linear value of a curve at `x` (curves start at 0, end at 1).
double sample_curve(const CurveResult& c, double x) {
  if (c.x.empty()) return 0.0;
  if (x <= c.x.front()) return c.y.front();
  for (std::size_t i = 1; i < c.x.size(); ++i) {
    if (x <= c.x[i]) {
      const double span = c.x[i] - c.x[i - 1];
      const double t = span > 0.0 ? (x - c.x[i - 1]) / span : 1.0;
      return c.y[i - 1] + t * (c.y[i] - c.y[i - 1]);
    }
  }
  return c.y.back();
}

/// Pointwise mean of curves sharing one grid, or resampled onto `grid`
/// when their grids differ.
CurveResult mean_curve(const std::vector<CurveResult>& curves, const std::vector<double>& grid) {
  CurveResult m;
  if (curves.empty()) return m;
  const bool shared = std::all_of(curves.begin(), curves.end(), [&](const CurveResult& c) { return c.x == curves[0].x; });
  m.x = shared ? curves[0].x : grid;
  m.y.assign(m.x.size(), 0.0);
  if (!curves[0].degenerate.empty()) m.degenerate.assign(m.x.size(), true);
  for (const CurveResult& c : curves) {
    for (std::size_t i = 0; i < m.x.size(); ++i) {
      m.y[i] += (shared ? c.y[i] : sample_curve(c, m.x[i])) / static_cast<double>(curves.size());
      if (shared && !m.degenerate.empty() && !c.degenerate[i]) m.degenerate[i] = false;
    }
  }
  m.auc = trapezoid_auc(m.x, m.y);
  if (!m.degenerate.empty()) {
    const double last = m.x.back();
    std::vector<double> fraction;
    for (double v : m.x) fraction.push_back(v / last);
    m.auc = trapezoid_auc(fraction, m.y);
  }
  return m;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double e : v) s += e;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

json score_json(const ScoreTriple& t) { return {{"precision", t.precision}, {"recall", t.recall}, {"f1", t.f1}}; }

json cell_json(const MetricCell& c) {
  if (!c.value) return {{"skipped", c.skipped}};
  return {{"value", *c.value}, {"per_sample", c.per_sample}, {"mean_curve", c.mean_curve.to_json()}};
}

const char* kCurveMetrics[] = {"insertion", "deletion", "sensitivity-n"};

}  // namespace

json EvalReport::to_json() const {
  json methods_j = json::array();
  for (const MethodSummary& m : methods) {
    json scores = json::object(), per = json::object();
    for (std::size_t v = 0; v < variants.size() && v < m.mean_scores.size(); ++v) {
      const std::string name = gt_variant_name(variants[v]);
      scores[name] = score_json(m.mean_scores[v]);
      std::size_t incapable = 0;
      json rows = json::array();
      for (const ScoreTriple& t : m.per_sample[v]) {
        rows.push_back(json::array({t.precision, t.recall, t.f1}));
        incapable += t.incapable;
      }
      per[name] = rows;
      if (incapable) scores[name]["incapable_samples"] = incapable;
    }
    json metrics_j = json::object();
    for (const auto& [k, c] : m.metrics) metrics_j[k] = cell_json(c);
    methods_j.push_back({{"label", m.label},
                         {"id", m.id},
                         {"samples", m.samples},
                         {"skipped", m.skipped},
                         {"scores", scores},
                         {"per_sample_prf", per},
                         {"verdict", m.verdict.to_json()},
                         {"pass_rate", m.pass_rate},
                         {"metrics", metrics_j}});
  }
  json variants_j = json::array();
  for (const GtVariant& v : variants) variants_j.push_back(gt_variant_name(v));
  json j{{"tool_version", tool_version},
         {"environment", environment},
         {"fingerprints", fingerprints},
         {"gamma", gamma},
         {"variants", variants_j},
         {"reference_variant", gt_variant_name(reference)},
         {"methods", methods_j},
         {"notes", notes}};
  j["rank_table"] = ranks ? ranks->to_json() : json(nullptr);
  return j;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "method,id,samples";
  for (const GtVariant& v : variants) {
    const std::string n = gt_variant_name(v);
    os << ',' << n << "_precision," << n << "_recall," << n << "_f1";
  }
  os << ",pass,pass_rate";
  for (const char* m : kCurveMetrics) os << ',' << m;
  os << '\n';
  for (const MethodSummary& m : methods) {
    os << m.label << ',' << m.id << ',' << m.samples;
    for (std::size_t v = 0; v < variants.size(); ++v) {
      if (v < m.mean_scores.size()) {
        os << ',' << m.mean_scores[v].precision << ',' << m.mean_scores[v].recall << ',' << m.mean_scores[v].f1;
      } else {
        os << ",,,";
      }
    }
    os << ',' << (m.verdict.pass ? "yes" : "no") << ',' << m.pass_rate;
    for (const char* k : kCurveMetrics) {
      os << ',';
      const auto it = m.metrics.find(k);
      if (it != m.metrics.end() && it->second.value) os << *it->second.value;
    }
    os << '\n';
  }
  return os.str();
}

EvalReport stage_evaluate(const RunConfig& cfg, const fs::path& maps_dir, const fs::path& data_dir,
                          const fs::path& net_dir, const fs::path& out, std::size_t threads, const StageLog& log) {
  cfg.validate();
  const json maps_fp = read_fingerprint(maps_dir);
  const json net_fp = read_fingerprint(net_dir);
  const json data_fp = read_fingerprint(data_dir);
  auto agree = [&](const char* what, const std::string& a, const std::string& b, const std::string& c) {
    if (a != c || b != c) {
      fail(ErrorKind::Config, std::string("fingerprint mismatch for the ") + what + ": maps '" + a + "', inputs '" +
                                  b + "', config '" + c + "'");
    }
  };
  agree("net", maps_fp.value("net", ""), net_fp.value("net", ""), cfg.net_fingerprint());
  agree("dataset", maps_fp.value("data", ""), data_fp.value("data", ""), cfg.data_fingerprint());

  const NetGraph net = load_bundle(net_dir).net;
  const std::vector<LabSample> samples = import_dataset(data_dir);
  const std::vector<MethodSpec> methods = cfg.resolved_methods();
  const bool single = cfg.environment == EnvironmentKind::SingleColor;
  const MetricSettings& ms = cfg.metrics;
  const std::size_t S = samples.size(), M = methods.size();

  EvalReport rep;
  rep.environment = environment_name(cfg.environment);
  rep.gamma = cfg.gamma;
  rep.fingerprints = {{"net", cfg.net_fingerprint()}, {"data", cfg.data_fingerprint()},
                      {"maps", maps_fp.value("methods", json::object())}, {"config", fingerprint_of(cfg.to_json())}};
  if (single) {
    rep.variants = {GtVariant::overall(), GtVariant::smoothed_positive(ms.smoothing_radius)};
    rep.reference = GtVariant::overall();
  } else {
    rep.variants = {GtVariant::overall(), GtVariant::positive(), GtVariant::negative(),
                    GtVariant::smoothed_positive(ms.smoothing_radius)};
    rep.reference = GtVariant::positive();
  }
  const std::size_t ref = single ? 0 : 1;

  // Load every map up front; missing ones become skipped cells.
  std::vector<std::optional<Tensor>> maps(M * S);
  std::vector<std::string> missing(M * S);
  for (std::size_t cell = 0; cell < M * S; ++cell) {
    try {
      maps[cell] = load_map(maps_dir / methods[cell / S].display(), stem_of(cell % S)).values;
    } catch (const LabError& e) {
      missing[cell] = e.what();
    }
  }

  // Sensitivity-N draws depend on the sample only, so probes are shared.
  std::vector<SensitivityProbe> probes(S);
  std::vector<std::string> probe_errors(S);
  if (ms.wants("sensitivity-n")) {
    SensitivityConfig sc;
    sc.mode = single ? SensitivityMode::Adapted : SensitivityMode::Standard;
    sc.repeats = ms.repeats;
    sc.n_grid = ms.n_grid;
    sc.replacement = ms.replacement;
    sc.seed = ms.seed;
    probe_errors = parallel_cells(S, threads, [&](std::size_t i) { probes[i] = sensitivity_probe(net, samples[i], sc); });
    log.line("evaluate: sensitivity-n probes ready for " + std::to_string(S) + " samples");
  }

  struct CellResult {
    std::vector<ScoreTriple> scores;
    std::optional<CurveResult> ins, del, sens;
    std::string error;
  };
  std::vector<CellResult> cells(M * S);
  const auto errors = parallel_cells(M * S, threads, [&](std::size_t cell) {
    if (!maps[cell]) return;
    const Tensor& map = *maps[cell];
    const LabSample& s = samples[cell % S];
    CellResult& r = cells[cell];
    for (const GtVariant& v : rep.variants) r.scores.push_back(score(map, s, v, methods[cell / S].display()));
    CurveConfig cc;
    cc.replacement = ms.replacement;
    cc.step_fraction = ms.step_fraction;
    if (ms.wants("insertion")) {
      r.ins = single ? adapted_insertion_deletion(net, s, map, CurveMode::Insertion)
                     : insertion_deletion(net, s, map, CurveMode::Insertion, cc);
    }
    if (ms.wants("deletion")) {
      r.del = single ? adapted_insertion_deletion(net, s, map, CurveMode::Deletion)
                     : insertion_deletion(net, s, map, CurveMode::Deletion, cc);
    }
    if (ms.wants("sensitivity-n") && probe_errors[cell % S].empty()) r.sens = sensitivity_n(probes[cell % S], map);
  });

  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
  for (std::size_t m = 0; m < M; ++m) {
    MethodSummary sum;
    sum.label = methods[m].display();
    sum.id = methods[m].id;
    sum.per_sample.resize(rep.variants.size());
    std::vector<CurveResult> ins, del, sens;
    std::vector<std::string> curve_errors;
    for (std::size_t i = 0; i < S; ++i) {
      const std::size_t cell = m * S + i;
      if (!maps[cell]) {
        sum.skipped.push_back("sample " + std::to_string(i) + ": " + missing[cell]);
        continue;
      }
      if (!errors[cell].empty()) {
        sum.skipped.push_back("sample " + std::to_string(i) + ": " + errors[cell]);
        continue;
      }
      ++sum.samples;
      for (std::size_t v = 0; v < rep.variants.size(); ++v) sum.per_sample[v].push_back(cells[cell].scores[v]);
      if (cells[cell].ins) ins.push_back(*cells[cell].ins);
      if (cells[cell].del) del.push_back(*cells[cell].del);
      if (cells[cell].sens) sens.push_back(*cells[cell].sens);
    }
    for (std::size_t v = 0; v < rep.variants.size(); ++v) {
      ScoreTriple t;
      t.variant = rep.variants[v];
      t.method = sum.label;
      for (const ScoreTriple& s : sum.per_sample[v]) {
        t.precision += s.precision;
        t.recall += s.recall;
        t.f1 += s.f1;
      }
      const double n = std::max<double>(1.0, static_cast<double>(sum.per_sample[v].size()));
      t.precision /= n;
      t.recall /= n;
      t.f1 /= n;
      sum.mean_scores.push_back(t);
    }
    if (ms.wants("gt")) {
      sum.verdict = faithfulness_test(sum.mean_scores[ref], cfg.gamma);
      std::size_t passed = 0;
      for (const ScoreTriple& s : sum.per_sample[ref]) passed += s.f1 >= cfg.gamma;
      sum.pass_rate = sum.samples ? static_cast<double>(passed) / static_cast<double>(sum.samples) : 0.0;
    }
    auto fill = [&](const char* name, const std::vector<CurveResult>& curves, bool use_mean_y) {
      if (!ms.wants(name)) return;
      MetricCell c;
      if (curves.empty()) {
        c.skipped = sum.samples ? "no curve could be computed" : "no maps available";
        if (std::string(name) == "sensitivity-n") {
          for (const std::string& e : probe_errors) {
            if (!e.empty()) c.skipped = "probe failed: " + e;
          }
        }
      } else {
        for (const CurveResult& cr : curves) c.per_sample.push_back(use_mean_y ? cr.mean_y() : cr.auc);
        c.value = mean_of(c.per_sample);
        c.mean_curve = mean_curve(curves, grid);
      }
      sum.metrics[name] = c;
    };
    fill("insertion", ins, false);
    fill("deletion", del, false);
    fill("sensitivity-n", sens, true);
    rep.methods.push_back(std::move(sum));
  }

  // Rank table against the reference ground truth.
  if (M >= 3 && ms.wants("gt")) {
    std::vector<std::string> labels;
    std::vector<double> f1;
    for (const MethodSummary& m : rep.methods) {
      labels.push_back(m.label);
      f1.push_back(m.mean_scores[ref].f1);
    }
    std::vector<RankColumn> cols;
    for (const char* k : kCurveMetrics) {
      std::vector<double> v;
      for (const MethodSummary& m : rep.methods) {
        const auto it = m.metrics.find(k);
        if (it == m.metrics.end() || !it->second.value) break;
        v.push_back(*it->second.value);
      }
      if (v.size() == M) cols.push_back(rank_column(k, v, std::string(k) != "deletion"));
    }
    rep.ranks = build_rank_table(labels, rank_column("f1-" + gt_variant_name(rep.reference), f1), cols);
  } else {
    rep.notes.push_back("rank table skipped: needs at least three methods and the gt metric");
  }
  if (single) rep.notes.push_back("single-color curves use the adapted one-pixel-per-step protocol");

  // Artifacts.
  write_text(out / "report.json", rep.to_json().dump(2) + "\n");
  write_text(out / "report.csv", rep.to_csv());
  if (rep.ranks) write_text(out / "rank_table.csv", rep.ranks->to_csv());
  for (const MethodSummary& m : rep.methods) {
    for (const auto& [k, c] : m.metrics) {
      if (c.value) write_text(out / "curves" / (m.label + "_" + k + ".csv"), c.mean_curve.to_csv());
    }
  }
  for (std::size_t v = 0; v < rep.variants.size(); ++v) {
    const std::string name = gt_variant_name(rep.variants[v]);
    for (const char* part : {"precision", "recall"}) {
      std::vector<std::pair<std::string, std::vector<double>>> groups;
      for (const MethodSummary& m : rep.methods) {
        std::vector<double> vals;
        for (const ScoreTriple& t : m.per_sample[v]) vals.push_back(part[0] == 'p' ? t.precision : t.recall);
        groups.emplace_back(m.label, vals);
      }
      write_text(out / "plots" / (std::string(part) + "_" + name + ".svg"),
                 svg_violin(std::string(part) + " vs " + name + " ground truth", part, groups));
    }
  }
  for (const char* k : kCurveMetrics) {
    std::vector<Series> series;
    for (const MethodSummary& m : rep.methods) {
      const auto it = m.metrics.find(k);
      if (it != m.metrics.end() && it->second.value) {
        series.push_back({m.label, it->second.mean_curve.x, it->second.mean_curve.y});
      }
    }
    if (series.empty()) continue;
    const bool sens = std::string(k) == "sensitivity-n";
    const std::string y_label = sens ? "Pearson r" : (single ? "correct steps / GT pixels" : "target probability");
    write_text(out / "plots" / (std::string(k) + ".svg"),
               svg_line_chart(k, sens ? "N (perturbed pixels)" : "fraction perturbed", y_label, series));
  }
  write_fingerprint(out, {{"stage", "evaluate"},
                          {"net", cfg.net_fingerprint()},
                          {"data", cfg.data_fingerprint()},
                          {"config", fingerprint_of(cfg.to_json())}});
  log.line("evaluate: " + std::to_string(M) + " methods x " + std::to_string(S) + " samples -> " + out.string());
  return rep;
}

std::string stage_report(const fs::path& eval_dir) {
  std::ifstream in(eval_dir / "report.json");
  if (!in) fail(ErrorKind::Io, (eval_dir / "report.json").string() + ": missing; run evaluate first");
  json r;
  try {
    r = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, (eval_dir / "report.json").string() + ": " + e.what());
  }
  const std::string ref = r.at("reference_variant").get<std::string>();
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "# " << r.at("environment").get<std::string>() << " report (" << r.at("tool_version").get<std::string>()
     << ")\n\n";
  os << "| method | P (" << ref << ") | R | F1 | pass (gamma " << r.at("gamma").get<double>()
     << ") | insertion | deletion | sensitivity-n |\n";
  os << "|---|---|---|---|---|---|---|---|\n";
  for (const json& m : r.at("methods")) {
    os << "| " << m.at("label").get<std::string>();
    if (m.at("scores").contains(ref)) {
      const json& s = m.at("scores").at(ref);
      os << " | " << s.at("precision").get<double>() << " | " << s.at("recall").get<double>() << " | "
         << s.at("f1").get<double>();
    } else {
      os << " | - | - | -";
    }
    os << " | " << (m.at("verdict").at("pass").get<bool>() ? "yes" : "no");
    for (const char* k : kCurveMetrics) {
      os << " | ";
      const json& mm = m.at("metrics");
      if (mm.contains(k) && mm.at(k).contains("value")) os << mm.at(k).at("value").get<double>();
      else os << "-";
    }
    os << " |\n";
  }
  if (!r.at("rank_table").is_null()) {
    os << "\nSpearman correlation with the F1 ranking:\n";
    for (const json& c : r.at("rank_table").at("columns")) {
      os << "- " << c.at("metric").get<std::string>() << ": " << c.at("spearman").get<double>() << "\n";
    }
  }
  for (const json& n : r.at("notes")) os << "\nnote: " << n.get<std::string>() << "\n";
  write_text(eval_dir / "summary.md", os.str());
  return os.str();
}

}  // namespace alab
