#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "alab/attribution.hpp"
#include "alab/datagen.hpp"
#include "alab/evalmetrics.hpp"
#include "alab/netforge.hpp"
#include "json.hpp"

namespace alab {

inline constexpr const char* kToolVersion = "attrlab 0.1.0";

std::string environment_name(EnvironmentKind e);
EnvironmentKind environment_from_name(const std::string& name);

/// Metric names accepted in a run config: "gt", "insertion", "deletion",
/// "sensitivity-n". Single-color runs evaluate the adapted variants.
const std::vector<std::string>& known_metrics();

struct MetricSettings {
  std::vector<std::string> metrics{"gt", "insertion", "deletion", "sensitivity-n"};
  double step_fraction = 0.02;
  BaselineSpec replacement;            // (0, 0, 0)
  std::size_t repeats = 100;           // sensitivity-n
  std::vector<std::size_t> n_grid;     // empty: powers of two, then all pixels
  std::uint64_t seed = 0;
  std::size_t smoothing_radius = 1;    // SmoothedPositive ground truth

  bool wants(const std::string& metric) const;
};

struct RunConfig {
  EnvironmentKind environment = EnvironmentKind::MultiColor;
  SingleColorConfig single;
  MultiColorConfig multi;
  DataConfig data;
  std::vector<MethodSpec> methods;     // empty: default_methods(environment)
  MetricSettings metrics;
  double gamma = 0.5;
  std::string output = "run";
  std::size_t verify_samples = 100;

  /// Rejects unknown fields, naming the offending path ("multi_color.rho").
  static RunConfig from_json(const nlohmann::json& j);
  /// Complete, canonical form; feeds every fingerprint.
  nlohmann::json to_json() const;
  void validate() const;

  std::size_t height() const;
  std::size_t width() const;
  std::vector<MethodSpec> resolved_methods() const;

  nlohmann::json net_json() const;
  nlohmann::json data_json() const;
  std::string net_fingerprint() const;
  std::string data_fingerprint() const;
};

RunConfig load_run_config(const std::filesystem::path& path);

/// Method set evaluated when a config lists none. "ig-true" integrates from
/// `background`, the color the multi-color net ignores.
std::vector<MethodSpec> default_methods(EnvironmentKind env, Rgb background = {20, 20, 20});

/// Worker count from LAB_THREADS, else the hardware concurrency.
std::size_t lab_threads();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Exceptions stay
/// with their cell: the returned vector holds one message per failed index
/// (empty string for success).
std::vector<std::string> parallel_cells(std::size_t n, std::size_t threads,
                                        const std::function<void(std::size_t)>& fn);

/// fingerprint.json helpers. Every stage writes one next to its outputs.
void write_fingerprint(const std::filesystem::path& dir, const nlohmann::json& fields);
nlohmann::json read_fingerprint(const std::filesystem::path& dir);

// Stages ---------------------------------------------------------------------

struct StageLog {
  std::ostream* out = nullptr;
  void line(const std::string& s) const;
};

/// Generates the dataset, writes it and a fingerprint. Returns the samples.
std::vector<LabSample> stage_gen_data(const RunConfig& cfg, const std::filesystem::path& out, const StageLog& log);

/// Builds the designed net, verifies it and saves the bundle. Throws a
/// Verification error when the oracle check fails.
VerificationReport stage_build_net(const RunConfig& cfg, const std::filesystem::path& out, const StageLog& log);

struct AttributeSummary {
  std::size_t written = 0;
  std::size_t skipped = 0;
  std::vector<std::string> failures;  // "<label> sample <i>: <message>"
};

/// One map per (method, sample) under out/<label>/. Cells whose inputs and
/// method spec are unchanged since the last run are skipped.
AttributeSummary stage_attribute(const RunConfig& cfg, const std::filesystem::path& net_dir,
                                 const std::filesystem::path& data_dir, const std::filesystem::path& out,
                                 std::size_t threads, const StageLog& log);

/// One metric of one method: a mean over samples, or the reason it is
/// missing.
struct MetricCell {
  std::optional<double> value;       // mean AUC, or mean correlation for sensitivity-n
  std::vector<double> per_sample;
  CurveResult mean_curve;
  std::string skipped;
};

struct MethodSummary {
  std::string label;
  std::string id;
  std::size_t samples = 0;                          // maps found and scored
  std::vector<std::string> skipped;                 // reasons, per missing map
  std::vector<ScoreTriple> mean_scores;             // per variant
  std::vector<std::vector<ScoreTriple>> per_sample; // [variant][sample]
  FaithfulnessVerdict verdict;                      // mean F1 of the reference variant
  double pass_rate = 0.0;                           // samples with F1 >= gamma
  std::map<std::string, MetricCell> metrics;        // "insertion", "deletion", "sensitivity-n"
};

struct EvalReport {
  std::string environment;
  std::string tool_version = kToolVersion;
  nlohmann::json fingerprints;
  double gamma = 0.5;
  std::vector<GtVariant> variants;
  GtVariant reference;
  std::vector<MethodSummary> methods;
  std::optional<RankTable> ranks;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
  /// One row per method.
  std::string to_csv() const;
};

/// Scores stored maps. Refuses maps, data and bundle whose fingerprints do
/// not agree. Writes report.json, report.csv, rank_table.csv, curves/*.csv
/// and plots/*.svg under `out`.
EvalReport stage_evaluate(const RunConfig& cfg, const std::filesystem::path& maps_dir,
                          const std::filesystem::path& data_dir, const std::filesystem::path& net_dir,
                          const std::filesystem::path& out, std::size_t threads, const StageLog& log);

/// Plain-text summary of a report.json, also written as summary.md.
std::string stage_report(const std::filesystem::path& eval_dir);

// Plots ----------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x, y;
};

/// Line chart with axes, ticks and a legend, fixed 640 x 400 viewBox.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

/// Mirrored kernel-density outlines per group with min, mean and max bars.
std::string svg_violin(const std::string& title, const std::string& y_label,
                       const std::vector<std::pair<std::string, std::vector<double>>>& groups);

}  // namespace alab
