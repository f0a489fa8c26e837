#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alab/attribution.hpp"
#include "alab/datagen.hpp"
#include "alab/netgraph.hpp"
#include "alab/tensor.hpp"
#include "json.hpp"

namespace alab {

/// Positive values divided by the largest positive value, negative values by
/// the magnitude of the most negative one. All-zero maps pass through.
Tensor normalize_attribution(const Tensor& map);

// Ground-truth scores ---------------------------------------------------------

struct ScoreTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  GtVariant variant;
  std::string method;
  /// Negative variant on a map without negative values: scored 0 by rule.
  bool incapable = false;

  nlohmann::json to_json() const;
};

double f1_of(double precision, double recall);

/// Soft precision sum|a g| / sum|a| and recall sum|a g| / sum|g| of the
/// normalized map. Positive and SmoothedPositive variants keep only the
/// positive attributions, Negative only the negative ones (as magnitudes);
/// Overall uses |a|. An empty denominator gives 0.
ScoreTriple score(const Tensor& map, const LabSample& sample, const GtVariant& variant,
                  const std::string& method = "");
ScoreTriple score(const AttributionMap& map, const LabSample& sample, const GtVariant& variant);

struct FaithfulnessVerdict {
  double gamma = 0.5;
  double f1 = 0.0;
  bool pass = false;

  nlohmann::json to_json() const;
};

/// Passes when f1 >= gamma.
FaithfulnessVerdict faithfulness_test(const ScoreTriple& triple, double gamma = 0.5);
FaithfulnessVerdict faithfulness_test(double f1, double gamma = 0.5);

// Curves ----------------------------------------------------------------------

struct CurveResult {
  std::vector<double> x;
  std::vector<double> y;
  double auc = 0.0;
  /// Sensitivity-N points whose correlation was undefined (recorded as 0).
  std::vector<bool> degenerate;

  /// Mean of y over points that are not degenerate; 0 when none remain.
  double mean_y() const;
  nlohmann::json to_json() const;
  /// "x,y" header followed by one row per point.
  std::string to_csv() const;
};

double trapezoid_auc(const std::vector<double>& x, const std::vector<double>& y);

/// Pixel indices (row-major over H x W) by descending attribution. Ties keep
/// row-major order, or follow a seeded shuffle when `tie_seed` is given.
std::vector<std::size_t> attribution_order(const Tensor& map, std::optional<std::uint64_t> tie_seed = std::nullopt);

enum class CurveMode { Insertion, Deletion };

std::string curve_mode_name(CurveMode m);

struct CurveConfig {
  BaselineSpec replacement;          // (0, 0, 0) by default
  double step_fraction = 0.02;
  OutputMode output = OutputMode::Auto;
  std::optional<std::uint64_t> tie_seed;
  std::optional<int> target;         // defaults to default_target()
};

/// Deletion replaces pixels of the image in attribution order; Insertion
/// copies them onto a replacement-filled canvas. y is the explained output
/// at each perturbed fraction.
CurveResult insertion_deletion(const NetGraph& net, const LabSample& sample, const Tensor& map, CurveMode mode,
                               const CurveConfig& cfg = {});

/// One pixel per step with zero replacement. A step is correct when the
/// network output differs from the previous step's by more than
/// `tolerance`. Insertion plots cumulative correct steps over the number of
/// ground-truth pixels; Deletion plots one minus that. Stops once every
/// ground-truth pixel has been matched and closes the curve at x = 1.
CurveResult adapted_insertion_deletion(const NetGraph& net, const LabSample& sample, const Tensor& map,
                                       CurveMode mode, double tolerance = 1e-6);

/// Adapted curve of the ordering that puts every ground-truth pixel first.
CurveResult adapted_oracle_curve(const NetGraph& net, const LabSample& sample, CurveMode mode,
                                 double tolerance = 1e-6);

// Sensitivity-N -----------------------------------------------------------------

enum class SensitivityMode { Standard, Adapted };

std::string sensitivity_mode_name(SensitivityMode m);

struct SensitivityConfig {
  SensitivityMode mode = SensitivityMode::Standard;
  std::size_t repeats = 100;
  std::vector<std::size_t> n_grid;   // empty: default_n_grid()
  BaselineSpec replacement;          // Standard only
  OutputMode output = OutputMode::Auto;
  std::uint64_t seed = 0;
  std::optional<int> target;
  double tolerance = 1e-6;           // Adapted only

  void validate() const;
};

/// 1, 2, 4, ... below the pixel count, then the pixel count itself.
std::vector<std::size_t> default_n_grid(std::size_t pixels);

/// Random pixel draws and the network's responses for one sample. The draws
/// depend only on the sample and seed, so one probe serves every method.
///
/// Each repeat draws a random pixel order; the N-pixel set is its first N
/// entries. Standard mode records y(x) - y(x with the set replaced).
/// Adapted mode removes the pixels one at a time (zero replacement) and
/// records how many steps so far changed the output.
struct SensitivityProbe {
  SensitivityConfig config;
  std::vector<std::size_t> n_grid;
  std::vector<std::vector<std::uint32_t>> orders;  // per repeat
  std::vector<std::vector<double>> response;       // [grid point][repeat]
};

SensitivityProbe sensitivity_probe(const NetGraph& net, const LabSample& sample, const SensitivityConfig& cfg);

/// Pearson correlation, per N, between the probe's responses and the summed
/// attribution of the perturbed pixels.
CurveResult sensitivity_n(const SensitivityProbe& probe, const Tensor& map);

// Correlation and ranking -------------------------------------------------------

/// Pearson correlation. Sets *degenerate and returns 0 when either vector is
/// constant.
double pearson(const std::vector<double>& a, const std::vector<double>& b, bool* degenerate = nullptr);

/// Ranks 1..n (1 = largest when `descending`), ties sharing their average.
std::vector<double> average_ranks(const std::vector<double>& values, bool descending = true);

/// Pearson correlation of the average ranks.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct RankColumn {
  std::string metric;
  bool higher_is_better = true;
  std::vector<double> scores;  // per method
  std::vector<double> ranks;   // 1 = best
  double spearman = 1.0;       // against the reference column
};

struct RankTable {
  std::vector<std::string> methods;
  RankColumn reference;
  std::vector<RankColumn> columns;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

RankColumn rank_column(std::string metric, std::vector<double> scores, bool higher_is_better = true);

/// Ranks every column and correlates it with the reference. Needs at least
/// three methods.
RankTable build_rank_table(std::vector<std::string> methods, RankColumn reference, std::vector<RankColumn> columns);

}  // namespace alab
