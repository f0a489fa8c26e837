#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alab/datagen.hpp"
#include "alab/netforge.hpp"
#include "alab/netgraph.hpp"
#include "alab/tensor.hpp"
#include "json.hpp"

namespace alab {

/// Marks a map that explains a network with a single scalar output.
inline constexpr int kScalarTarget = -1;

/// Which network output a method explains. Auto picks the post-softmax
/// probability when the network ends in a softmax and the raw output
/// otherwise. Logit drops any trailing softmax.
enum class OutputMode { Auto, Logit, Probability };

std::string output_mode_name(OutputMode m);
OutputMode output_mode_from_name(const std::string& name);

struct BaselineSpec {
  enum class Mode { Color, Scalar };
  enum class Provenance { TrueBaseline, DefaultZero, Custom };

  Mode mode = Mode::Color;
  Rgb color{0, 0, 0};
  double scalar = 0.0;
  Provenance provenance = Provenance::DefaultZero;

  static BaselineSpec zero() { return {}; }
  static BaselineSpec true_color(Rgb c) { return {Mode::Color, c, 0.0, Provenance::TrueBaseline}; }
  static BaselineSpec custom_color(Rgb c) { return {Mode::Color, c, 0.0, Provenance::Custom}; }
  static BaselineSpec custom_scalar(double v) { return {Mode::Scalar, {0, 0, 0}, v, Provenance::Custom}; }

  void validate() const;
  /// Per-channel fill value. Color mode on a one-channel image uses the red
  /// component.
  double channel_value(std::size_t channel) const;
  /// Constant image of the given C x H x W shape.
  Tensor image(const Shape& shape) const;

  nlohmann::json to_json() const;
  static BaselineSpec from_json(const nlohmann::json& j);
};

struct AttributionMap {
  Tensor values;  // H x W
  std::string method;
  std::string fingerprint;
  int target = kScalarTarget;
  nlohmann::json params;  // every hyper-parameter, as hashed into the fingerprint
};

struct Segmentation {
  Tensor labels;  // H x W, ids 0..count-1
  std::size_t count = 0;
  std::string algorithm;
  nlohmann::json params;
};

/// Index of the output explained by default: the label for classifiers,
/// kScalarTarget for single-output networks.
int default_target(const NetGraph& net, const LabSample& sample);

// Gradient family -----------------------------------------------------------

struct SaliencyConfig {
  OutputMode output = OutputMode::Auto;
};

struct GuidedConfig {
  OutputMode output = OutputMode::Auto;
};

enum class IgIntegration { Exact, Midpoint };

struct IgConfig {
  BaselineSpec baseline;
  /// Exact walks the linear pieces of the path one by one; Midpoint is the
  /// Riemann midpoint rule with `steps` evaluations.
  IgIntegration integration = IgIntegration::Exact;
  std::size_t steps = 64;
  OutputMode output = OutputMode::Auto;
  std::size_t max_segments = 2'000'000;
  /// Exact mode: push a pointwise input block through once per distinct
  /// (pixel, baseline pixel) pair. Same result, far fewer operations.
  bool compress_pixels = true;
};

struct DeepLiftConfig {
  BaselineSpec baseline;
  OutputMode output = OutputMode::Auto;
};

struct LrpConfig {
  double epsilon = 1e-9;
};

struct GradCamConfig {
  std::string tap;  // empty: default tap for the environment
  OutputMode output = OutputMode::Logit;
};

AttributionMap saliency(const NetGraph& net, const LabSample& sample, int target, const SaliencyConfig& cfg = {});
AttributionMap guided_backprop(const NetGraph& net, const LabSample& sample, int target,
                               const GuidedConfig& cfg = {});
AttributionMap integrated_gradients(const NetGraph& net, const LabSample& sample, int target,
                                    const IgConfig& cfg = {});
AttributionMap deeplift_rescale(const NetGraph& net, const LabSample& sample, int target,
                                const DeepLiftConfig& cfg = {});
AttributionMap lrp_epsilon(const NetGraph& net, const LabSample& sample, int target, const LrpConfig& cfg = {});
AttributionMap gradcam(const NetGraph& net, const LabSample& sample, int target, const GradCamConfig& cfg = {});

/// Per-feature IG attributions (input shape, before channel reduction),
/// also used for completeness checks.
Tensor integrated_gradients_raw(const NetGraph& net, const Tensor& x, const Tensor& baseline, int target,
                                const IgConfig& cfg, std::size_t* segments = nullptr);

std::string default_gradcam_tap(EnvironmentKind env);

/// Bilinear resize of an h x w map to H x W, half-pixel centers.
Tensor bilinear_upsample(const Tensor& map, std::size_t height, std::size_t width);

// Perturbation family -------------------------------------------------------

struct OcclusionConfig {
  std::size_t window_c = 3, window_h = 5, window_w = 5;
  std::size_t stride_c = 3, stride_h = 3, stride_w = 3;
  BaselineSpec baseline;
  OutputMode output = OutputMode::Logit;
};

enum class SegmentationKind { Grid, Felzenszwalb };

struct SegmentationConfig {
  SegmentationKind kind = SegmentationKind::Grid;
  std::size_t cell = 8;
  double scale = 100.0;
  double sigma = 0.5;
  std::size_t min_size = 20;

  nlohmann::json to_json() const;
  static SegmentationConfig from_json(const nlohmann::json& j);
};

struct LimeConfig {
  SegmentationConfig segmentation;
  std::size_t samples = 1000;
  double kernel_width = 0.25;
  double ridge = 1e-3;
  std::uint64_t seed = 0;
  BaselineSpec baseline;
  OutputMode output = OutputMode::Auto;
};

struct ExPerturbConfig {
  double area = 0.1;
  double blur_sigma = 0.0;  // 0: scaled from 21 px at 224 px
  std::size_t steps = 400;
  double step_size = 1.0;
  double penalty = 1.0;
  double init_logit = 7.0;
  std::size_t mask_stride = 4;  // mask parameters live on a grid this much coarser
  OutputMode output = OutputMode::Logit;
};

AttributionMap occlusion(const NetGraph& net, const LabSample& sample, int target, const OcclusionConfig& cfg);
AttributionMap lime(const NetGraph& net, const LabSample& sample, int target, const LimeConfig& cfg = {});
AttributionMap extremal_perturbation(const NetGraph& net, const LabSample& sample, int target,
                                     const ExPerturbConfig& cfg = {});

Segmentation segment_grid(const LabSample& sample, std::size_t cell);
Segmentation segment_felzenszwalb(const LabSample& sample, double scale, double sigma, std::size_t min_size);
Segmentation segment(const LabSample& sample, const SegmentationConfig& cfg);

/// Kernel-weighted ridge regression with intercept. Rows of `z` are samples.
/// Returns the coefficients followed by the intercept.
std::vector<double> weighted_ridge(const std::vector<std::vector<double>>& z, const std::vector<double>& y,
                                   const std::vector<double>& weights, double lambda);

/// Separable Gaussian blur per channel with clamped borders.
Tensor gaussian_blur(const Tensor& image, double sigma);

/// Occlusion window defaults for an environment.
OcclusionConfig default_occlusion(EnvironmentKind env);

// Controls ------------------------------------------------------------------

AttributionMap control_random(const LabSample& sample, std::uint64_t seed);
AttributionMap control_constant(const LabSample& sample, double value);

// Registry ------------------------------------------------------------------

/// A method by name with JSON hyper-parameters, as used in run configs.
struct MethodSpec {
  std::string id;
  std::string label;  // display name; defaults to id
  nlohmann::json params = nlohmann::json::object();

  std::string display() const { return label.empty() ? id : label; }
};

const std::vector<std::string>& known_methods();
/// Checks the id and parses the parameters without running anything.
void validate_method(const MethodSpec& spec);
AttributionMap run_method(const MethodSpec& spec, const NetGraph& net, const LabSample& sample,
                          std::optional<int> target = std::nullopt);

/// FNV-1a of the canonical JSON text.
std::string fingerprint_of(const nlohmann::json& j);

/// Raw little-endian doubles in <stem>.bin plus a <stem>.json sidecar.
void save_map(const AttributionMap& map, const std::filesystem::path& dir, const std::string& stem,
              bool render_png = false);
AttributionMap load_map(const std::filesystem::path& dir, const std::string& stem);

/// Diverging rendering: -1 maps to blue, 0 to white, +1 to red, after
/// dividing by the largest magnitude.
void render_map_png(const Tensor& values, const std::filesystem::path& path);

}  // namespace alab
