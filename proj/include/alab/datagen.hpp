#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "alab/netforge.hpp"
#include "alab/tensor.hpp"

namespace alab {

enum class PatchShape { BezierBlob, Triangle, Square, Circle };

std::string patch_shape_name(PatchShape s);
PatchShape patch_shape_from_name(const std::string& name);

struct PatchSpec {
  PatchShape shape = PatchShape::Circle;
  double center_y = 0.0;
  double center_x = 0.0;
  double radius = 0.0;
  double rotation = 0.0;            // radians; triangle and blob
  std::vector<double> blob_radii;   // control-point radii; blob only
  int color_index = 0;              // target index; 0 for the single-color setting
  std::size_t pixels = 0;           // colored pixels after thinning

  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

struct LabSample {
  EnvironmentKind environment = EnvironmentKind::SingleColor;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  Tensor image;      // C x H x W, integers 0..255
  int label = 0;
  Tensor gt_signed;  // H x W in {-1, 0, +1}
  std::vector<PatchSpec> patches;

  std::size_t height() const { return image.dim(1); }
  std::size_t width() const { return image.dim(2); }

  friend bool operator==(const LabSample&, const LabSample&) = default;
};

struct DataConfig {
  std::size_t count = 50;
  std::uint64_t seed = 7;
  std::size_t patches = 4;           // single-color; multi-color uses one per target
  double min_radius_fraction = 0.1;  // of min(H, W)
  double max_radius_fraction = 0.2;
  std::size_t min_patch_pixels = 10;
  bool reject_zero_label = true;     // single-color only
  std::size_t max_attempts = 1000;

  void validate() const;
};

LabSample gen_single_color_sample(const SingleColorConfig& cfg, const DataConfig& data, std::size_t index);
LabSample gen_multi_color_sample(const MultiColorConfig& cfg, const DataConfig& data, std::size_t index);

std::vector<LabSample> gen_single_color(const SingleColorConfig& cfg, const DataConfig& data);
std::vector<LabSample> gen_multi_color(const MultiColorConfig& cfg, const DataConfig& data);

/// Rasterized footprint (before thinning) of a patch: H x W of {0, 1}.
Tensor patch_footprint(const PatchSpec& spec, std::size_t height, std::size_t width);

enum class GtKind { Overall, Positive, Negative, SmoothedPositive };

struct GtVariant {
  GtKind kind = GtKind::Overall;
  std::size_t radius = 0;  // SmoothedPositive only

  static GtVariant overall() { return {GtKind::Overall, 0}; }
  static GtVariant positive() { return {GtKind::Positive, 0}; }
  static GtVariant negative() { return {GtKind::Negative, 0}; }
  static GtVariant smoothed_positive(std::size_t r) { return {GtKind::SmoothedPositive, r}; }
};

std::string gt_variant_name(const GtVariant& v);
GtVariant gt_variant_from_name(const std::string& name);

Tensor gt_mask(const LabSample& sample, const GtVariant& variant);

/// Writes images/, gt/, meta/ and dataset.json. `config_echo` is stored
/// verbatim in dataset.json.
void export_dataset(const std::vector<LabSample>& samples, const std::filesystem::path& dir,
                    const std::string& config_echo_json);
std::vector<LabSample> import_dataset(const std::filesystem::path& dir);

/// Label recomputed from the ground truth alone.
int label_from_gt(const LabSample& sample, int modulus);

}  // namespace alab
