#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "alab/netgraph.hpp"

namespace alab {

enum class AccumulatorMode { Uniform, NonUniform };

std::string accumulator_mode_name(AccumulatorMode mode);
AccumulatorMode accumulator_mode_from_name(const std::string& name);

struct Rgb {
  int r = 0, g = 0, b = 0;
  friend auto operator<=>(const Rgb&, const Rgb&) = default;
};

std::string rgb_string(const Rgb& c);

struct SingleColorConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  int modulus = 30;
  std::size_t capacity = 0;  // 0 means height * width
  AccumulatorMode accumulator = AccumulatorMode::NonUniform;
  std::uint64_t seed = 1;

  std::size_t effective_capacity() const { return capacity == 0 ? height * width : capacity; }
  void validate() const;
};

struct MultiColorConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<Rgb> targets{{255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}};
  Rgb background{20, 20, 20};
  std::size_t redundant = 4;
  double rho = 1.0;
  AccumulatorMode accumulator = AccumulatorMode::NonUniform;
  std::uint64_t seed = 1;

  std::size_t classes() const { return targets.size(); }
  void validate() const;
};

/// I_{>i}: 1 for integer x > i, else 0. Input and output are 1-vectors.
NetGraph build_gt_gate(int i);

/// I_N: 1 for integer x == N, else 0.
NetGraph build_eq_gate(int n);

/// x mod N for integer x in [0, U], as seven Linear+ReLU layers.
NetGraph build_modulo_head(int n, std::size_t u);

/// Kernel sizes (stride == kernel) that tile `extent` exactly, largest
/// factor <= 7 first. Throws a Config error for extents with a prime
/// factor above 7.
std::vector<std::size_t> accumulator_schedule(std::size_t extent);

/// Sums each of `channels` H x W planes to a C x 1 x 1 output, channels
/// kept separate. NonUniform stages pair a random k x k conv (k*k + 1
/// kernels, weights in [0.5, 1.5]) with a 1x1 mixing conv solved so the
/// block still sums. Taps: "sum" at the last layer.
NetGraph build_accumulator(AccumulatorMode mode, std::size_t channels, std::size_t height,
                           std::size_t width, std::uint64_t seed);

/// 3 x H x W RGB to (N_C + N_R) x H x W indicator planes.
NetGraph build_color_detector(const MultiColorConfig& cfg, std::size_t height, std::size_t width);

/// Redundant-to-target mixing weights (N_C x N_R) before scaling by rho.
/// Drawn from U[-1, 1] and redrawn until some target has a positive total
/// drive, so out-of-distribution pixels always reach a logit.
std::vector<double> redundant_weights(const MultiColorConfig& cfg);

/// Count of white pixels mod N. Tap "accumulator.sum" holds the raw count.
NetGraph build_single_color_net(const SingleColorConfig& cfg);

/// Per-color pixel counts as logits, then softmax. Taps: "logits" and
/// "accumulator.*".
NetGraph build_multi_color_net(const MultiColorConfig& cfg);

enum class EnvironmentKind { SingleColor, MultiColor };

struct VerificationReport {
  bool passed = true;
  std::size_t samples_checked = 0;
  std::size_t samples_agreeing = 0;
  std::size_t exhaustive_checked = 0;
  std::size_t flips_checked = 0;
  double max_flip_error = 0.0;     // max |delta - 1|
  double flip_delta_spread = 0.0;  // max delta - min delta
  std::size_t layers = 0;
  std::size_t weighted_layers = 0;
  std::size_t parameters = 0;
  std::vector<std::string> failures;
  std::vector<std::string> notes;
};

VerificationReport verify_single_color(const NetGraph& net, const SingleColorConfig& cfg,
                                       std::size_t sample_budget, std::uint64_t data_seed);
VerificationReport verify_multi_color(const NetGraph& net, const MultiColorConfig& cfg,
                                      std::size_t sample_budget, std::uint64_t data_seed);

}  // namespace alab
