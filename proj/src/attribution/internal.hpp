#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "alab/attribution.hpp"

namespace alab::detail {

/// The graph a method differentiates: Logit strips a trailing softmax.
NetGraph explained_net(const NetGraph& net, OutputMode mode);

/// Output position explained for `target`; validates against the arity.
std::size_t output_index(const NetGraph& net, int target);

Tensor one_hot(const NetGraph& net, int target);

/// C x H x W to H x W by summing channels, optionally of absolute values.
Tensor reduce_channels(const Tensor& attr, bool absolute);

/// Bilinear (half-pixel) interpolation weights of an h x w grid onto
/// H x W: four (source index, weight) pairs per output pixel.
using BilinearTaps = std::vector<std::array<std::pair<std::size_t, double>, 4>>;
BilinearTaps bilinear_taps(std::size_t h, std::size_t w, std::size_t height, std::size_t width);

/// Wraps values into a map, fingerprinting `params` and checking finiteness.
AttributionMap make_map(Tensor values, const std::string& method, int target, nlohmann::json params);

}  // namespace alab::detail
