#pragma once

#include <filesystem>
#include <string>

#include "alab/netgraph.hpp"

namespace alab {

struct LoadedBundle {
  NetGraph net;
  std::string config_json;  // config echo stored at save time
};

/// manifest.json (layer table, taps, offsets, config echo) plus weights.bin
/// (little-endian doubles, row-major, weight then bias per layer).
void save_bundle(const NetGraph& net, const std::filesystem::path& dir, const std::string& config_json);

/// Validates the manifest and that offsets partition weights.bin exactly.
LoadedBundle load_bundle(const std::filesystem::path& dir);

}  // namespace alab
