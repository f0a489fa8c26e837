#include "alab/bundle.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "alab/error.hpp"

namespace alab {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

void put_le(std::vector<unsigned char>& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

Tensor read_block(const std::vector<unsigned char>& blob, std::size_t offset, const Shape& shape,
                  const std::string& where) {
  const std::size_t n = shape_size(shape);
  if (offset % 8 != 0 || offset + 8 * n > blob.size()) fail(ErrorKind::Io, where + ": offset outside weights.bin");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = get_le(blob.data() + offset + 8 * i);
  return Tensor(shape, std::move(v));
}

}  // namespace

void save_bundle(const NetGraph& net, const std::filesystem::path& dir, const std::string& config_json) {
  std::filesystem::create_directories(dir);
  std::vector<unsigned char> blob;
  json layers = json::array();
  for (std::size_t k = 0; k < net.size(); ++k) {
    const Layer& l = net.layer(k);
    json e{{"kind", std::string(layer_kind_name(l.kind))}};
    if (l.has_parameters()) {
      e["weight_shape"] = l.weight.shape();
      e["weight_offset"] = blob.size();
      for (double v : l.weight.data()) put_le(blob, v);
      e["bias_shape"] = l.bias.shape();
      e["bias_offset"] = blob.size();
      for (double v : l.bias.data()) put_le(blob, v);
      if (l.kind == LayerKind::Conv2d) e["stride"] = {l.conv.stride_h, l.conv.stride_w};
    }
    if (l.kind == LayerKind::Add) e["source"] = l.add_source;
    layers.push_back(std::move(e));
  }
  json taps = json::object();
  for (const auto& [name, idx] : net.taps()) taps[name] = idx;
  json manifest{{"format_version", kFormatVersion},
                {"input_shape", net.input_shape()},
                {"output_shape", net.output_shape()},
                {"layers", std::move(layers)},
                {"taps", std::move(taps)},
                {"weights_bytes", blob.size()},
                {"config", config_json.empty() ? json::object() : json::parse(config_json)}};
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) fail(ErrorKind::Io, (dir / "weights.bin").string() + ": write failed");
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) fail(ErrorKind::Io, (dir / "manifest.json").string() + ": write failed");
}

LoadedBundle load_bundle(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  const auto wpath = dir / "weights.bin";
  std::ifstream min(mpath);
  if (!min) fail(ErrorKind::Io, mpath.string() + ": cannot open");
  json m;
  try {
    m = json::parse(min);
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, mpath.string() + ": " + e.what());
  }
  std::ifstream win(wpath, std::ios::binary);
  if (!win) fail(ErrorKind::Io, wpath.string() + ": cannot open");
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(win)), std::istreambuf_iterator<char>());

  try {
    if (m.at("format_version").get<int>() != kFormatVersion) {
      fail(ErrorKind::Io, mpath.string() + ": unsupported format_version");
    }
    if (m.at("weights_bytes").get<std::size_t>() != blob.size()) {
      fail(ErrorKind::Io, wpath.string() + ": size differs from manifest weights_bytes");
    }
    NetGraph net(m.at("input_shape").get<Shape>());
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // offset, bytes
    const auto& layers = m.at("layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& e = layers[k];
      const std::string where = mpath.string() + ": layer " + std::to_string(k);
      const LayerKind kind = layer_kind_from_name(e.at("kind").get<std::string>());
      switch (kind) {
        case LayerKind::Conv2d:
        case LayerKind::Linear: {
          const Shape ws = e.at("weight_shape").get<Shape>(), bs = e.at("bias_shape").get<Shape>();
          const std::size_t wo = e.at("weight_offset").get<std::size_t>(), bo = e.at("bias_offset").get<std::size_t>();
          Tensor w = read_block(blob, wo, ws, where);
          Tensor b = read_block(blob, bo, bs, where);
          spans.emplace_back(wo, 8 * w.size());
          spans.emplace_back(bo, 8 * b.size());
          if (kind == LayerKind::Conv2d) {
            const auto st = e.at("stride").get<std::vector<std::size_t>>();
            if (st.size() != 2) fail(ErrorKind::Io, where + ": stride must have two entries");
            net.add(Layer::conv2d(std::move(w), std::move(b), st[0], st[1]));
          } else {
            net.add(Layer::linear(std::move(w), std::move(b)));
          }
          break;
        }
        case LayerKind::ReLU: net.add(Layer::relu()); break;
        case LayerKind::Softmax: net.add(Layer::softmax()); break;
        case LayerKind::Flatten: net.add(Layer::flatten()); break;
        case LayerKind::Add: net.add(Layer::add(e.at("source").get<std::ptrdiff_t>())); break;
      }
    }
    std::sort(spans.begin(), spans.end());
    std::size_t cursor = 0;
    for (const auto& [off, bytes] : spans) {
      if (off != cursor) fail(ErrorKind::Io, mpath.string() + ": offsets leave a gap or overlap at byte " + std::to_string(cursor));
      cursor += bytes;
    }
    if (cursor != blob.size()) fail(ErrorKind::Io, mpath.string() + ": offsets do not cover weights.bin");
    for (const auto& [name, idx] : m.at("taps").items()) net.add_tap(name, idx.get<std::size_t>());
    if (m.contains("output_shape") && m.at("output_shape").get<Shape>() != net.output_shape()) {
      fail(ErrorKind::Io, mpath.string() + ": output_shape disagrees with the layer table");
    }
    return {std::move(net), m.at("config").dump()};
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, mpath.string() + ": " + e.what());
  } catch (const LabError& e) {
    if (e.kind() == ErrorKind::Io) throw;
    fail(ErrorKind::Io, mpath.string() + ": " + e.what());
  }
}

}  // namespace alab
