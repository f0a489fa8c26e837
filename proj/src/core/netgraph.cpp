#include "alab/netgraph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <unordered_map>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "alab/error.hpp"
#include "alab/kernels.hpp"

namespace alab {

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv2d: return "Conv2d";
    case LayerKind::Linear: return "Linear";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Softmax: return "Softmax";
    case LayerKind::Add: return "Add";
    case LayerKind::Flatten: return "Flatten";
  }
  return "?";
}

LayerKind layer_kind_from_name(std::string_view name) {
  for (auto kind : {LayerKind::Conv2d, LayerKind::Linear, LayerKind::ReLU, LayerKind::Softmax,
                    LayerKind::Add, LayerKind::Flatten}) {
    if (layer_kind_name(kind) == name) return kind;
  }
  fail(ErrorKind::InvalidInput, "unknown layer kind '" + std::string(name) + "'");
}

std::string_view backward_rule_name(BackwardRule rule) {
  switch (rule) {
    case BackwardRule::GuidedReLU: return "guided-relu";
    case BackwardRule::DeepLIFTRescale: return "deeplift-rescale";
    case BackwardRule::LRPEpsilon: return "lrp-epsilon";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Layer factories

Layer Layer::conv2d(Tensor weight, Tensor bias, std::size_t stride_h, std::size_t stride_w) {
  if (weight.rank() != 4) fail(ErrorKind::InvalidInput, "Conv2d weight must be outC x inC x kH x kW");
  Layer l;
  l.kind = LayerKind::Conv2d;
  l.conv = {weight.dim(1), weight.dim(0), weight.dim(2), weight.dim(3), stride_h, stride_w};
  if (bias.empty()) bias = Tensor({l.conv.out_channels});
  if (bias.shape() != Shape{l.conv.out_channels}) fail(ErrorKind::InvalidInput, "Conv2d bias length must equal outC");
  if (stride_h == 0 || stride_w == 0) fail(ErrorKind::InvalidInput, "Conv2d stride must be positive");
  l.weight = std::move(weight);
  l.bias = std::move(bias);
  return l;
}

Layer Layer::linear(Tensor weight, Tensor bias) {
  if (weight.rank() != 2) fail(ErrorKind::InvalidInput, "Linear weight must be out x in");
  if (bias.empty()) bias = Tensor({weight.dim(0)});
  if (bias.shape() != Shape{weight.dim(0)}) fail(ErrorKind::InvalidInput, "Linear bias length must equal out");
  Layer l;
  l.kind = LayerKind::Linear;
  l.weight = std::move(weight);
  l.bias = std::move(bias);
  return l;
}

Layer Layer::relu() { return Layer{}; }

Layer Layer::softmax() {
  Layer l;
  l.kind = LayerKind::Softmax;
  return l;
}

Layer Layer::flatten() {
  Layer l;
  l.kind = LayerKind::Flatten;
  return l;
}

Layer Layer::add(std::ptrdiff_t source) {
  Layer l;
  l.kind = LayerKind::Add;
  l.add_source = source;
  return l;
}

// ---------------------------------------------------------------------------
// NetGraph

namespace {

SparseIndex build_sparse(const Layer& l) {
  SparseIndex sp;
  if (l.kind == LayerKind::Linear) {
    const std::size_t rows = l.weight.dim(0), cols = l.weight.dim(1);
    sp.row_start.reserve(rows + 1);
    sp.row_start.push_back(0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double w = l.weight[r * cols + c];
        if (w != 0.0) {
          sp.col.push_back(static_cast<std::uint32_t>(c));
          sp.val.push_back(w);
        }
      }
      sp.row_start.push_back(static_cast<std::uint32_t>(sp.col.size()));
    }
    sp.dense_rows = sp.col.size() * 2 > rows * cols;
  } else if (l.kind == LayerKind::Conv2d) {
    const auto& g = l.conv;
    for (std::size_t oc = 0; oc < g.out_channels; ++oc)
      for (std::size_t ic = 0; ic < g.in_channels; ++ic)
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
            const double w = l.weight[((oc * g.in_channels + ic) * g.kernel_h + ky) * g.kernel_w + kx];
            if (w != 0.0) {
              sp.taps.push_back({static_cast<std::uint32_t>(oc), static_cast<std::uint32_t>(ic),
                                 static_cast<std::uint32_t>(ky), static_cast<std::uint32_t>(kx), w});
            }
          }
  }
  return sp;
}

}  // namespace

NetGraph::NetGraph(Shape input_shape) : input_shape_(std::move(input_shape)) {
  if (input_shape_.empty()) fail(ErrorKind::InvalidInput, "network input shape must be non-empty");
  for (auto e : input_shape_) {
    if (e == 0) fail(ErrorKind::InvalidInput, "network input extents must be positive");
  }
}

const Shape& NetGraph::output_shape() const { return shapes_.empty() ? input_shape_ : shapes_.back(); }

std::size_t NetGraph::add(Layer layer, std::optional<std::string> tap) {
  const Shape in = output_shape();
  const std::size_t index = layers_.size();
  const std::string where = "layer " + std::to_string(index) + " (" + std::string(layer_kind_name(layer.kind)) + ")";
  Shape out;
  switch (layer.kind) {
    case LayerKind::Conv2d: {
      const auto& g = layer.conv;
      if (in.size() != 3 || in[0] != g.in_channels) {
        fail(ErrorKind::InvalidInput, where + ": expects " + std::to_string(g.in_channels) +
                                          " x H x W input, got " + shape_string(in));
      }
      if (in[1] < g.kernel_h || in[2] < g.kernel_w) {
        fail(ErrorKind::InvalidInput, where + ": kernel larger than input " + shape_string(in));
      }
      out = {g.out_channels, (in[1] - g.kernel_h) / g.stride_h + 1, (in[2] - g.kernel_w) / g.stride_w + 1};
      break;
    }
    case LayerKind::Linear:
      if (in.size() != 1 || in[0] != layer.weight.dim(1)) {
        fail(ErrorKind::InvalidInput, where + ": expects vector of " + std::to_string(layer.weight.dim(1)) +
                                          ", got " + shape_string(in));
      }
      out = {layer.weight.dim(0)};
      break;
    case LayerKind::ReLU:
      out = in;
      break;
    case LayerKind::Softmax:
      if (in.size() != 1) fail(ErrorKind::InvalidInput, where + ": softmax needs a vector input");
      out = in;
      break;
    case LayerKind::Flatten:
      out = {shape_size(in)};
      break;
    case LayerKind::Add: {
      const auto src = layer.add_source;
      if (src != kNetworkInput && (src < 0 || static_cast<std::size_t>(src) >= index)) {
        fail(ErrorKind::InvalidInput, where + ": add source must be an earlier layer");
      }
      const Shape& other = src == kNetworkInput ? input_shape_ : shapes_[static_cast<std::size_t>(src)];
      if (other != in) fail(ErrorKind::InvalidInput, where + ": add operands differ in shape");
      out = in;
      break;
    }
  }
  if (layer.has_parameters() && !(layer.weight.all_finite() && layer.bias.all_finite())) {
    fail(ErrorKind::InvalidInput, where + ": non-finite parameters");
  }
  sparse_.push_back(build_sparse(layer));
  layers_.push_back(std::move(layer));
  shapes_.push_back(std::move(out));
  if (tap) add_tap(std::move(*tap), index);
  return index;
}

void NetGraph::append(const NetGraph& fragment, std::string_view prefix) {
  if (fragment.input_shape() != output_shape()) {
    fail(ErrorKind::InvalidInput, "cannot append '" + std::string(prefix) + "': expects " +
                                      shape_string(fragment.input_shape()) + ", graph produces " +
                                      shape_string(output_shape()));
  }
  const std::size_t offset = layers_.size();
  const std::string p(prefix);
  for (std::size_t k = 0; k < fragment.size(); ++k) {
    Layer l = fragment.layer(k);
    if (l.kind == LayerKind::Add) {
      l.add_source = l.add_source == kNetworkInput ? static_cast<std::ptrdiff_t>(offset) - 1
                                                   : l.add_source + static_cast<std::ptrdiff_t>(offset);
    }
    add(std::move(l), p + ".layers." + std::to_string(k));
  }
  for (const auto& [name, idx] : fragment.taps()) {
    if (name.rfind("layers.", 0) == 0) continue;
    add_tap(p + "." + name, idx + offset);
  }
}

void NetGraph::add_tap(std::string name, std::size_t layer_index) {
  if (layer_index >= layers_.size()) fail(ErrorKind::InvalidInput, "tap '" + name + "' references a missing layer");
  taps_[std::move(name)] = layer_index;
}

bool NetGraph::has_tap(std::string_view name) const { return taps_.find(std::string(name)) != taps_.end(); }

std::size_t NetGraph::tap(std::string_view name) const {
  auto it = taps_.find(std::string(name));
  if (it == taps_.end()) {
    std::string known;
    for (const auto& [n, _] : taps_) known += (known.empty() ? "" : ", ") + n;
    fail(ErrorKind::InvalidInput, "unknown tap '" + std::string(name) + "'; available: " + known);
  }
  return it->second;
}

std::size_t NetGraph::weighted_layer_count() const {
  return static_cast<std::size_t>(std::count_if(layers_.begin(), layers_.end(), [](const Layer& l) { return l.has_parameters(); }));
}

std::size_t NetGraph::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.parameter_count();
  return n;
}

NetGraph NetGraph::prefix(std::size_t n) const {
  if (n > layers_.size()) fail(ErrorKind::InvalidInput, "prefix longer than graph");
  NetGraph out(input_shape_);
  for (std::size_t k = 0; k < n; ++k) out.add(layers_[k]);
  for (const auto& [name, idx] : taps_) {
    if (idx < n) out.add_tap(name, idx);
  }
  return out;
}

NetGraph NetGraph::suffix(std::size_t from) const {
  if (from > layers_.size()) fail(ErrorKind::InvalidInput, "suffix start beyond graph");
  NetGraph out(from == 0 ? input_shape_ : shapes_[from - 1]);
  for (std::size_t k = from; k < layers_.size(); ++k) {
    Layer l = layers_[k];
    if (l.kind == LayerKind::Add) {
      const auto shift = static_cast<std::ptrdiff_t>(from);
      if (from > 0 && l.add_source < shift - 1) fail(ErrorKind::InvalidInput, "suffix cuts an Add connection");
      l.add_source = l.add_source == kNetworkInput ? kNetworkInput : l.add_source - shift;
      if (l.add_source < 0) l.add_source = kNetworkInput;
    }
    out.add(std::move(l));
  }
  for (const auto& [name, idx] : taps_) {
    if (idx >= from) out.add_tap(name, idx - from);
  }
  return out;
}

namespace {

bool is_pointwise(const Layer& l) {
  switch (l.kind) {
    case LayerKind::ReLU:
    case LayerKind::Add:
      return true;
    case LayerKind::Conv2d:
      return l.conv.kernel_h == 1 && l.conv.kernel_w == 1 && l.conv.stride_h == 1 && l.conv.stride_w == 1;
    default:
      return false;
  }
}

}  // namespace

std::size_t NetGraph::pointwise_prefix() const {
  if (input_shape_.size() != 3) return 0;
  std::size_t n = 0;
  while (n < layers_.size() && is_pointwise(layers_[n])) ++n;
  // Values before the cut must stay private to the prefix.
  for (std::size_t k = n; k < layers_.size(); ++k) {
    if (layers_[k].kind == LayerKind::Add) {
      const auto read = static_cast<std::size_t>(layers_[k].add_source + 1);
      if (read < n) n = read;
    }
  }
  return n;
}

NetGraph NetGraph::pointwise_strip(std::size_t n, std::size_t pixels) const {
  if (n > pointwise_prefix()) fail(ErrorKind::InvalidInput, "pointwise_strip: layers are not all pointwise");
  NetGraph out({input_shape_.at(0), 1, pixels});
  for (std::size_t k = 0; k < n; ++k) out.add(layers_[k]);
  return out;
}

bool NetGraph::ends_with_softmax() const { return !layers_.empty() && layers_.back().kind == LayerKind::Softmax; }

NetGraph NetGraph::without_softmax() const {
  std::size_t n = layers_.size();
  while (n > 0 && layers_[n - 1].kind == LayerKind::Softmax) --n;
  return prefix(n);
}

// ---------------------------------------------------------------------------
// Linear maps shared by every pass

namespace {

// y = W x (+ bias when with_bias)
void conv_apply(const Layer& l, const SparseIndex& sp, const Tensor& x, Tensor& y, bool with_bias) {
  const auto& kt = kernels::active();
  const auto& g = l.conv;
  const std::size_t H = x.dim(1), W = x.dim(2);
  const std::size_t OH = y.dim(1), OW = y.dim(2);
  const std::size_t plane = OH * OW;
  if (with_bias) {
    for (std::size_t oc = 0; oc < g.out_channels; ++oc) std::fill_n(y.raw() + oc * plane, plane, l.bias[oc]);
  } else {
    y.fill(0.0);
  }
  const bool pointwise = g.kernel_h == 1 && g.kernel_w == 1 && g.stride_h == 1 && g.stride_w == 1;
  for (const auto& t : sp.taps) {
    double* out = y.raw() + t.out_c * plane;
    const double* src = x.raw() + t.in_c * H * W + t.ky * W + t.kx;
    if (pointwise) {
      kt.axpy(t.w, src, out, plane);
    } else {
      for (std::size_t oy = 0; oy < OH; ++oy) {
        kt.axpy_gather(t.w, src + oy * g.stride_h * W, g.stride_w, out + oy * OW, OW);
      }
    }
  }
}

// gx = W^T gy
void conv_transpose(const Layer& l, const SparseIndex& sp, const Tensor& gy, Tensor& gx) {
  const auto& kt = kernels::active();
  const auto& g = l.conv;
  const std::size_t H = gx.dim(1), W = gx.dim(2);
  const std::size_t OH = gy.dim(1), OW = gy.dim(2);
  const std::size_t plane = OH * OW;
  gx.fill(0.0);
  const bool pointwise = g.kernel_h == 1 && g.kernel_w == 1 && g.stride_h == 1 && g.stride_w == 1;
  for (const auto& t : sp.taps) {
    const double* src = gy.raw() + t.out_c * plane;
    double* dst = gx.raw() + t.in_c * H * W + t.ky * W + t.kx;
    if (pointwise) {
      kt.axpy(t.w, src, dst, plane);
    } else {
      for (std::size_t oy = 0; oy < OH; ++oy) {
        kt.axpy_scatter(t.w, src + oy * OW, dst + oy * g.stride_h * W, g.stride_w, OW);
      }
    }
  }
}

void linear_apply(const Layer& l, const SparseIndex& sp, const Tensor& x, Tensor& y, bool with_bias) {
  const auto& kt = kernels::active();
  const std::size_t rows = l.weight.dim(0), cols = l.weight.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc;
    if (sp.dense_rows) {
      acc = kt.dot(l.weight.raw() + r * cols, x.raw(), cols);
    } else {
      const std::size_t b = sp.row_start[r], e = sp.row_start[r + 1];
      acc = kt.sparse_dot(sp.val.data() + b, sp.col.data() + b, x.raw(), e - b);
    }
    y[r] = with_bias ? acc + l.bias[r] : acc;
  }
}

void linear_transpose(const Layer& l, const SparseIndex& sp, const Tensor& gy, Tensor& gx) {
  const auto& kt = kernels::active();
  const std::size_t rows = l.weight.dim(0), cols = l.weight.dim(1);
  gx.fill(0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = gy[r];
    if (g == 0.0) continue;
    if (sp.dense_rows) {
      kt.axpy(g, l.weight.raw() + r * cols, gx.raw(), cols);
    } else {
      for (std::size_t k = sp.row_start[r]; k < sp.row_start[r + 1]; ++k) gx[sp.col[k]] += sp.val[k] * g;
    }
  }
}

// Applies the weight part of a parametric layer (no bias).
Tensor weight_apply(const NetGraph& net, std::size_t k, const Tensor& x) {
  Tensor y(net.layer_output_shape(k));
  const auto& l = net.layer(k);
  if (l.kind == LayerKind::Conv2d) conv_apply(l, net.sparse(k), x, y, false);
  else linear_apply(l, net.sparse(k), x, y, false);
  return y;
}

Tensor weight_transpose(const NetGraph& net, std::size_t k, const Tensor& gy, const Shape& in_shape) {
  Tensor gx(in_shape);
  const auto& l = net.layer(k);
  if (l.kind == LayerKind::Conv2d) conv_transpose(l, net.sparse(k), gy, gx);
  else linear_transpose(l, net.sparse(k), gy, gx);
  return gx;
}

const Shape& input_shape_of(const NetGraph& net, std::size_t k) {
  return k == 0 ? net.input_shape() : net.layer_output_shape(k - 1);
}

const Tensor& add_operand_of(const NetGraph& net, std::size_t k, const ActivationTrace& trace) {
  const auto src = net.layer(k).add_source;
  return src == kNetworkInput ? trace.values.front() : trace.output(static_cast<std::size_t>(src));
}

std::size_t add_operand_value_index(const NetGraph& net, std::size_t k) {
  const auto src = net.layer(k).add_source;
  return src == kNetworkInput ? 0 : static_cast<std::size_t>(src) + 1;
}

void check_trace(const NetGraph& net, const ActivationTrace& trace, const char* who) {
  if (trace.size() != net.size()) {
    fail(ErrorKind::InvalidInput, std::string(who) + ": trace has " + std::to_string(trace.size()) +
                                      " layers, network has " + std::to_string(net.size()));
  }
  if (trace.values.front().shape() != net.input_shape()) {
    fail(ErrorKind::InvalidInput, std::string(who) + ": trace was recorded for a different input shape");
  }
}

void accumulate(Tensor& slot, const Tensor& value) {
  if (slot.empty()) slot = value;
  else slot += value;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward

Tensor softmax(const Tensor& logits) {
  Tensor y = logits;
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : y.data()) mx = std::max(mx, v);
  double total = 0.0;
  for (double& v : y.data()) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : y.data()) v /= total;
  return y;
}

Tensor softmax_vjp(const Tensor& y, const Tensor& g) {
  // y_i * sum_j y_j (g_i - g_j): no cancellation when one y_j is near 1.
  Tensor out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (j != i) acc += y[j] * (g[i] - g[j]);
    }
    out[i] = y[i] * acc;
  }
  return out;
}

Tensor apply_layer(const NetGraph& net, std::size_t k, const Tensor& input, const Tensor* add_operand) {
  const Layer& l = net.layer(k);
  switch (l.kind) {
    case LayerKind::Conv2d: {
      Tensor y(net.layer_output_shape(k));
      conv_apply(l, net.sparse(k), input, y, true);
      return y;
    }
    case LayerKind::Linear: {
      Tensor y(net.layer_output_shape(k));
      linear_apply(l, net.sparse(k), input, y, true);
      return y;
    }
    case LayerKind::ReLU: {
      Tensor y = input;
      for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case LayerKind::Softmax:
      return softmax(input);
    case LayerKind::Flatten:
      return input.reshaped(net.layer_output_shape(k));
    case LayerKind::Add: {
      if (!add_operand) fail(ErrorKind::InvalidInput, "Add layer needs its second operand");
      return input + *add_operand;
    }
  }
  return input;
}

ForwardResult forward(const NetGraph& net, const Tensor& x) {
  if (x.shape() != net.input_shape()) {
    fail(ErrorKind::InvalidInput, "input shape " + shape_string(x.shape()) + " does not match network input " +
                                      shape_string(net.input_shape()));
  }
  ForwardResult r;
  r.trace.values.reserve(net.size() + 1);
  r.trace.values.push_back(x);
  for (std::size_t k = 0; k < net.size(); ++k) {
    const Tensor* operand = net.layer(k).kind == LayerKind::Add ? &add_operand_of(net, k, r.trace) : nullptr;
    r.trace.values.push_back(apply_layer(net, k, r.trace.values.back(), operand));
  }
  r.output = r.trace.values.back();
  return r;
}

PixelClasses pixel_classes(const Tensor& x, const Tensor* key) {
  if (x.rank() != 3) fail(ErrorKind::InvalidInput, "pixel_classes expects C x H x W");
  if (key && key->shape() != x.shape()) fail(ErrorKind::InvalidInput, "pixel_classes: key shape differs");
  const std::size_t C = x.dim(0), plane = x.dim(1) * x.dim(2);
  auto same = [&](std::size_t p, std::size_t q) {
    for (std::size_t c = 0; c < C; ++c) {
      if (std::memcmp(x.raw() + c * plane + p, x.raw() + c * plane + q, sizeof(double)) != 0) return false;
      if (key && std::memcmp(key->raw() + c * plane + p, key->raw() + c * plane + q, sizeof(double)) != 0) {
        return false;
      }
    }
    return true;
  };
  auto mix = [](std::uint64_t h, double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, sizeof b);
    return (h ^ b) * 0x100000001b3ULL + (h >> 29);
  };
  PixelClasses pc;
  pc.class_of.resize(plane);
  std::unordered_multimap<std::uint64_t, std::uint32_t> seen;
  seen.reserve(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t c = 0; c < C; ++c) {
      h = mix(h, x[c * plane + p]);
      if (key) h = mix(h, (*key)[c * plane + p]);
    }
    std::uint32_t cls = 0;
    bool found = false;
    for (auto [it, end] = seen.equal_range(h); it != end; ++it) {
      if (same(pc.first[it->second], p)) {
        cls = it->second;
        found = true;
        break;
      }
    }
    if (!found) {
      cls = static_cast<std::uint32_t>(pc.first.size());
      pc.first.push_back(static_cast<std::uint32_t>(p));
      seen.emplace(h, cls);
    }
    pc.class_of[p] = cls;
  }
  return pc;
}

Tensor gather_strip(const Tensor& x, const PixelClasses& pc) {
  const std::size_t C = x.dim(0), plane = x.dim(1) * x.dim(2), K = pc.count();
  Tensor s({C, 1, K});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k = 0; k < K; ++k) s[c * K + k] = x[c * plane + pc.first[k]];
  }
  return s;
}

Tensor scatter_strip(const Tensor& strip, const PixelClasses& pc, std::size_t height, std::size_t width) {
  const std::size_t C = strip.dim(0), K = strip.dim(2), plane = height * width;
  if (pc.class_of.size() != plane || pc.count() != K) fail(ErrorKind::InvalidInput, "scatter_strip: size mismatch");
  Tensor out({C, height, width});
  for (std::size_t c = 0; c < C; ++c) {
    const double* src = strip.raw() + c * K;
    double* dst = out.raw() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = src[pc.class_of[p]];
  }
  return out;
}

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

Tensor evaluate(const NetGraph& net, const Tensor& x) {
  if (x.shape() != net.input_shape()) {
    fail(ErrorKind::InvalidInput, "input shape " + shape_string(x.shape()) + " does not match network input " +
                                      shape_string(net.input_shape()));
  }
  // A pointwise prefix only needs one evaluation per distinct pixel.
  const std::size_t lead = net.pointwise_prefix();
  if (lead > 0) {
    const PixelClasses pc = pixel_classes(x);
    const std::size_t H = x.dim(1), W = x.dim(2);
    if (4 * pc.count() <= H * W) {
      const Tensor head = evaluate(net.pointwise_strip(lead, pc.count()), gather_strip(x, pc));
      const Tensor mid = scatter_strip(head, pc, H, W);
      if (lead == net.size()) return mid;
      return evaluate(net.suffix(lead), mid);
    }
  }
  // Keep only values that a later Add layer reads.
  std::vector<bool> needed(net.size() + 1, false);
  for (std::size_t k = 0; k < net.size(); ++k) {
    if (net.layer(k).kind == LayerKind::Add) needed[add_operand_value_index(net, k)] = true;
  }
  std::vector<Tensor> kept(net.size() + 1);
  if (needed[0]) kept[0] = x;
  Tensor cur = x;
  for (std::size_t k = 0; k < net.size(); ++k) {
    const Tensor* operand = nullptr;
    if (net.layer(k).kind == LayerKind::Add) operand = &kept[add_operand_value_index(net, k)];
    cur = apply_layer(net, k, cur, operand);
    if (needed[k + 1]) kept[k + 1] = cur;
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Incremental forward

namespace {

/// Half-open row and column range of changed values in a rank-3 tensor.
struct DirtyBox {
  std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  bool any() const { return y1 > y0 && x1 > x0; }
  DirtyBox merged(const DirtyBox& o) const {
    if (!any()) return o;
    if (!o.any()) return *this;
    return {std::min(y0, o.y0), std::max(y1, o.y1), std::min(x0, o.x0), std::max(x1, o.x1)};
  }
};

// Output positions whose window [o * stride, o * stride + k) meets [lo, hi).
std::pair<std::size_t, std::size_t> conv_reach(std::size_t lo, std::size_t hi, std::size_t k, std::size_t stride,
                                               std::size_t out) {
  const std::size_t first = lo + 1 < k ? 0 : (lo + 1 - k + stride - 1) / stride;
  const std::size_t last = std::min(out, (hi - 1) / stride + 1);
  return {std::min(first, last), last};
}

void conv_region(const Layer& l, const SparseIndex& sp, const Tensor& x, Tensor& y, const DirtyBox& b) {
  const auto& kt = kernels::active();
  const auto& g = l.conv;
  const std::size_t H = x.dim(1), W = x.dim(2), OW = y.dim(2), plane = y.dim(1) * OW;
  const std::size_t n = b.x1 - b.x0;
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    for (std::size_t oy = b.y0; oy < b.y1; ++oy) std::fill_n(y.raw() + oc * plane + oy * OW + b.x0, n, l.bias[oc]);
  }
  for (const auto& t : sp.taps) {
    for (std::size_t oy = b.y0; oy < b.y1; ++oy) {
      const double* src = x.raw() + t.in_c * H * W + (oy * g.stride_h + t.ky) * W + b.x0 * g.stride_w + t.kx;
      kt.axpy_gather(t.w, src, g.stride_w, y.raw() + t.out_c * plane + oy * OW + b.x0, n);
    }
  }
}

}  // namespace

IncrementalForward::IncrementalForward(const NetGraph& net, const Tensor& x)
    : net_(&net), trace_(forward(net, x).trace) {}

void IncrementalForward::assign(const std::vector<std::size_t>& pixels, const Tensor& source) {
  const NetGraph& net = *net_;
  Tensor& in = trace_.values.front();
  if (source.shape() != in.shape()) fail(ErrorKind::InvalidInput, "IncrementalForward: source shape mismatch");
  if (pixels.empty()) return;
  const std::size_t C = in.dim(0), H = in.dim(1), W = in.dim(2), plane = H * W;

  std::vector<DirtyBox> dirty(net.size() + 1);
  DirtyBox& first = dirty[0];
  first = {H, 0, W, 0};
  for (std::size_t p : pixels) {
    if (p >= plane) fail(ErrorKind::InvalidInput, "IncrementalForward: pixel index out of range");
    bool changed = false;
    for (std::size_t c = 0; c < C; ++c) {
      changed |= in[c * plane + p] != source[c * plane + p];
      in[c * plane + p] = source[c * plane + p];
    }
    if (!changed) continue;
    first = {std::min(first.y0, p / W), std::max(first.y1, p / W + 1), std::min(first.x0, p % W),
             std::max(first.x1, p % W + 1)};
  }
  if (!first.any()) return;

  for (std::size_t k = 0; k < net.size(); ++k) {
    const Layer& l = net.layer(k);
    DirtyBox box = dirty[k];
    if (l.kind == LayerKind::Add) box = box.merged(dirty[add_operand_value_index(net, k)]);
    if (!box.any()) continue;
    const Tensor& x = trace_.values[k];
    Tensor& y = trace_.values[k + 1];
    if (y.rank() != 3 || x.rank() != 3) {
      const Tensor* operand = l.kind == LayerKind::Add ? &add_operand_of(net, k, trace_) : nullptr;
      y = apply_layer(net, k, x, operand);
      dirty[k + 1] = {0, 1, 0, 1};
      continue;
    }
    const std::size_t OH = y.dim(1), OW = y.dim(2), OC = y.dim(0);
    if (l.kind == LayerKind::Conv2d) {
      const auto [r0, r1] = conv_reach(box.y0, box.y1, l.conv.kernel_h, l.conv.stride_h, OH);
      const auto [c0, c1] = conv_reach(box.x0, box.x1, l.conv.kernel_w, l.conv.stride_w, OW);
      dirty[k + 1] = {r0, r1, c0, c1};
      if (dirty[k + 1].any()) conv_region(l, net.sparse(k), x, y, dirty[k + 1]);
      continue;
    }
    // Elementwise: ReLU and Add keep the spatial layout.
    const Tensor* operand = l.kind == LayerKind::Add ? &add_operand_of(net, k, trace_) : nullptr;
    for (std::size_t c = 0; c < OC; ++c) {
      for (std::size_t r = box.y0; r < box.y1; ++r) {
        for (std::size_t q = box.x0; q < box.x1; ++q) {
          const std::size_t i = (c * OH + r) * OW + q;
          y[i] = operand ? x[i] + (*operand)[i] : (x[i] > 0.0 ? x[i] : 0.0);
        }
      }
    }
    dirty[k + 1] = box;
  }
}

// ---------------------------------------------------------------------------
// Backward passes

namespace {

enum class Mode { Gradient, Guided, DeepLift, Lrp };

struct BackwardContext {
  const NetGraph& net;
  const ActivationTrace& trace;
  const ActivationTrace* reference;
  double epsilon;
  Mode mode;
};

double stabilise(double z, double eps) { return z + (z >= 0.0 ? eps : -eps); }

// Propagates `g_out` (gradient, multiplier or relevance at the output of
// layer k) to the layer input; for Add layers also to the second operand.
std::pair<Tensor, Tensor> step_back(const BackwardContext& c, std::size_t k, const Tensor& g_out) {
  const Layer& l = c.net.layer(k);
  const Tensor& x = c.trace.input(k);
  const Shape& in_shape = input_shape_of(c.net, k);
  switch (l.kind) {
    case LayerKind::Conv2d:
    case LayerKind::Linear: {
      if (c.mode != Mode::Lrp) return {weight_transpose(c.net, k, g_out, in_shape), {}};
      // epsilon rule: R_i = x_i * sum_j w_ij R_j / (z_j + eps sign z_j)
      const Tensor& z = c.trace.output(k);
      Tensor s = g_out;
      for (std::size_t j = 0; j < s.size(); ++j) s[j] = g_out[j] / stabilise(z[j], c.epsilon);
      Tensor r = weight_transpose(c.net, k, s, in_shape);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] *= x[i];
      return {std::move(r), {}};
    }
    case LayerKind::ReLU: {
      Tensor g = g_out;
      switch (c.mode) {
        case Mode::Gradient:
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = x[i] > 0.0 ? g[i] : 0.0;
          break;
        case Mode::Guided:
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = (x[i] > 0.0 && g[i] > 0.0) ? g[i] : 0.0;
          break;
        case Mode::DeepLift: {
          const Tensor& xr = c.reference->input(k);
          const Tensor& y = c.trace.output(k);
          const Tensor& yr = c.reference->output(k);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double dx = x[i] - xr[i];
            const double m = std::abs(dx) > 1e-12 ? (y[i] - yr[i]) / dx : (x[i] > 0.0 ? 1.0 : 0.0);
            g[i] *= m;
          }
          break;
        }
        case Mode::Lrp:
          break;  // relevance passes through unchanged
      }
      return {std::move(g), {}};
    }
    case LayerKind::Softmax: {
      if (c.mode == Mode::Lrp) return {g_out, {}};
      if (c.mode == Mode::DeepLift) {
        return {integrated_softmax_vjp(c.reference->input(k), x, g_out), {}};
      }
      return {softmax_vjp(c.trace.output(k), g_out), {}};
    }
    case LayerKind::Flatten:
      return {g_out.reshaped(in_shape), {}};
    case LayerKind::Add: {
      if (c.mode != Mode::Lrp) return {g_out, g_out};
      const Tensor& b = add_operand_of(c.net, k, c.trace);
      const Tensor& z = c.trace.output(k);
      Tensor ra = g_out, rb = g_out;
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = stabilise(z[i], c.epsilon);
        ra[i] = x[i] / d * g_out[i];
        rb[i] = b[i] / d * g_out[i];
      }
      return {std::move(ra), std::move(rb)};
    }
  }
  return {g_out, {}};
}

// Runs value-index `top` down to value-index `stop`, seeding `top`.
Tensor run_backward(const BackwardContext& c, std::size_t top, const Tensor& seed, std::size_t stop) {
  std::vector<Tensor> pending(c.net.size() + 1);
  pending[top] = seed;
  for (std::size_t v = top; v > stop; --v) {
    const std::size_t k = v - 1;
    if (pending[v].empty()) pending[v] = Tensor(c.net.layer_output_shape(k));
    auto [g_in, g_other] = step_back(c, k, pending[v]);
    pending[v].data();  // released below
    pending[v] = Tensor();
    accumulate(pending[k], g_in);
    if (!g_other.empty()) {
      const std::size_t src = add_operand_value_index(c.net, k);
      if (src >= stop) accumulate(pending[src], g_other);
    }
  }
  if (pending[stop].empty()) {
    pending[stop] = Tensor(stop == 0 ? c.net.input_shape() : c.net.layer_output_shape(stop - 1));
  }
  return std::move(pending[stop]);
}

void check_seed(const NetGraph& net, const Tensor& seed, const char* who) {
  if (seed.shape() != net.output_shape()) {
    fail(ErrorKind::InvalidInput, std::string(who) + ": seed shape " + shape_string(seed.shape()) +
                                      " differs from output shape " + shape_string(net.output_shape()));
  }
}

}  // namespace

Tensor backward(const NetGraph& net, const ActivationTrace& trace, const Tensor& seed) {
  check_trace(net, trace, "backward");
  check_seed(net, seed, "backward");
  BackwardContext c{net, trace, nullptr, 0.0, Mode::Gradient};
  return run_backward(c, net.size(), seed, 0);
}

Tensor backward_to_layer(const NetGraph& net, const ActivationTrace& trace, const Tensor& seed,
                         std::size_t layer_index) {
  check_trace(net, trace, "backward");
  check_seed(net, seed, "backward");
  if (layer_index >= net.size()) fail(ErrorKind::InvalidInput, "backward_to_layer: layer index out of range");
  BackwardContext c{net, trace, nullptr, 0.0, Mode::Gradient};
  return run_backward(c, net.size(), seed, layer_index + 1);
}

Tensor modified_backward(const NetGraph& net, const ActivationTrace& trace, const Tensor& seed, BackwardRule rule,
                         const ActivationTrace* reference, double epsilon) {
  check_trace(net, trace, "modified_backward");
  check_seed(net, seed, "modified_backward");
  switch (rule) {
    case BackwardRule::GuidedReLU: {
      BackwardContext c{net, trace, nullptr, 0.0, Mode::Guided};
      return run_backward(c, net.size(), seed, 0);
    }
    case BackwardRule::DeepLIFTRescale: {
      if (!reference) fail(ErrorKind::InvalidInput, "DeepLIFT rescale needs a reference trace");
      check_trace(net, *reference, "modified_backward(reference)");
      BackwardContext c{net, trace, reference, 0.0, Mode::DeepLift};
      Tensor m = run_backward(c, net.size(), seed, 0);
      const Tensor& x = trace.values.front();
      const Tensor& xr = reference->values.front();
      for (std::size_t i = 0; i < m.size(); ++i) m[i] *= x[i] - xr[i];
      return m;
    }
    case BackwardRule::LRPEpsilon: {
      if (!(epsilon > 0.0)) fail(ErrorKind::InvalidInput, "LRP epsilon must be positive");
      std::size_t top = net.size();
      while (top > 0 && net.layer(top - 1).kind == LayerKind::Softmax) --top;
      Tensor relevance = hadamard(seed, trace.values[top]);
      BackwardContext c{net, trace, nullptr, epsilon, Mode::Lrp};
      return run_backward(c, top, relevance, 0);
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Softmax path integral

Tensor integrated_softmax_vjp(const Tensor& z0, const Tensor& z1, const Tensor& seed) {
  if (z0.shape() != z1.shape() || z0.shape() != seed.shape() || z0.rank() != 1) {
    fail(ErrorKind::InvalidInput, "integrated_softmax_vjp: operands must be equal-length vectors");
  }
  static constexpr std::array<double, 8> nodes{-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                               -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                               0.7966664774136267,  0.9602898564975363};
  static constexpr std::array<double, 8> weights{0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                                 0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                                 0.2223810344533745, 0.1012285362903763};
  double span = 0.0;
  for (std::size_t i = 0; i < z0.size(); ++i) span = std::max(span, std::abs(z1[i] - z0[i]));
  // Pieces short enough that the softmax is smooth on each one.
  const std::size_t pieces = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(span / 0.25)));
  Tensor acc(z0.shape());
  Tensor z(z0.shape());
  for (std::size_t p = 0; p < pieces; ++p) {
    const double a = static_cast<double>(p) / static_cast<double>(pieces);
    const double b = static_cast<double>(p + 1) / static_cast<double>(pieces);
    for (std::size_t q = 0; q < nodes.size(); ++q) {
      const double s = 0.5 * (a + b) + 0.5 * (b - a) * nodes[q];
      const double w = 0.5 * (b - a) * weights[q];
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = z0[i] + s * (z1[i] - z0[i]);
      const Tensor v = softmax_vjp(softmax(z), seed);
      for (std::size_t i = 0; i < z.size(); ++i) acc[i] += w * v[i];
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Tangent pass

TangentResult forward_tangent(const NetGraph& net, const Tensor& x, const Tensor& direction) {
  if (x.shape() != net.input_shape() || direction.shape() != net.input_shape()) {
    fail(ErrorKind::InvalidInput, "forward_tangent: input and direction must match the network input");
  }
  // Look-ahead used to decide ReLU states exactly at a breakpoint.
  constexpr double kAhead = 1e-9;
  TangentResult r;
  std::vector<Tensor> values{x}, tangents{direction};
  for (std::size_t k = 0; k < net.size(); ++k) {
    const Layer& l = net.layer(k);
    const Tensor& v = values.back();
    const Tensor& t = tangents.back();
    Tensor nv, nt;
    switch (l.kind) {
      case LayerKind::Conv2d:
      case LayerKind::Linear:
        nv = apply_layer(net, k, v);
        nt = weight_apply(net, k, t);
        break;
      case LayerKind::ReLU:
        nv = v;
        nt = t;
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double z = v[i], dz = t[i];
          if (dz != 0.0) {
            const double cross = -z / dz;
            if (cross > kAhead) r.next_breakpoint = std::min(r.next_breakpoint, cross);
          }
          const bool on = z + kAhead * dz > 0.0;
          nv[i] = z > 0.0 ? z : 0.0;
          nt[i] = on ? dz : 0.0;
        }
        break;
      case LayerKind::Softmax:
        fail(ErrorKind::InvalidInput, "forward_tangent: network must be piecewise linear (strip the softmax)");
      case LayerKind::Flatten:
        nv = v.reshaped(net.layer_output_shape(k));
        nt = t.reshaped(net.layer_output_shape(k));
        break;
      case LayerKind::Add: {
        const std::size_t src = add_operand_value_index(net, k);
        nv = v + values[src];
        nt = t + tangents[src];
        break;
      }
    }
    values.push_back(std::move(nv));
    tangents.push_back(std::move(nt));
  }
  r.output = values.back();
  r.output_tangent = tangents.back();
  return r;
}

}  // namespace alab
