#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "alab/tensor.hpp"

namespace alab {

enum class LayerKind { Conv2d, Linear, ReLU, Softmax, Add, Flatten };

std::string_view layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(std::string_view name);

struct ConvGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
};

/// Add layers sum their input with the output of an earlier layer, or with
/// the network input when the source is kNetworkInput.
inline constexpr std::ptrdiff_t kNetworkInput = -1;

struct Layer {
  LayerKind kind = LayerKind::ReLU;
  Tensor weight;  // Conv2d: outC x inC x kH x kW, Linear: out x in
  Tensor bias;    // Conv2d: outC, Linear: out
  ConvGeometry conv;
  std::ptrdiff_t add_source = kNetworkInput;

  static Layer conv2d(Tensor weight, Tensor bias, std::size_t stride_h, std::size_t stride_w);
  static Layer linear(Tensor weight, Tensor bias);
  static Layer relu();
  static Layer softmax();
  static Layer flatten();
  static Layer add(std::ptrdiff_t source);

  bool has_parameters() const { return kind == LayerKind::Conv2d || kind == LayerKind::Linear; }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

/// Nonzero structure of a parametric layer, built once when the layer is
/// added to a graph. Designed networks are very sparse (gates touch one or
/// two inputs), so both passes iterate only the nonzero weights.
struct SparseIndex {
  // Linear: CSR over output rows.
  std::vector<std::uint32_t> row_start;
  std::vector<std::uint32_t> col;
  std::vector<double> val;
  bool dense_rows = false;

  // Conv2d: nonzero taps grouped by (out channel, in channel).
  struct ConvTap {
    std::uint32_t out_c, in_c, ky, kx;
    double w;
  };
  std::vector<ConvTap> taps;
};

/// Feed-forward graph with explicitly set weights. Immutable once built and
/// safe to share across threads.
class NetGraph {
 public:
  NetGraph() = default;
  explicit NetGraph(Shape input_shape);

  /// Appends a layer after checking it composes with the current output
  /// shape. Returns the new layer's index.
  std::size_t add(Layer layer, std::optional<std::string> tap = std::nullopt);

  /// Appends every layer of `fragment`. Its layers become reachable as taps
  /// "<prefix>.layers.<k>" and its own taps as "<prefix>.<tap>".
  void append(const NetGraph& fragment, std::string_view prefix);

  void add_tap(std::string name, std::size_t layer_index);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape() const;
  const Shape& layer_output_shape(std::size_t k) const { return shapes_.at(k); }
  std::size_t size() const noexcept { return layers_.size(); }
  const Layer& layer(std::size_t k) const { return layers_.at(k); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const SparseIndex& sparse(std::size_t k) const { return sparse_.at(k); }

  const std::map<std::string, std::size_t>& taps() const noexcept { return taps_; }
  bool has_tap(std::string_view name) const;
  /// Layer index of a tap; rejects unknown names with the list of known ones.
  std::size_t tap(std::string_view name) const;

  /// Number of layers that carry weights (Conv2d and Linear).
  std::size_t weighted_layer_count() const;
  std::size_t parameter_count() const;

  /// First `n` layers as a standalone graph; taps beyond the cut are dropped.
  NetGraph prefix(std::size_t n) const;

  /// Layers [from, size()) as a standalone graph fed with the output of
  /// layer from - 1. Add layers may not reach across the cut.
  NetGraph suffix(std::size_t from) const;

  /// Number of leading layers that treat every pixel independently (1x1
  /// stride-1 convolutions, ReLU, Add) and whose values no later Add reads.
  std::size_t pointwise_prefix() const;

  /// The first `n` layers, which must be pointwise, rebuilt to act on a
  /// C x 1 x pixels strip of gathered input pixels.
  NetGraph pointwise_strip(std::size_t n, std::size_t pixels) const;

  /// The graph without any trailing Softmax layers.
  NetGraph without_softmax() const;
  bool ends_with_softmax() const;

 private:
  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::vector<SparseIndex> sparse_;
  std::map<std::string, std::size_t> taps_;
};

/// Per-layer values recorded by a forward pass: value(0) is the network
/// input and value(k + 1) the output of layer k.
struct ActivationTrace {
  std::vector<Tensor> values;

  std::size_t size() const noexcept { return values.empty() ? 0 : values.size() - 1; }
  const Tensor& input(std::size_t k) const { return values.at(k); }
  const Tensor& output(std::size_t k) const { return values.at(k + 1); }
};

struct ForwardResult {
  Tensor output;
  ActivationTrace trace;
};

ForwardResult forward(const NetGraph& net, const Tensor& x);

/// Output only; intermediate values are released as soon as possible.
Tensor evaluate(const NetGraph& net, const Tensor& x);

/// One forward pass whose activations are kept so that edits to a few input
/// pixels recompute only the affected window of each spatial layer. Layers
/// after the last rank-3 value are rerun in full. Results match evaluate()
/// up to rounding.
class IncrementalForward {
 public:
  IncrementalForward(const NetGraph& net, const Tensor& x);

  const Tensor& input() const noexcept { return trace_.values.front(); }
  const Tensor& output() const noexcept { return trace_.values.back(); }

  /// Copies every channel of the listed pixels (row-major H x W indices)
  /// from `source` into the input and updates all downstream values.
  void assign(const std::vector<std::size_t>& pixels, const Tensor& source);

 private:
  const NetGraph* net_;
  ActivationTrace trace_;
};

/// Pixels of a C x H x W tensor grouped by identical channel vectors, in
/// order of first appearance. `key` may add a second tensor of the same
/// shape whose values must also agree.
struct PixelClasses {
  std::vector<std::uint32_t> class_of;  // per pixel
  std::vector<std::uint32_t> first;     // representative pixel per class
  std::size_t count() const noexcept { return first.size(); }
};

PixelClasses pixel_classes(const Tensor& x, const Tensor* key = nullptr);

/// C x 1 x K strip holding the representative pixels of `x`.
Tensor gather_strip(const Tensor& x, const PixelClasses& pc);
/// Inverse of gather_strip: broadcasts a C x 1 x K strip to C x H x W.
Tensor scatter_strip(const Tensor& strip, const PixelClasses& pc, std::size_t height, std::size_t width);

/// Raises glibc's mmap and trim thresholds so the large activation buffers
/// are recycled instead of being faulted in on every pass. No-op elsewhere.
void tune_allocator();

/// Runs a single layer on `input`; `add_operand` is used by Add layers.
Tensor apply_layer(const NetGraph& net, std::size_t k, const Tensor& input,
                   const Tensor* add_operand = nullptr);

/// d<seed, y>/dx. ReLU uses subgradient 0 at exactly zero.
Tensor backward(const NetGraph& net, const ActivationTrace& trace, const Tensor& seed);

/// Gradient of <seed, y> with respect to the output of layer `layer_index`.
Tensor backward_to_layer(const NetGraph& net, const ActivationTrace& trace, const Tensor& seed,
                         std::size_t layer_index);

enum class BackwardRule { GuidedReLU, DeepLIFTRescale, LRPEpsilon };

std::string_view backward_rule_name(BackwardRule rule);

/// Backward pass under a modified chain rule.
///
/// GuidedReLU clips negative incoming gradients at every ReLU on top of the
/// ReLU mask. DeepLIFTRescale propagates multipliers (y - y_ref)/(x - x_ref)
/// against `reference`, a trace of the same net on the baseline input.
/// LRPEpsilon propagates relevance seed * y_logit with the epsilon rule;
/// trailing Softmax layers pass relevance unchanged so the logit is explained.
/// The returned tensor has the input's shape. For DeepLIFT and LRP it holds
/// the per-input contributions (multiplier times input delta, or relevance).
Tensor modified_backward(const NetGraph& net, const ActivationTrace& trace, const Tensor& seed,
                         BackwardRule rule, const ActivationTrace* reference = nullptr,
                         double epsilon = 1e-9);

/// Softmax over a rank-1 tensor.
Tensor softmax(const Tensor& logits);

/// J^T g for the softmax Jacobian at output y.
Tensor softmax_vjp(const Tensor& y, const Tensor& g);

/// Integral over s in [0, 1] of J(z0 + s (z1 - z0))^T seed, where J is the
/// softmax Jacobian. Adaptive Gauss-Legendre; the result r satisfies
/// <r, z1 - z0> = <seed, softmax(z1) - softmax(z0)> to quadrature accuracy.
Tensor integrated_softmax_vjp(const Tensor& z0, const Tensor& z1, const Tensor& seed);

/// Forward pass carrying a tangent direction. The network must be
/// piecewise linear (no Softmax). Reports the output tangent and the
/// distance along `direction` to the first point where any ReLU input
/// changes sign, i.e. the end of the current linear piece.
struct TangentResult {
  Tensor output;
  Tensor output_tangent;
  double next_breakpoint = std::numeric_limits<double>::infinity();
};

TangentResult forward_tangent(const NetGraph& net, const Tensor& x, const Tensor& direction);

}  // namespace alab
