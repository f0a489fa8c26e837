#include <algorithm>
#include <cmath>

#include "alab/error.hpp"
#include "alab/evalmetrics.hpp"

namespace alab {

Tensor normalize_attribution(const Tensor& map) {
  double top = 0.0, bottom = 0.0;
  for (double v : map.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "normalize_attribution: map has non-finite values");
    top = std::max(top, v);
    bottom = std::min(bottom, v);
  }
  Tensor out = map;
  for (double& v : out.data()) {
    if (v > 0.0) v /= top;
    else if (v < 0.0) v /= -bottom;
  }
  return out;
}

double f1_of(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

nlohmann::json ScoreTriple::to_json() const {
  nlohmann::json j{{"precision", precision}, {"recall", recall}, {"f1", f1}, {"gt", gt_variant_name(variant)}};
  if (!method.empty()) j["method"] = method;
  if (incapable) j["incapable"] = true;
  return j;
}

ScoreTriple score(const Tensor& map, const LabSample& sample, const GtVariant& variant, const std::string& method) {
  if (map.shape() != sample.gt_signed.shape()) {
    fail(ErrorKind::InvalidInput, "score: map shape " + shape_string(map.shape()) + " does not match ground truth " +
                                      shape_string(sample.gt_signed.shape()));
  }
  ScoreTriple t;
  t.variant = variant;
  t.method = method;
  const Tensor a = normalize_attribution(map);
  const Tensor g = gt_mask(sample, variant);

  if (variant.kind == GtKind::Negative && std::none_of(a.data().begin(), a.data().end(), [](double v) { return v < 0.0; })) {
    t.incapable = true;
    return t;
  }
  double overlap = 0.0, mass = 0.0, truth = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double v = 0.0;
    switch (variant.kind) {
      case GtKind::Overall: v = std::abs(a[i]); break;
      case GtKind::Negative: v = std::max(-a[i], 0.0); break;
      case GtKind::Positive:
      case GtKind::SmoothedPositive: v = std::max(a[i], 0.0); break;
    }
    overlap += std::abs(v * g[i]);
    mass += v;
    truth += std::abs(g[i]);
  }
  t.precision = mass > 0.0 ? overlap / mass : 0.0;
  t.recall = truth > 0.0 ? overlap / truth : 0.0;
  t.f1 = f1_of(t.precision, t.recall);
  return t;
}

ScoreTriple score(const AttributionMap& map, const LabSample& sample, const GtVariant& variant) {
  return score(map.values, sample, variant, map.method);
}

nlohmann::json FaithfulnessVerdict::to_json() const { return {{"gamma", gamma}, {"f1", f1}, {"pass", pass}}; }

FaithfulnessVerdict faithfulness_test(double f1, double gamma) { return {gamma, f1, f1 >= gamma}; }

FaithfulnessVerdict faithfulness_test(const ScoreTriple& triple, double gamma) {
  return faithfulness_test(triple.f1, gamma);
}

}  // namespace alab
