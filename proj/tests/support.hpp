#pragma once

#include <cmath>
#include <random>

#include "alab/netgraph.hpp"
#include "alab/rng.hpp"

namespace testing {

inline alab::Tensor random_tensor(std::mt19937_64& g, alab::Shape shape, double lo = -1.0, double hi = 1.0) {
  alab::Tensor t(std::move(shape));
  for (double& v : t.data()) v = alab::uniform(g, lo, hi);
  return t;
}

/// conv -> relu -> conv -> relu -> flatten -> linear -> relu -> linear
/// (+ add skip, + optional softmax). Input 2 x 6 x 6.
inline alab::NetGraph random_net(std::mt19937_64& g, bool with_bias, bool with_softmax, bool with_add = true) {
  using namespace alab;
  NetGraph net({2, 6, 6});
  auto bias = [&](std::size_t n) { return with_bias ? random_tensor(g, {n}, -0.3, 0.3) : Tensor({n}); };
  net.add(Layer::conv2d(random_tensor(g, {3, 2, 3, 3}), bias(3), 1, 1));  // 3 x 4 x 4
  net.add(Layer::relu());
  net.add(Layer::conv2d(random_tensor(g, {3, 3, 1, 1}), bias(3), 1, 1));
  if (with_add) net.add(Layer::add(1));
  net.add(Layer::relu());
  net.add(Layer::conv2d(random_tensor(g, {2, 3, 2, 2}), bias(2), 2, 2));  // 2 x 2 x 2
  net.add(Layer::relu());
  net.add(Layer::flatten());
  net.add(Layer::linear(random_tensor(g, {5, 8}), bias(5)));
  net.add(Layer::relu());
  net.add(Layer::linear(random_tensor(g, {3, 5}), bias(3)));
  if (with_softmax) net.add(Layer::softmax());
  return net;
}

inline double rel_err(const alab::Tensor& a, const alab::Tensor& b) {
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    da += a[i] * a[i];
    db += b[i] * b[i];
  }
  const double den = std::max({std::sqrt(da), std::sqrt(db), 1e-12});
  return std::sqrt(num) / den;
}

}  // namespace testing
