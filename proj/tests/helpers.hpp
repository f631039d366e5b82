#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "prom3e/graph.hpp"
#include "prom3e/rng.hpp"
#include "prom3e/tensor.hpp"

namespace testing {

using prom3e::Graph;
using prom3e::Rng;
using prom3e::Tensor;
using prom3e::Var;

inline Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (double& v : t.data()) v = scale * prom3e::normal(rng);
  return t;
}

inline Tensor unit_rows(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t = random_tensor(r, c, rng);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (double v : t.row_span(i)) ss += v * v;
    for (double& v : t.row_span(i)) v /= std::sqrt(ss);
  }
  return t;
}

// Builds a scalar from the given parameter vars.
using LossFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// max |analytic - numeric| / max(1, |numeric|) over every input element,
// central differences with step h.
inline double max_grad_error(const LossFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  std::vector<Tensor> analytic;
  {
    Graph g(true);
    std::vector<Var> vs;
    for (const auto& t : inputs) vs.push_back(g.parameter(t));
    Var loss = f(g, vs);
    g.backward(loss);
    for (Var v : vs) analytic.push_back(g.grad(v));
  }
  auto eval = [&]() {
    Graph g(false);
    std::vector<Var> vs;
    for (const auto& t : inputs) vs.push_back(g.constant(t));
    return g.value(f(g, vs)).item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      const double up = eval();
      inputs[i][j] = saved - h;
      const double down = eval();
      inputs[i][j] = saved;
      const double num = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[i][j] - num) / std::max(1.0, std::abs(num)));
    }
  }
  return worst;
}

// sum(x * w) with fixed random weights, so every output entry matters.
inline Var weighted_sum(Graph& g, Var x, std::uint64_t seed) {
  Rng rng = prom3e::stream(seed, "weights");
  const Tensor& v = g.value(x);
  return prom3e::ops::sum(g, prom3e::ops::mul(g, x, g.constant(random_tensor(v.rows(), v.cols(), rng))));
}

}  // namespace testing

#include "prom3e/model.hpp"

namespace testing {

inline prom3e::ModelParams small_model(std::size_t modalities, std::size_t dim, std::size_t encoder_dim,
                                       std::size_t registers, std::uint64_t seed) {
  prom3e::ModelShape s;
  s.input_dims.assign(modalities, dim);
  s.encoder_dim = encoder_dim;
  s.registers = registers;
  Rng rng = prom3e::stream(seed, "model");
  return prom3e::ModelParams::initialize(s, prom3e::LossConfig{}, rng);
}

inline prom3e::Batch random_batch(std::size_t modalities, std::size_t rows, std::size_t dim, std::uint64_t seed) {
  Rng rng = prom3e::stream(seed, "batch");
  prom3e::Batch b;
  for (std::size_t m = 0; m < modalities; ++m) b.inputs.push_back(unit_rows(rows, dim, rng));
  return b;
}

}  // namespace testing
