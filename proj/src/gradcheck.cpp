#include "prom3e/gradcheck.hpp"

#include <cmath>

#include "prom3e/error.hpp"
#include "prom3e/trainer.hpp"

namespace prom3e {

namespace {

double loss_value(const ModelParams& params, const Batch& batch, const VisibleSet& vs, const LossConfig& loss,
                  std::uint64_t epsilon_seed) {
  Graph g(false);
  BoundParams bp = bind(g, params);
  Rng rng = stream(epsilon_seed, "epsilon");
  return g.value(build_loss(g, bp, batch, vs, loss, EpsilonMode::sample, &rng, false).total).item();
}

}  // namespace

GradCheckResult grad_check(const ModelParams& params, const Batch& batch, const VisibleSet& vs,
                           const LossConfig& loss, double step, std::uint64_t epsilon_seed) {
  if (!(step >= 1e-7 && step <= 1e-3)) throw UsageError("grad_check step must lie in [1e-7, 1e-3]");
  std::vector<Tensor> analytic;
  {
    Graph g(true);
    BoundParams bp = bind(g, params);
    Rng rng = stream(epsilon_seed, "epsilon");
    Var total = build_loss(g, bp, batch, vs, loss, EpsilonMode::sample, &rng, false).total;
    if (!std::isfinite(g.value(total).item())) throw NumericError("grad_check: loss is not finite");
    g.backward(total);
    for (Var v : bp.vars) analytic.push_back(g.grad(v));
  }

  GradCheckResult res;
  ModelParams work = params;
  for (std::size_t i = 0; i < work.params().size(); ++i) {
    auto w = work[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + step;
      const double up = loss_value(work, batch, vs, loss, epsilon_seed);
      w[j] = saved - step;
      const double down = loss_value(work, batch, vs, loss, epsilon_seed);
      w[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("grad_check: non-finite loss when perturbing parameter " + std::to_string(i) + " (" +
                           work.params()[i].name + ") element " + std::to_string(j));
      }
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[i].data()[j] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > res.max_relative_error || res.checked == 0) {
        res.max_relative_error = err;
        res.worst_param = i;
        res.worst_element = j;
      }
      ++res.checked;
    }
  }
  return res;
}

GradCheckSetup make_grad_check_setup(std::size_t dim, std::size_t modalities, std::size_t records,
                                     std::uint64_t seed, Activation activation) {
  if (dim == 0 || modalities < 2 || records < 2) throw UsageError("grad-check needs dim >= 1, >= 2 modalities, >= 2 records");
  ModelShape shape;
  shape.input_dims.assign(modalities, dim);
  shape.encoder_dim = dim;
  shape.depth = 1;
  shape.registers = 4;
  shape.ff_mult = 4;
  shape.activation = activation;
  LossConfig loss;
  Rng model_rng = stream(seed, "model");
  GradCheckSetup s{ModelParams::initialize(shape, loss, model_rng), Batch{}, VisibleSet{}, loss};
  Rng data_rng = stream(seed, "data");
  for (std::size_t m = 0; m < modalities; ++m) {
    Tensor x(records, dim);
    for (std::size_t r = 0; r < records; ++r) {
      double ss = 0.0;
      for (double& v : x.row_span(r)) {
        v = normal(data_rng);
        ss += v * v;
      }
      for (double& v : x.row_span(r)) v /= std::sqrt(ss);
    }
    s.batch.inputs.push_back(std::move(x));
  }
  s.visible = VisibleSet::with_targets({0, 1}, modalities, false);
  return s;
}

}  // namespace prom3e
