#include "prom3e/losses.hpp"

#include "prom3e/error.hpp"

namespace prom3e::losses {

Var distance_matrix(Graph& g, Var pred, Var truth) {
  const Tensor& p = g.value(pred);
  const Tensor& t = g.value(truth);
  if (!p.same_shape(t)) {
    throw ShapeError("distance_matrix: prediction " + p.shape_str() + " vs truth " + t.shape_str());
  }
  return ops::pairwise_distance(g, pred, truth);
}

Var contrastive_recon_loss(Graph& g, Var distances, Var alpha, Var beta, bool ratio_form) {
  const Tensor& d = g.value(distances);
  if (d.rows() != d.cols()) throw ShapeError("contrastive loss needs a square distance matrix, got " + d.shape_str());
  if (!d.all_finite()) throw NumericError("contrastive loss: non-finite distance entries");
  if (!(g.value(alpha).item() < 0.0)) throw NumericError("contrastive loss: alpha must be negative");
  Var logits = ops::add_scalar(g, ops::mul_scalar(g, distances, alpha), beta);
  Var matched = ops::diagonal(g, ops::log_softmax_rows(g, logits));
  if (ratio_form) return ops::mean(g, ops::exp(g, matched));
  return ops::scale(g, ops::mean(g, matched), -1.0);
}

Var vib_loss(Graph& g, Var mu, Var log_var) {
  const Tensor& m = g.value(mu);
  const Tensor& lv = g.value(log_var);
  if (!m.same_shape(lv)) throw ShapeError("vib_loss: mu " + m.shape_str() + " vs log_var " + lv.shape_str());
  // -1/2 (1 + lv - mu^2 - e^lv) = 1/2 (mu^2 + e^lv - lv - 1)
  Var inner = ops::sub(g, ops::add(g, ops::mul(g, mu, mu), ops::exp(g, log_var)), log_var);
  Var per_entry = ops::scale(g, inner, 0.5);
  const double n = static_cast<double>(m.rows());
  // the -1/2 constant per entry: sum gives -cols/2 per record
  Var total = ops::scale(g, ops::sum(g, per_entry), 1.0 / n);
  const double offset = -0.5 * static_cast<double>(m.cols());
  return ops::add_scalar(g, total, g.constant(Tensor::scalar(offset)));
}

Var total_loss(Graph& g, const std::vector<Var>& recon, Var vib, double lambda) {
  if (recon.empty()) throw UsageError("total_loss needs at least one reconstruction loss");
  Var acc = recon.front();
  for (std::size_t i = 1; i < recon.size(); ++i) acc = ops::add(g, acc, recon[i]);
  Var mean = ops::scale(g, acc, 1.0 / static_cast<double>(recon.size()));
  return ops::add(g, mean, ops::scale(g, vib, lambda));
}

Var mse_loss(Graph& g, Var pred, Var truth) {
  const Tensor& p = g.value(pred);
  const Tensor& t = g.value(truth);
  if (!p.same_shape(t)) throw ShapeError("mse_loss: prediction " + p.shape_str() + " vs truth " + t.shape_str());
  Var diff = ops::sub(g, pred, truth);
  return ops::mean(g, ops::mul(g, diff, diff));
}

}  // namespace prom3e::losses
