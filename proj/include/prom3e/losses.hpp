#pragma once

#include <vector>

#include "prom3e/config.hpp"
#include "prom3e/graph.hpp"

namespace prom3e::losses {

// Entry (j,p) = || pred_j - truth_p ||_2.
Var distance_matrix(Graph& g, Var pred, Var truth);

// InfoNCE over scaled-and-shifted distances:
//   -(1/N) sum_j log softmax_p(alpha * d(j,p) + beta)[j]
// with a max-subtracted log-sum-exp. alpha must be negative. With
// `ratio_form` the softmax ratio itself is averaged (no logarithm); that
// variant exists for inspection only.
Var contrastive_recon_loss(Graph& g, Var distances, Var alpha, Var beta, bool ratio_form = false);

// Mean over records of sum over dims of -1/2 (1 + log_var - mu^2 - exp(log_var)),
// i.e. KL(N(mu, sigma^2) || N(0, 1)).
Var vib_loss(Graph& g, Var mu, Var log_var);

// mean(recon) + lambda * vib. The VIB term appears exactly once.
Var total_loss(Graph& g, const std::vector<Var>& recon, Var vib, double lambda);

// Mean squared error over all entries.
Var mse_loss(Graph& g, Var pred, Var truth);

}  // namespace prom3e::losses
