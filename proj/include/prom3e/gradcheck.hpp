#pragma once

#include <cstdint>

#include "prom3e/config.hpp"
#include "prom3e/model.hpp"

namespace prom3e {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;    // index into ModelParams::params()
  std::size_t worst_element = 0;
  std::size_t checked = 0;        // number of scalars perturbed
};

// Full objective on one batch with a fixed visible set and fixed epsilon
// draws. Compares the analytic gradient of every parameter scalar with
// central differences:  max |a - n| / max(1, |n|).
GradCheckResult grad_check(const ModelParams& params, const Batch& batch, const VisibleSet& vs,
                           const LossConfig& loss, double step, std::uint64_t epsilon_seed);

// Small random model + batch, as used by the CLI command.
struct GradCheckSetup {
  ModelParams params;
  Batch batch;
  VisibleSet visible;
  LossConfig loss;
};
GradCheckSetup make_grad_check_setup(std::size_t dim, std::size_t modalities, std::size_t records,
                                     std::uint64_t seed, Activation activation = Activation::gelu);

}  // namespace prom3e
