#include "prom3e/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "prom3e/error.hpp"
#include "prom3e/losses.hpp"

namespace prom3e {

VisibleSet sample_visible_set(Rng& rng, std::size_t modality_count, bool masked_only_targets) {
  if (modality_count < 2) throw UsageError("masking needs at least two modalities");
  const std::size_t size = std::uniform_int_distribution<int>(0, 1)(rng) == 0 ? 1 : 2;
  std::vector<ModalityId> visible;
  const ModalityId first = std::uniform_int_distribution<std::size_t>(0, modality_count - 1)(rng);
  visible.push_back(first);
  if (size == 2) {
    // uniform over the remaining modalities
    ModalityId second = std::uniform_int_distribution<std::size_t>(0, modality_count - 2)(rng);
    if (second >= first) ++second;
    visible.push_back(second);
  }
  return VisibleSet::with_targets(std::move(visible), modality_count, masked_only_targets);
}

double cosine_lr(double base, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base;
  const double t = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  Batch b;
  b.inputs.reserve(ds.modality_count());
  for (std::size_t m = 0; m < ds.modality_count(); ++m) b.inputs.push_back(ds.matrix(indices, m));
  return b;
}

LossTerms build_loss(Graph& g, const BoundParams& p, const Batch& batch, const VisibleSet& vs,
                     const LossConfig& loss, EpsilonMode mode, Rng* rng, bool shared_epsilon) {
  const ModelParams& mp = *p.params;
  ForwardOutput fwd = forward(g, p, batch, vs, mode, rng, shared_epsilon);
  std::vector<Var> per_modality;
  per_modality.reserve(vs.targets.size());
  for (std::size_t i = 0; i < vs.targets.size(); ++i) {
    Var truth = g.constant(batch.inputs[vs.targets[i]]);
    Var pred = fwd.reconstructions[i];
    if (loss.kind == LossKind::mse) {
      per_modality.push_back(losses::mse_loss(g, pred, truth));
    } else {
      Var d = losses::distance_matrix(g, pred, truth);
      per_modality.push_back(losses::contrastive_recon_loss(g, d, p[mp.alpha()], p[mp.beta()], loss.ratio_form));
    }
  }
  LossTerms t;
  t.vib = losses::vib_loss(g, fwd.encoded.mu, fwd.encoded.log_var);
  t.total = losses::total_loss(g, per_modality, t.vib, loss.lambda);
  t.recon = losses::total_loss(g, per_modality, t.vib, 0.0);
  return t;
}

void AdamW::step(std::vector<Param>& params, const std::vector<Tensor>& grads, double lr,
                 const std::vector<bool>& frozen) {
  if (grads.size() != params.size()) throw UsageError("AdamW: gradient count does not match parameters");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.rows(), p.value.cols());
      v_.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!frozen.empty() && frozen[i]) continue;
    auto w = params[i].value.data();
    auto g = grads[i].data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    const double decay = params[i].decay ? lr * weight_decay_ : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= decay * w[j];
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

StepLosses train_step(ModelParams& params, AdamW& opt, const Batch& batch, const VisibleSet& vs,
                      const RunConfig& config, double lr, Rng& rng, std::size_t step_index) {
  if (batch.size() < 2) throw UsageError("train_step needs a batch of at least 2 records");
  const std::string where = "step " + std::to_string(step_index) + " with visible set " + vs.to_string();
  Graph g(true);
  BoundParams bp = bind(g, params);
  LossTerms terms;
  try {
    terms = build_loss(g, bp, batch, vs, config.loss, EpsilonMode::sample, &rng, config.model.shared_epsilon);
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " at " + where);
  }
  StepLosses out{g.value(terms.total).item(), g.value(terms.recon).item(), g.value(terms.vib).item()};
  if (!std::isfinite(out.total)) throw NumericError("non-finite loss at " + where);
  g.backward(terms.total);
  std::vector<Tensor> grads;
  grads.reserve(bp.vars.size());
  for (Var v : bp.vars) grads.push_back(g.grad(v));

  if (config.train.grad_clip > 0.0) {
    double ss = 0.0;
    for (const auto& t : grads)
      for (double x : t.data()) ss += x * x;
    const double norm = std::sqrt(ss);
    if (norm > config.train.grad_clip) {
      const double s = config.train.grad_clip / norm;
      for (auto& t : grads)
        for (double& x : t.data()) x *= s;
    }
  }

  std::vector<bool> frozen(params.params().size(), false);
  if (!config.loss.alpha_beta_learnable) {
    frozen[params.alpha()] = true;
    frozen[params.beta()] = true;
  }
  opt.step(params.params(), grads, lr, frozen);
  double& alpha = params[params.alpha()][0];
  alpha = std::min(alpha, kAlphaCeiling);
  return out;
}

double evaluate_loss(const ModelParams& params, const Dataset& ds, const RunConfig& config) {
  if (ds.empty()) throw DataError("evaluation set is empty");
  const std::size_t bs = config.train.batch_size;
  const std::size_t nm = params.shape().modality_count();
  double acc = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += bs) {
    idx.resize(std::min(bs, ds.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = make_batch(ds, idx);
    for (ModalityId m = 0; m < nm; ++m) {
      const VisibleSet vs = VisibleSet::with_targets({m}, nm, config.train.masked_only_targets);
      Graph g(false);
      BoundParams bp = bind(g, params);
      LossTerms t = build_loss(g, bp, batch, vs, config.loss, EpsilonMode::zero, nullptr, false);
      acc += g.value(t.total).item();
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

std::string TrainReport::to_text() const {
  std::string s = "epoch\ttrain_total\ttrain_recon\ttrain_vib\tval_total\n";
  char buf[256];
  for (std::size_t e = 0; e < epochs.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\n", e + 1, epochs[e].train_total,
                  epochs[e].train_recon, epochs[e].train_vib, epochs[e].val_total);
    s += buf;
  }
  std::snprintf(buf, sizeof buf, "# best_epoch=%zu best_val=%.9g steps=%zu seed=%llu wall_seconds=%.3f\n",
                best_epoch, best_val, steps, static_cast<unsigned long long>(seed), wall_seconds);
  s += buf;
  if (!checkpoint_path.empty()) s += "# checkpoint=" + checkpoint_path + "\n";
  return s;
}

RunConfig config_for_data(RunConfig config, const Dataset& ds) {
  config.synth.modality_count = ds.modality_count();
  config.synth.species_count = ds.species_count();
  if (!ds.dims().empty()) config.synth.input_dim = ds.dims().front();
  return config;
}

FitResult fit(const Dataset& train, const Dataset& val, const RunConfig& in_config, const std::string& checkpoint_path) {
  if (train.empty() || val.empty()) throw DataError("fit needs non-empty train and validation splits");
  if (train.dims() != val.dims()) throw DataError("train and validation splits have different modality layouts");
  const RunConfig config = config_for_data(in_config, train);
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();

  Rng model_rng = stream(config.seed, "model");
  Rng mask_rng = stream(config.seed, "masking");
  Rng shuffle_rng = stream(config.seed, "shuffle");
  Rng eps_rng = stream(config.seed, "epsilon");

  const ModelShape shape = shape_from_config(config, train.dims());
  ModelParams params = ModelParams::initialize(shape, config.loss, model_rng);
  AdamW opt(config.train);

  const std::size_t bs = config.train.batch_size;
  const std::size_t n = train.size();
  std::size_t per_epoch = n / bs + ((n % bs) >= 2 ? 1 : 0);
  if (per_epoch == 0) throw DataError("training split smaller than 2 records");
  const std::size_t total = per_epoch * config.train.epochs;

  FitResult result{TrainReport{}, params, params, config};
  result.report.seed = config.seed;
  result.report.checkpoint_path = checkpoint_path;
  double best = INFINITY;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochStats stats;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t len = std::min(bs, n - start);
      if (len < 2) break;
      const Batch batch = make_batch(train, std::span(order).subspan(start, len));
      const VisibleSet vs = sample_visible_set(mask_rng, shape.modality_count(), config.train.masked_only_targets);
      const double lr = cosine_lr(config.train.learning_rate, step, total);
      const StepLosses l = train_step(params, opt, batch, vs, config, lr, eps_rng, step);
      stats.train_total += l.total;
      stats.train_recon += l.recon;
      stats.train_vib += l.vib;
      ++batches;
      ++step;
    }
    stats.train_total /= static_cast<double>(batches);
    stats.train_recon /= static_cast<double>(batches);
    stats.train_vib /= static_cast<double>(batches);
    stats.val_total = evaluate_loss(params, val, config);
    if (stats.val_total < best) {
      best = stats.val_total;
      result.best = params;
      result.report.best_epoch = epoch + 1;
    }
    result.report.epochs.push_back(stats);
  }
  result.report.best_val = best;
  result.report.steps = step;
  result.last = std::move(params);
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, config, result.best);
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace prom3e
