// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
// The reference run and the MSE ablation take a few minutes each on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "prom3e/analytics.hpp"
#include "prom3e/gradcheck.hpp"
#include "prom3e/losses.hpp"
#include "prom3e/probe.hpp"
#include "prom3e/retrieval.hpp"
#include "prom3e/trainer.hpp"

using namespace prom3e;
using testing::random_tensor;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %2d %-28s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double scalar(Graph& g, Var v) { return g.value(v).item(); }

void gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckSetup s = make_grad_check_setup(8, 3, 4, 7);
  const GradCheckResult r = grad_check(s.params, s.batch, s.visible, s.loss, 1e-5, 7);
  const double secs = seconds_since(t0);
  report(1, "gradient correctness", r.max_relative_error < 1e-4 && secs < 30.0,
         fmt("max_rel_err=%.3e over %zu scalars, %.2fs", r.max_relative_error, r.checked, secs));
}

double vib_of(const Tensor& mu, const Tensor& lv) {
  Graph g(false);
  return scalar(g, losses::vib_loss(g, g.constant(mu), g.constant(lv)));
}

void loss_oracles() {
  bool ok = true;
  std::string detail;

  const double zero = vib_of(Tensor(4, 6), Tensor(4, 6));
  ok &= zero == 0.0;
  detail += fmt("vib(0,0)=%g", zero);

  // KL(q||p) as E_q[log q(z) - log p(z)] with z drawn from q
  Rng rng = stream(11, "acceptance-vib");
  double worst_z = 0.0;
  for (int input = 0; input < 20; ++input) {
    const Tensor mu = random_tensor(1, 4, rng);
    const Tensor lv = random_tensor(1, 4, rng, 0.8);
    const std::size_t n = 1000000;
    double sum = 0.0, sumsq = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      double v = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        const double e = normal(rng);
        const double z = mu[k] + std::exp(0.5 * lv[k]) * e;
        v += -0.5 * lv[k] - 0.5 * e * e + 0.5 * z * z;
      }
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sumsq / n - mean * mean) / (n - 1));
    worst_z = std::max(worst_z, std::abs(vib_of(mu, lv) - mean) / se);
  }
  ok &= worst_z < 3.0;
  detail += fmt(" mc_worst_z=%.2f", worst_z);

  double worst_logn = 0.0, worst_beta = 0.0;
  for (std::size_t n : {1u, 2u, 7u, 64u, 200u}) {
    Graph g(false);
    Tensor d(n, n);
    for (double& x : d.data()) x = 1.7;
    const double l = scalar(g, losses::contrastive_recon_loss(g, g.constant(d), g.constant(Tensor::scalar(-5.0)),
                                                              g.constant(Tensor::scalar(5.0)), false));
    worst_logn = std::max(worst_logn, std::abs(l - std::log(static_cast<double>(n))));

    Tensor r = random_tensor(n, n, rng);
    for (double& x : r.data()) x = std::abs(x);
    Var dv = g.constant(r);
    Var a = g.constant(Tensor::scalar(-3.0));
    const double base = scalar(g, losses::contrastive_recon_loss(g, dv, a, g.constant(Tensor::scalar(0.0)), false));
    for (double beta : {-40.0, 2.5, 100.0}) {
      const double shifted =
          scalar(g, losses::contrastive_recon_loss(g, dv, a, g.constant(Tensor::scalar(beta)), false));
      worst_beta = std::max(worst_beta, std::abs(shifted - base));
    }
  }
  ok &= worst_logn < 1e-10 && worst_beta < 1e-10;
  detail += fmt(" |L-logN|=%.1e beta_shift=%.1e", worst_logn, worst_beta);
  report(2, "loss oracles", ok, detail);
}

void masking_independence() {
  const ModelParams p = testing::small_model(6, 8, 16, 4, 21);
  const Batch b = testing::random_batch(6, 6, 8, 22);
  Rng rng = stream(23, "perturb");
  std::size_t sets = 0, mismatches = 0;
  for (const auto& visible : std::vector<std::vector<ModalityId>>{{0}, {2}, {1, 4}, {3, 5}, {0, 1, 2}}) {
    const VisibleSet vs = VisibleSet::with_targets(visible, 6, true);
    Batch perturbed = b;
    for (ModalityId m : vs.targets) perturbed.inputs[m] = random_tensor(6, 8, rng, 10.0);
    const Inference a = infer(p, b, vs);
    const Inference c = infer(p, perturbed, vs);
    mismatches += !(a.mu == c.mu) + !(a.log_var == c.log_var) + !(a.hidden == c.hidden) +
                  !(a.reconstructions == c.reconstructions);
    for (std::size_t r = 0; r < 6; ++r) {
      mismatches += sigma_l1(a.log_var.row_span(r)) != sigma_l1(c.log_var.row_span(r));
    }
    for (FeatureKind k : kFeatureKinds) {
      mismatches += !(extract_features(p, b, visible, k) == extract_features(p, perturbed, visible, k));
    }
    ++sets;
  }
  report(3, "masking independence", mismatches == 0, fmt("%zu visible sets, %zu mismatches", sets, mismatches));
}

RunConfig reference_config() {
  RunConfig c;
  c.seed = 1;
  c.synth.records = 2400;
  c.split.train = 2000.0 / 2400.0;
  c.split.val = 200.0 / 2400.0;
  c.split.test = 200.0 / 2400.0;
  return c;
}

// Variance across records of decoder outputs relative to the ground truth,
// pooled over every single-visible-modality set and its masked targets.
double reconstruction_variance_ratio(const ModelParams& p, const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Batch b = make_batch(ds, idx);
  auto total_var = [](const Tensor& t) {
    double s = 0.0;
    for (std::size_t c = 0; c < t.cols(); ++c) {
      double m = 0.0;
      for (std::size_t r = 0; r < t.rows(); ++r) m += t(r, c);
      m /= static_cast<double>(t.rows());
      for (std::size_t r = 0; r < t.rows(); ++r) s += (t(r, c) - m) * (t(r, c) - m);
    }
    return s / static_cast<double>(t.rows());
  };
  double recon = 0.0, truth = 0.0;
  const std::size_t nm = ds.modality_count();
  for (ModalityId v = 0; v < nm; ++v) {
    const VisibleSet vs = VisibleSet::with_targets({v}, nm, true);
    const Inference inf = infer(p, b, vs);
    for (std::size_t i = 0; i < vs.targets.size(); ++i) {
      recon += total_var(inf.reconstructions[i]);
      truth += total_var(b.inputs[vs.targets[i]]);
    }
  }
  return recon / truth;
}

struct Reference {
  RunConfig config;
  Splits splits;
  FitResult fit;
};

void end_to_end(const Reference& ref) {
  const auto& epochs = ref.fit.report.epochs;
  const double ratio = epochs.back().train_total / epochs.front().train_total;
  const double wall = ref.fit.report.wall_seconds;

  RetrievalConfig rc;
  rc.query = 2;   // location
  rc.target = 1;  // satellite
  const RetrievalResult plain = evaluate_retrieval(ref.fit.best, ref.splits.test, rc);
  const DeltaSweep sweep = tune_delta(ref.fit.best, ref.splits.val, rc);
  rc.delta = sweep.best_delta;
  const RetrievalResult tuned = evaluate_retrieval(ref.fit.best, ref.splits.test, rc);
  const double baseline = 1.0 / static_cast<double>(plain.gallery_size);

  const bool ok = ratio < 0.25 && wall < 300.0 && plain.gallery_size == 200 && tuned.recall[0] >= 20.0 * baseline &&
                  tuned.recall[0] >= plain.recall[0];
  report(4, "end-to-end desk run", ok,
         fmt("loss_ratio=%.3f wall=%.0fs gallery=%zu R@1(delta=0)=%.3f R@1(delta=%.2f)=%.3f need>=%.3f", ratio, wall,
             plain.gallery_size, plain.recall[0], sweep.best_delta, tuned.recall[0], 20.0 * baseline));
}

void uncertainty_direction(const Reference& ref) {
  std::vector<std::vector<ModalityId>> singles, pairs;
  for (ModalityId a = 0; a < 6; ++a) {
    singles.push_back({a});
    for (ModalityId b = a + 1; b < 6; ++b) pairs.push_back({a, b});
  }
  std::vector<std::vector<ModalityId>> both = singles;
  both.insert(both.end(), pairs.begin(), pairs.end());
  const UncertaintyReport u = uncertainty_sweep(ref.fit.best, ref.splits.test, both);
  double one = 0.0, two = 0.0;
  for (std::size_t i = 0; i < u.rows.size(); ++i) (i < singles.size() ? one : two) += u.rows[i].sigma_l1;
  one /= static_cast<double>(singles.size());
  two /= static_cast<double>(pairs.size());
  const bool ok = two < one && u.correlated && u.spearman.rho > 0.0;
  report(5, "uncertainty direction", ok,
         fmt("mean sigma_l1 one=%.3f two=%.3f; spearman(sigma,mse)=%.3f p=%.3g over %zu sets", one, two,
             u.spearman.rho, u.spearman.p_value, u.rows.size()));
}

// Mean squared error of masked-target reconstructions after L2 normalizing
// each reconstructed row, so that only direction counts.
double direction_mse(const ModelParams& p, const Dataset& ds, const std::vector<ModalityId>& visible) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  const Batch b = make_batch(ds, idx);
  const VisibleSet vs = VisibleSet::with_targets(visible, ds.modality_count(), true);
  const Inference inf = infer(p, b, vs);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < vs.targets.size(); ++i) {
    const Tensor& rec = inf.reconstructions[i];
    const Tensor& truth = b.inputs[vs.targets[i]];
    for (std::size_t r = 0; r < rec.rows(); ++r) {
      double norm = 0.0;
      for (double v : rec.row_span(r)) norm += v * v;
      norm = std::sqrt(norm);
      for (std::size_t c = 0; c < rec.cols(); ++c) {
        const double e = rec(r, c) / norm - truth(r, c);
        acc += e * e;
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

void uncertainty_notes(const Reference& ref) {
  const UncertaintyReport u = uncertainty_sweep(ref.fit.best, ref.splits.test, {{0}, {0, 2}});
  std::printf("info     masked-target mse: {image}=%.4f {image,location}=%.4f\n", u.rows[0].mse, u.rows[1].mse);

  std::vector<double> sig, dir;
  for (ModalityId a = 0; a < 6; ++a) {
    for (ModalityId b = a; b < 6; ++b) {
      std::vector<ModalityId> v{a};
      if (b != a) v.push_back(b);
      sig.push_back(uncertainty_sweep(ref.fit.best, ref.splits.test, {v}).rows[0].sigma_l1);
      dir.push_back(direction_mse(ref.fit.best, ref.splits.test, v));
    }
  }
  const Correlation c = spearman(sig, dir);
  std::printf("info     spearman(sigma, mse of normalized reconstructions)=%.3f p=%.3g over %zu sets\n", c.rho,
              c.p_value, sig.size());
  std::fflush(stdout);
}

void gap_direction(const Reference& ref) {
  const GapReport g = gap_sweep(ref.fit.best, ref.splits.test, 0, 1, growing_contexts(6, 0, 1));
  bool below = true, steady = true;
  double worst_step = -INFINITY;
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    below &= g.rows[i].hidden < g.rows[i].input;
    if (i > 0) {
      const double change = g.rows[i].hidden / g.rows[i - 1].hidden - 1.0;
      worst_step = std::max(worst_step, change);
      steady &= change <= 0.05;
    }
  }
  report(6, "modality-gap direction", below && steady,
         fmt("input=%.3f hidden=%.3f (pair only), hidden at full context=%.3f, largest step change=%+.1f%%",
             g.rows.front().input, g.rows.front().hidden, g.rows.back().hidden, 100.0 * worst_step));
}

void probe_ordering(const Reference& ref) {
  const ProbeReport r = run_probe(ref.fit.best, ref.splits.train, ref.splits.test, {0},
                                  {FeatureKind::mu_token, FeatureKind::all_hidden});
  const double mu = r.accuracy(FeatureKind::mu_token);
  const double all = r.accuracy(FeatureKind::all_hidden);
  const double chance = 1.0 / static_cast<double>(r.classes);
  report(7, "probe ordering", all >= mu && mu >= 2.0 * chance && all >= 2.0 * chance,
         fmt("all_hidden=%.3f mu_token=%.3f chance=%.3f", all, mu, chance));
}

void mse_collapse(const Reference& ref) {
  RunConfig mse = ref.config;
  mse.loss.kind = LossKind::mse;
  const FitResult ablation = fit(ref.splits.train, ref.splits.val, mse);
  const double contrastive = reconstruction_variance_ratio(ref.fit.best, ref.splits.test);
  const double collapsed = reconstruction_variance_ratio(ablation.best, ref.splits.test);
  report(8, "mse collapse ablation", collapsed < 0.10 && contrastive > 0.50,
         fmt("variance ratio mse=%.3f contrastive=%.3f (%zu epochs each)", collapsed, contrastive,
             mse.train.epochs));
}

void analytics_oracles(const Reference& ref) {
  bool ok = true;
  std::string detail;

  const double counts[4] = {5, 5, 5, 5};
  const double h = shannon_index(counts);
  ok &= std::abs(h - std::log(4.0)) < 1e-12;
  detail += fmt("|H-ln4|=%.1e", std::abs(h - std::log(4.0)));

  std::vector<double> x(30), up(30), down(30);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<double>(i) * 0.3 - 2.0;
    up[i] = std::exp(x[i]);
    down[i] = -x[i] * x[i] * x[i];
  }
  const double rho_up = spearman(x, up).rho, rho_down = spearman(x, down).rho;
  ok &= rho_up == 1.0 && rho_down == -1.0;
  detail += fmt(" spearman=%+g/%+g", rho_up, rho_down);

  // brute force: rank = 1 + #items scoring higher + #earlier items scoring equal
  Rng rng = stream(31, "acceptance-recall");
  std::size_t disagreements = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor gallery = testing::unit_rows(50, 8, rng);
    const Tensor queries = random_tensor(50, 8, rng);
    const RetrievalResult r = score_queries(queries, gallery, {1, 5, 10});
    std::vector<std::size_t> ranks(50);
    for (std::size_t q = 0; q < 50; ++q) {
      auto dot = [&](std::size_t j) {
        double s = 0.0;
        for (std::size_t c = 0; c < 8; ++c) s += queries(q, c) * gallery(j, c);
        return s;
      };
      std::size_t rank = 1;
      for (std::size_t j = 0; j < 50; ++j)
        if (dot(j) > dot(q) || (dot(j) == dot(q) && j < q)) ++rank;
      ranks[q] = rank;
    }
    for (std::size_t ki = 0; ki < 3; ++ki) {
      const std::size_t k = r.k_list[ki];
      const double hits = static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [&](auto v) { return v <= k; }));
      disagreements += r.recall[ki] != hits / 50.0;
    }
    disagreements += r.ranks != ranks;
  }
  ok &= disagreements == 0;
  detail += fmt(" recall_disagreements=%zu", disagreements);

  const auto dir = std::filesystem::temp_directory_path() / "prom3e_acceptance";
  std::filesystem::create_directories(dir);
  const std::string data_path = (dir / "test.pm3e").string();
  const std::string ckpt_path = (dir / "best.pm3c").string();
  write_dataset(ref.splits.test, data_path);
  const Dataset back = read_dataset(data_path);
  const bool data_ok = back.serialize() == ref.splits.test.serialize();
  save_checkpoint(ckpt_path, ref.fit.config, ref.fit.best);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const bool ckpt_ok = serialize_checkpoint(ck.config, ck.params) == serialize_checkpoint(ref.fit.config, ref.fit.best);
  std::filesystem::remove_all(dir);
  ok &= data_ok && ckpt_ok;
  detail += fmt(" dataset_roundtrip=%s checkpoint_roundtrip=%s", data_ok ? "exact" : "DIFFERS",
                ckpt_ok ? "exact" : "DIFFERS");
  report(9, "analytics oracles", ok, detail);
}

void masking_statistics() {
  Rng rng = stream(41, "acceptance-masking");
  const std::size_t draws = 100000;
  std::vector<std::size_t> seen(6, 0);
  for (std::size_t i = 0; i < draws; ++i)
    for (ModalityId m : sample_visible_set(rng, 6).visible) ++seen[m];
  double worst = 0.0;
  std::string freqs;
  for (std::size_t s : seen) {
    const double f = static_cast<double>(s) / static_cast<double>(draws);
    worst = std::max(worst, std::abs(f - 0.25));
    freqs += fmt("%s%.4f", freqs.empty() ? "" : " ", f);
  }
  report(10, "masking-policy statistics", worst <= 0.01, fmt("frequencies %s (expected 0.25)", freqs.c_str()));
}

}  // namespace

int main() {
  gradients();
  loss_oracles();
  masking_independence();

  Reference ref;
  ref.config = reference_config();
  const Dataset all = generate(ref.config.synth, ref.config.seed);
  ref.splits = split(all, {ref.config.split.train, ref.config.split.val, ref.config.split.test}, ref.config.seed);
  std::printf("      reference run: %zu train / %zu val / %zu test records, %zu epochs\n", ref.splits.train.size(),
              ref.splits.val.size(), ref.splits.test.size(), ref.config.train.epochs);
  std::fflush(stdout);
  ref.fit = fit(ref.splits.train, ref.splits.val, ref.config);

  end_to_end(ref);
  uncertainty_direction(ref);
  uncertainty_notes(ref);
  gap_direction(ref);
  probe_ordering(ref);
  mse_collapse(ref);
  analytics_oracles(ref);
  masking_statistics();

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
