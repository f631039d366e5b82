#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "prom3e/error.hpp"
#include "prom3e/trainer.hpp"

using namespace prom3e;
using namespace testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig tiny_config() {
  RunConfig c;
  c.seed = 21;
  c.synth.records = 64;
  c.synth.input_dim = 8;
  c.synth.modality_count = 3;
  c.synth.species_count = 4;
  c.model.encoder_dim = 16;
  c.train.batch_size = 16;
  c.train.epochs = 2;
  c.train.learning_rate = 1e-3;
  return c;
}

}  // namespace

TEST_CASE("each modality is visible a quarter of the time") {
  Rng rng = stream(1, "masking");
  std::vector<int> seen(6, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const VisibleSet vs = sample_visible_set(rng, 6);
    CHECK((vs.visible.size() == 1 || vs.visible.size() == 2));
    CHECK(vs.targets.size() == 6);
    for (ModalityId m : vs.visible) ++seen[m];
  }
  for (int m = 0; m < 6; ++m) CHECK(std::abs(seen[m] / double(draws) - 0.25) <= 0.01);
}

TEST_CASE("two modalities: singletons and the pair only") {
  Rng rng = stream(2, "masking");
  int pair = 0;
  for (int i = 0; i < 4000; ++i) {
    const VisibleSet vs = sample_visible_set(rng, 2, true);
    if (vs.visible.size() == 2) {
      ++pair;
      CHECK(vs.visible == std::vector<ModalityId>{0, 1});
      CHECK(vs.targets.size() == 2);  // nothing masked: fall back to all
    } else {
      CHECK(vs.targets.size() == 1);
      CHECK(vs.targets[0] != vs.visible[0]);
    }
  }
  CHECK(std::abs(pair / 4000.0 - 0.5) < 0.03);
  Rng a = stream(3, "masking"), b = stream(3, "masking");
  for (int i = 0; i < 100; ++i) CHECK(sample_visible_set(a, 5).visible == sample_visible_set(b, 5).visible);
  CHECK_THROWS_AS(sample_visible_set(a, 1), UsageError);
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(1e-4, 0, 1000) == 1e-4);
  CHECK(std::abs(cosine_lr(1e-4, 1000, 1000)) < 1e-15);
  CHECK(std::abs(cosine_lr(1e-4, 500, 1000) - 5e-5) < 1e-18);
}

TEST_CASE("AdamW matches a hand-stepped scalar trace") {
  // minimize (w - 3)^2 from w = 0
  const double lr = 0.1, b1 = 0.9, b2 = 0.98, eps = 1e-8, wd = 0.01;
  std::vector<Param> p{{"w", Tensor::scalar(0.0), true}};
  AdamW opt(b1, b2, eps, wd);
  double w = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    const double grad = 2.0 * (w - 3.0);
    opt.step(p, {Tensor::scalar(2.0 * (p[0].value.item() - 3.0))}, lr);
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    w = w * (1 - lr * wd) - lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(std::abs(p[0].value.item() - w) < 1e-14);
  }
  CHECK(w > 0.4);
}

TEST_CASE("decay only touches weight matrices") {
  std::vector<Param> p{{"w", Tensor::scalar(2.0), true}, {"b", Tensor::scalar(2.0), false}};
  AdamW opt(0.9, 0.98, 1e-8, 0.5);
  opt.step(p, {Tensor::scalar(0.0), Tensor::scalar(0.0)}, 0.1);
  CHECK(p[0].value.item() == doctest::Approx(2.0 * (1 - 0.05)));
  CHECK(p[1].value.item() == 2.0);

  const ModelParams mp = small_model(2, 4, 8, 2, 1);
  for (const auto& q : mp.params()) {
    const bool matrix = q.name.ends_with(".w1") || q.name.ends_with(".w2") || q.name.ends_with(".wq") ||
                        q.name.ends_with(".wk") || q.name.ends_with(".wv") || q.name.ends_with(".wo");
    CHECK_MESSAGE(q.decay == matrix, q.name);
  }
}

TEST_CASE("zero learning rate and decay leave parameters unchanged") {
  RunConfig c = tiny_config();
  c.train.weight_decay = 0.0;
  ModelParams p = small_model(3, 8, 16, 4, 2);
  const ModelParams before = p;
  AdamW opt(c.train);
  Rng rng = stream(1, "epsilon");
  train_step(p, opt, random_batch(3, 8, 8, 3), VisibleSet::with_targets({1}, 3, false), c, 0.0, rng);
  for (std::size_t i = 0; i < p.params().size(); ++i) CHECK(p[i] == before[i]);
}

TEST_CASE("one step lowers the loss on its own batch") {
  RunConfig c = tiny_config();
  c.train.learning_rate = 1e-4;
  ModelParams p = small_model(3, 8, 16, 4, 4);
  const Batch b = random_batch(3, 8, 8, 5);
  const VisibleSet vs = VisibleSet::with_targets({0, 2}, 3, false);
  auto loss_at = [&](const ModelParams& params) {
    Rng rng = stream(9, "epsilon");
    Graph g(false);
    return g.value(build_loss(g, bind(g, params), b, vs, c.loss, EpsilonMode::sample, &rng, false).total).item();
  };
  const double before = loss_at(p);
  AdamW opt(c.train);
  Rng rng = stream(9, "epsilon");
  const StepLosses l = train_step(p, opt, b, vs, c, 1e-4, rng);
  CHECK(l.total == before);
  CHECK(loss_at(p) < before);
}

TEST_CASE("alpha stays below the ceiling") {
  RunConfig c = tiny_config();
  ModelParams p = small_model(3, 8, 16, 4, 4);
  p[p.alpha()][0] = -1e-3;
  AdamW opt(c.train);
  Rng rng = stream(1, "epsilon");
  for (int i = 0; i < 5; ++i) {
    train_step(p, opt, random_batch(3, 8, 8, 10 + i), VisibleSet::with_targets({0}, 3, false), c, 0.5, rng);
    CHECK(p[p.alpha()][0] <= kAlphaCeiling);
  }
}

TEST_CASE("non-finite loss aborts with step and visible set") {
  RunConfig c = tiny_config();
  ModelParams p = small_model(3, 8, 16, 4, 4);
  p[p.decoder(2, 2)].fill(NAN);
  AdamW opt(c.train);
  Rng rng = stream(1, "epsilon");
  try {
    train_step(p, opt, random_batch(3, 8, 8, 1), VisibleSet::with_targets({1}, 3, false), c, 1e-4, rng, 17);
    FAIL("expected an error");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("17") != std::string::npos);
    CHECK(msg.find("satellite") != std::string::npos);
  }
}

TEST_CASE("short fit writes a checkpoint that reproduces validation loss") {
  const RunConfig c = tiny_config();
  const Dataset ds = generate(c.synth, c.seed);
  const Splits s = split(ds, {0.75, 0.125, 0.125}, c.seed);
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = dir / "prom3e_fit_a.pm3c";
  const FitResult r = fit(s.train, s.val, c, path.string());
  REQUIRE(r.report.epochs.size() == 2);
  for (const auto& e : r.report.epochs) {
    CHECK(std::isfinite(e.train_total));
    CHECK(std::isfinite(e.val_total));
  }
  CHECK(r.report.steps == 2 * 3);
  CHECK(r.report.seed == 21);
  const Checkpoint ck = load_checkpoint(path.string());
  const std::uint64_t fp = ck.params.fingerprint();
  const double val = evaluate_loss(ck.params, s.val, ck.config);
  CHECK(val == r.report.best_val);
  CHECK(val == r.report.epochs[r.report.best_epoch - 1].val_total);
  CHECK(ck.params.fingerprint() == fp);

  const auto path2 = dir / "prom3e_fit_b.pm3c";
  fit(s.train, s.val, c, path2.string());
  CHECK(slurp(path) == slurp(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
  CHECK(r.report.to_text().find("best_epoch=") != std::string::npos);
}

TEST_CASE("fit rejects empty splits") {
  const RunConfig c = tiny_config();
  const Dataset ds = generate(c.synth, 1);
  CHECK_THROWS_AS(fit(ds, Dataset(ds.dims(), ds.species_count()), c), DataError);
}
