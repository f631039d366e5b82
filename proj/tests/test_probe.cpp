#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "prom3e/error.hpp"
#include "prom3e/probe.hpp"
#include "prom3e/trainer.hpp"

using namespace prom3e;
using namespace testing;

namespace {

std::vector<std::uint32_t> random_labels(std::size_t n, std::uint32_t classes, Rng& rng) {
  std::vector<std::uint32_t> y(n);
  for (auto& v : y) v = std::uniform_int_distribution<std::uint32_t>(0, classes - 1)(rng);
  return y;
}

}  // namespace

TEST_CASE("feature widths per kind") {
  const ModelParams p = small_model(6, 8, 16, 4, 1);
  const Batch b = random_batch(6, 3, 8, 1);
  const std::size_t E = 16;
  const std::vector<ModalityId> one{2}, two{0, 2};
  struct Want {
    FeatureKind kind;
    std::size_t one, two;
  } wants[] = {{FeatureKind::reconstructed, 6 * 8, 6 * 8},
               {FeatureKind::mu_token, E, E},
               {FeatureKind::modality_tokens, E, 2 * E},
               {FeatureKind::register_tokens, 4 * E, 4 * E},
               {FeatureKind::all_hidden, 7 * E, 8 * E}};
  for (const auto& w : wants) {
    const Tensor f1 = extract_features(p, b, one, w.kind);
    const Tensor f2 = extract_features(p, b, two, w.kind);
    CHECK(f1.cols() == w.one);
    CHECK(f2.cols() == w.two);
    CHECK(f1.rows() == 3);
    CHECK(feature_dim(p.shape(), VisibleSet::with_targets(one, 6, false), w.kind) == w.one);
    CHECK(f1 == extract_features(p, b, one, w.kind));
  }
  // all_hidden starts with the [mu] token
  const Tensor mu = extract_features(p, b, one, FeatureKind::mu_token);
  const Tensor all = extract_features(p, b, one, FeatureKind::all_hidden);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < E; ++c) CHECK(all(r, c) == mu(r, c));
  CHECK(parse_feature_kind("all_hidden") == FeatureKind::all_hidden);
  CHECK_THROWS_AS(parse_feature_kind("everything"), UsageError);
}

TEST_CASE("features ignore masked modalities") {
  const ModelParams p = small_model(6, 8, 16, 4, 2);
  const Batch b = random_batch(6, 4, 8, 3);
  Batch other = b;
  Rng rng = stream(2, "perturb");
  other.inputs[5] = random_tensor(4, 8, rng);
  for (FeatureKind k : kFeatureKinds) CHECK(extract_features(p, b, {0, 1}, k) == extract_features(p, other, {0, 1}, k));
}

TEST_CASE("separable clusters are learned perfectly") {
  Rng rng = stream(3, "clusters");
  Tensor x(200, 4);
  std::vector<std::uint32_t> y(200);
  for (std::size_t i = 0; i < 200; ++i) {
    y[i] = i % 2;
    for (std::size_t c = 0; c < 4; ++c) x(i, c) = 0.3 * normal(rng) + (c == 0 ? (y[i] ? 3.0 : -3.0) : 0.0);
  }
  const LinearProbe probe = train_linear_probe(x, y);
  CHECK(evaluate_probe(probe, x, y) == 1.0);
  CHECK(probe.classes == 2);
}

TEST_CASE("shuffled labels sit at chance") {
  Rng rng = stream(4, "chance");
  const Tensor xtr = random_tensor(1000, 16, rng), xte = random_tensor(2000, 16, rng);
  const auto ytr = random_labels(1000, 10, rng), yte = random_labels(2000, 10, rng);
  const LinearProbe probe = train_linear_probe(xtr, ytr, {}, 10);
  CHECK(std::abs(evaluate_probe(probe, xte, yte) - 0.1) <= 0.03);
}

TEST_CASE("zero features fall back to the majority class") {
  Tensor x(100, 5, 0.0);
  std::vector<std::uint32_t> y(100);
  for (std::size_t i = 0; i < 100; ++i) y[i] = i < 55 ? 2 : (i < 85 ? 0 : 1);
  const LinearProbe probe = train_linear_probe(x, y);
  CHECK(evaluate_probe(probe, x, y) == doctest::Approx(0.55).epsilon(1e-15));
  const auto pred = probe.predict(x);
  CHECK(std::all_of(pred.begin(), pred.end(), [](std::size_t c) { return c == 2; }));
}

TEST_CASE("random weights are at chance on balanced classes") {
  Rng rng = stream(5, "rw");
  LinearProbe probe;
  probe.classes = 5;
  probe.mean.assign(8, 0.0);
  probe.scale.assign(8, 1.0);
  probe.weights = random_tensor(8, 5, rng);
  probe.bias = Tensor(1, 5, 0.0);
  const Tensor x = random_tensor(1000, 8, rng);
  std::vector<std::uint32_t> y(1000);
  for (std::size_t i = 0; i < 1000; ++i) y[i] = static_cast<std::uint32_t>(i % 5);
  CHECK(std::abs(evaluate_probe(probe, x, y) - 0.2) <= 0.05);
  // a probe that outputs the label exactly
  LinearProbe exact = probe;
  exact.weights = Tensor(8, 5, 0.0);
  Tensor onehot(1000, 8, 0.0);
  for (std::size_t i = 0; i < 1000; ++i) onehot(i, y[i]) = 1.0;
  for (std::size_t c = 0; c < 5; ++c) exact.weights(c, c) = 1.0;
  CHECK(evaluate_probe(exact, onehot, y) == 1.0);
}

TEST_CASE("argmax ties go to the lowest class") {
  LinearProbe probe;
  probe.classes = 3;
  probe.mean.assign(1, 0.0);
  probe.scale.assign(1, 1.0);
  probe.weights = Tensor(1, 3, 0.0);
  probe.bias = Tensor::row({0.5, 1.0, 1.0});
  CHECK(probe.predict(Tensor(2, 1, 7.0)) == std::vector<std::size_t>{1, 1});
}

TEST_CASE("training is deterministic and consistent under relabeling") {
  Rng rng = stream(6, "det");
  Tensor x = random_tensor(300, 6, rng);
  std::vector<std::uint32_t> y(300);
  for (std::size_t i = 0; i < 300; ++i) {
    y[i] = static_cast<std::uint32_t>(i % 4);
    x(i, y[i]) += 1.5;
  }
  const LinearProbe a = train_linear_probe(x, y);
  const LinearProbe b = train_linear_probe(x, y);
  CHECK(a.weights == b.weights);
  CHECK(a.bias == b.bias);

  const std::uint32_t perm[4] = {2, 0, 3, 1};
  std::vector<std::uint32_t> yp(300);
  for (std::size_t i = 0; i < 300; ++i) yp[i] = perm[y[i]];
  const LinearProbe c = train_linear_probe(x, yp);
  CHECK(evaluate_probe(c, x, yp) == evaluate_probe(a, x, y));
  const auto pa = a.predict(x), pc = c.predict(x);
  for (std::size_t i = 0; i < 300; ++i) CHECK(pc[i] == perm[pa[i]]);
}

TEST_CASE("probe input validation") {
  Tensor x(10, 2, 1.0);
  CHECK_THROWS_AS(train_linear_probe(x, std::vector<std::uint32_t>(10, 0)), DataError);
  CHECK_THROWS(train_linear_probe(x, std::vector<std::uint32_t>(9, 1)));
}

TEST_CASE("probe report on a small model") {
  RunConfig c;
  c.synth.records = 100;
  c.synth.species_count = 5;
  c.synth.input_dim = 8;
  const Dataset ds = generate(c.synth, 1);
  const Splits s = split(ds, {0.6, 0.2, 0.2}, 1);
  const ModelParams p = small_model(6, 8, 16, 4, 1);
  const ProbeReport rep = run_probe(p, s.train, s.test, {0}, {FeatureKind::mu_token, FeatureKind::all_hidden});
  CHECK(rep.rows.size() == 2);
  CHECK(rep.classes == 5);
  for (const auto& r : rep.rows) CHECK((r.top1 >= 0.0 && r.top1 <= 1.0));
  CHECK(rep.to_text().find("all_hidden\t112\t") != std::string::npos);
}
