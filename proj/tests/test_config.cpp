#include <string>

#include "doctest.h"
#include "prom3e/config.hpp"
#include "prom3e/error.hpp"

using namespace prom3e;

TEST_CASE("config text round trip reproduces every key") {
  RunConfig c;
  c.seed = 123456789012345ULL;
  c.synth.noise_std = {0.1, 0.25, 1.0 / 3.0};
  c.loss.lambda = 0.1 + 0.2;
  c.loss.kind = LossKind::mse;
  c.model.activation = Activation::identity;
  c.train.learning_rate = 3.0e-4;
  c.split = {0.7, 0.2, 0.1};
  const std::string text = c.to_text();
  RunConfig back;
  back.apply_text(text);
  CHECK(back.to_text() == text);
  CHECK(back.loss.lambda == c.loss.lambda);
  CHECK(back.synth.noise_std == c.synth.noise_std);
  CHECK(back.seed == c.seed);
  for (const auto& k : RunConfig::keys()) CHECK(text.find(k + " = ") != std::string::npos);
}

TEST_CASE("config rejects unknown keys and malformed values") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("no_such_key", "1"), UsageError);
  CHECK_THROWS_AS(c.set("epochs", "-3"), UsageError);
  CHECK_THROWS_AS(c.set("lambda", "abc"), UsageError);
  CHECK_THROWS_AS(c.set("loss", "hinge"), UsageError);
  CHECK_THROWS_AS(c.apply_text("epochs 3\n"), UsageError);
  c.apply_text("# comment\n\nepochs = 7  # trailing\n");
  CHECK(c.train.epochs == 7);
}

TEST_CASE("validate catches bad combinations") {
  RunConfig c;
  c.validate();
  c.synth.modality_count = 1;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = RunConfig{};
  c.loss.alpha_init = 1.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = RunConfig{};
  c.split = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("modality names") {
  CHECK(parse_modality("location", 6) == 2);
  CHECK(parse_modality("4", 6) == 4);
  CHECK(modality_name(5) == "env");
  CHECK_THROWS_AS(parse_modality("env", 3), UsageError);
  CHECK_THROWS_AS(parse_modality("sonar", 6), UsageError);
}
