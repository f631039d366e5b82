#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "prom3e/prom3e.h"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  prom3e_string_free(s);
  return out;
}

std::string tmp(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

prom3e_config* tiny_config() {
  prom3e_config* c = nullptr;
  REQUIRE(prom3e_config_new(&c) == PROM3E_OK);
  const char* kv[][2] = {{"seed", "5"}, {"records", "60"}, {"input_dim", "8"}, {"species", "4"},
                         {"encoder_dim", "16"}, {"batch_size", "16"}, {"epochs", "2"}};
  for (auto& p : kv) REQUIRE(prom3e_config_set(c, p[0], p[1]) == PROM3E_OK);
  return c;
}

}  // namespace

TEST_CASE("status codes and messages") {
  CHECK(std::string(prom3e_status_name(PROM3E_OK)) == "ok");
  prom3e_config* c = nullptr;
  REQUIRE(prom3e_config_new(&c) == PROM3E_OK);
  CHECK(prom3e_config_set(c, "bogus", "1") == PROM3E_ERR_USAGE);
  CHECK(std::string(prom3e_last_error()).find("bogus") != std::string::npos);
  CHECK(prom3e_config_set(c, "modalities", "1") == PROM3E_OK);
  CHECK(prom3e_config_validate(c) == PROM3E_ERR_USAGE);
  prom3e_config_free(c);

  size_t idx = 99;
  CHECK(prom3e_modality_index("satellite", 6, &idx) == PROM3E_OK);
  CHECK(idx == 1);
  CHECK(prom3e_modality_index("sonar", 6, &idx) == PROM3E_ERR_USAGE);
  CHECK(prom3e_config_new(nullptr) == PROM3E_ERR_USAGE);

  prom3e_dataset* d = nullptr;
  CHECK(prom3e_dataset_read(tmp("prom3e_does_not_exist.pm3e").c_str(), &d) == PROM3E_ERR_IO);
  const std::string bad = tmp("prom3e_bad_magic.pm3e");
  std::ofstream(bad, std::ios::binary) << "XXXX0123456789abcdefghij";
  CHECK(prom3e_dataset_read(bad.c_str(), &d) == PROM3E_ERR_BAD_MAGIC);
  std::ofstream(bad, std::ios::binary) << "PM3E";
  CHECK(prom3e_dataset_read(bad.c_str(), &d) == PROM3E_ERR_TRUNCATED);
  std::filesystem::remove(bad);
  CHECK(d == nullptr);
}

TEST_CASE("dataset and model round trips through the C API") {
  prom3e_config* c = tiny_config();
  char* text = nullptr;
  REQUIRE(prom3e_config_text(c, &text) == PROM3E_OK);
  CHECK(take(text).find("records = 60") != std::string::npos);
  CHECK(prom3e_config_seed(c) == 5);

  prom3e_dataset* d = nullptr;
  REQUIRE(prom3e_dataset_generate(c, &d) == PROM3E_OK);
  CHECK(prom3e_dataset_size(d) == 60);
  CHECK(prom3e_dataset_modalities(d) == 6);
  const std::string p1 = tmp("prom3e_capi_a.pm3e"), p2 = tmp("prom3e_capi_b.pm3e");
  REQUIRE(prom3e_dataset_write(d, p1.c_str()) == PROM3E_OK);
  prom3e_dataset* back = nullptr;
  REQUIRE(prom3e_dataset_read(p1.c_str(), &back) == PROM3E_OK);
  REQUIRE(prom3e_dataset_write(back, p2.c_str()) == PROM3E_OK);
  CHECK(slurp(p1) == slurp(p2));

  prom3e_dataset *tr = nullptr, *va = nullptr, *te = nullptr;
  REQUIRE(prom3e_dataset_split(d, c, &tr, &va, &te) == PROM3E_OK);
  CHECK(prom3e_dataset_size(tr) + prom3e_dataset_size(va) + prom3e_dataset_size(te) == 60);

  prom3e_model* m = nullptr;
  char* report = nullptr;
  const std::string ck = tmp("prom3e_capi.pm3c"), ck2 = tmp("prom3e_capi2.pm3c");
  REQUIRE(prom3e_train(c, tr, va, ck.c_str(), &m, &report) == PROM3E_OK);
  CHECK(take(report).find("best_epoch=") != std::string::npos);
  REQUIRE(prom3e_model_save(m, ck2.c_str()) == PROM3E_OK);
  CHECK(slurp(ck) == slurp(ck2));
  prom3e_model* loaded = nullptr;
  REQUIRE(prom3e_model_load(ck.c_str(), &loaded) == PROM3E_OK);

  REQUIRE(prom3e_eval_retrieval(loaded, te, va, 2, 1, 0.0, &report) == PROM3E_OK);
  const std::string r = take(report);
  CHECK(r.rfind("query_mod\ttarget_mod\tdelta\tR@1\tR@5\tR@10\tgallery_size\n", 0) == 0);
  CHECK(prom3e_eval_retrieval(loaded, te, nullptr, 1, 1, 0.0, &report) == PROM3E_ERR_USAGE);

  const size_t vis[] = {0};
  REQUIRE(prom3e_eval_probe(loaded, tr, te, vis, 1, "mu_token", &report) == PROM3E_OK);
  CHECK(take(report).find("mu_token\t16\t") != std::string::npos);
  REQUIRE(prom3e_analyze_uncertainty(loaded, te, &report) == PROM3E_OK);
  CHECK(take(report).find("image+satellite+location+audio+text+env\t6\t") != std::string::npos);
  REQUIRE(prom3e_analyze_gap(loaded, te, 0, 1, &report) == PROM3E_OK);
  take(report);
  REQUIRE(prom3e_diversity_map(loaded, d, 5, 10, 1.0, &report) == PROM3E_OK);
  CHECK(take(report).find("# spearman") != std::string::npos);

  prom3e_config* mc = nullptr;
  REQUIRE(prom3e_model_config(loaded, &mc) == PROM3E_OK);
  CHECK(prom3e_config_seed(mc) == 5);

  prom3e_config_free(mc);
  prom3e_model_free(loaded);
  prom3e_model_free(m);
  for (auto* x : {d, back, tr, va, te}) prom3e_dataset_free(x);
  prom3e_config_free(c);
  for (const auto& p : {p1, p2, ck, ck2}) std::filesystem::remove(p);
}

TEST_CASE("grad check through the C API") {
  double err = 1.0;
  char* report = nullptr;
  REQUIRE(prom3e_grad_check(8, 3, 4, 7, 1e-5, &err, &report) == PROM3E_OK);
  CHECK(err < 1e-4);
  CHECK(take(report).find("max_relative_error") != std::string::npos);
  CHECK(prom3e_grad_check(8, 3, 4, 7, 0.5, &err, nullptr) == PROM3E_ERR_USAGE);
}
