#include "prom3e/prom3e.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "prom3e/analytics.hpp"
#include "prom3e/config.hpp"
#include "prom3e/error.hpp"
#include "prom3e/gradcheck.hpp"
#include "prom3e/model.hpp"
#include "prom3e/probe.hpp"
#include "prom3e/retrieval.hpp"
#include "prom3e/synthdata.hpp"
#include "prom3e/trainer.hpp"

struct prom3e_config {
  prom3e::RunConfig value;
};
struct prom3e_dataset {
  prom3e::Dataset value;
};
struct prom3e_model {
  prom3e::RunConfig config;
  prom3e::ModelParams params;
};

namespace {

thread_local std::string g_last_error;

prom3e_status fail(prom3e_status s, const char* what) {
  g_last_error = what;
  return s;
}

// Runs `fn`, translating exceptions into status codes.
template <class F>
prom3e_status guarded(F&& fn) noexcept {
  try {
    g_last_error.clear();
    fn();
    return PROM3E_OK;
  } catch (const prom3e::BadMagicError& e) {
    return fail(PROM3E_ERR_BAD_MAGIC, e.what());
  } catch (const prom3e::VersionError& e) {
    return fail(PROM3E_ERR_BAD_VERSION, e.what());
  } catch (const prom3e::TruncatedError& e) {
    return fail(PROM3E_ERR_TRUNCATED, e.what());
  } catch (const prom3e::ShapeError& e) {
    return fail(PROM3E_ERR_SHAPE, e.what());
  } catch (const prom3e::Error& e) {
    switch (e.kind()) {
      case prom3e::ErrorKind::usage: return fail(PROM3E_ERR_USAGE, e.what());
      case prom3e::ErrorKind::data: return fail(PROM3E_ERR_DATA, e.what());
      case prom3e::ErrorKind::numeric: return fail(PROM3E_ERR_NUMERIC, e.what());
      case prom3e::ErrorKind::io: return fail(PROM3E_ERR_IO, e.what());
    }
    return fail(PROM3E_ERR_INTERNAL, e.what());
  } catch (const std::bad_alloc&) {
    return fail(PROM3E_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PROM3E_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PROM3E_ERR_INTERNAL, "unknown exception");
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) throw prom3e::UsageError(std::string(what) + " is NULL");
}

char* dup(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void give(char** out, const std::string& s) {
  if (out != nullptr) *out = dup(s);
}

}  // namespace

extern "C" {

const char* prom3e_last_error(void) { return g_last_error.c_str(); }

const char* prom3e_status_name(prom3e_status s) {
  switch (s) {
    case PROM3E_OK: return "ok";
    case PROM3E_ERR_USAGE: return "usage error";
    case PROM3E_ERR_DATA: return "data error";
    case PROM3E_ERR_NUMERIC: return "numerical failure";
    case PROM3E_ERR_IO: return "i/o error";
    case PROM3E_ERR_BAD_MAGIC: return "bad magic";
    case PROM3E_ERR_BAD_VERSION: return "unsupported version";
    case PROM3E_ERR_TRUNCATED: return "truncated file";
    case PROM3E_ERR_SHAPE: return "shape mismatch";
    case PROM3E_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void prom3e_string_free(char* s) { delete[] s; }

prom3e_status prom3e_modality_index(const char* name, size_t modality_count, size_t* out) {
  return guarded([&] {
    need(name, "name");
    need(out, "out");
    *out = prom3e::parse_modality(name, modality_count);
  });
}

prom3e_status prom3e_config_new(prom3e_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new prom3e_config{};
  });
}

void prom3e_config_free(prom3e_config* c) { delete c; }

prom3e_status prom3e_config_set(prom3e_config* c, const char* key, const char* value) {
  return guarded([&] {
    need(c, "config");
    need(key, "key");
    need(value, "value");
    c->value.set(key, value);
  });
}

prom3e_status prom3e_config_load(prom3e_config* c, const char* path) {
  return guarded([&] {
    need(c, "config");
    need(path, "path");
    c->value.load_file(path);
  });
}

prom3e_status prom3e_config_validate(const prom3e_config* c) {
  return guarded([&] {
    need(c, "config");
    c->value.validate();
  });
}

prom3e_status prom3e_config_text(const prom3e_config* c, char** out) {
  return guarded([&] {
    need(c, "config");
    need(out, "out");
    give(out, c->value.to_text());
  });
}

uint64_t prom3e_config_seed(const prom3e_config* c) { return c == nullptr ? 0 : c->value.seed; }

prom3e_status prom3e_dataset_generate(const prom3e_config* c, prom3e_dataset** out) {
  return guarded([&] {
    need(c, "config");
    need(out, "out");
    c->value.validate();
    *out = new prom3e_dataset{prom3e::generate(c->value.synth, c->value.seed)};
  });
}

prom3e_status prom3e_dataset_read(const char* path, prom3e_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new prom3e_dataset{prom3e::read_dataset(path)};
  });
}

prom3e_status prom3e_dataset_write(const prom3e_dataset* d, const char* path) {
  return guarded([&] {
    need(d, "dataset");
    need(path, "path");
    prom3e::write_dataset(d->value, path);
  });
}

void prom3e_dataset_free(prom3e_dataset* d) { delete d; }
size_t prom3e_dataset_size(const prom3e_dataset* d) { return d == nullptr ? 0 : d->value.size(); }
size_t prom3e_dataset_modalities(const prom3e_dataset* d) { return d == nullptr ? 0 : d->value.modality_count(); }

prom3e_status prom3e_dataset_split(const prom3e_dataset* d, const prom3e_config* c, prom3e_dataset** train,
                                   prom3e_dataset** val, prom3e_dataset** test) {
  return guarded([&] {
    need(d, "dataset");
    need(c, "config");
    need(train, "train");
    need(val, "val");
    need(test, "test");
    const auto& s = c->value.split;
    prom3e::Splits parts = prom3e::split(d->value, {s.train, s.val, s.test}, c->value.seed);
    auto* tr = new prom3e_dataset{std::move(parts.train)};
    auto* va = new prom3e_dataset{std::move(parts.val)};
    *test = new prom3e_dataset{std::move(parts.test)};
    *train = tr;
    *val = va;
  });
}

prom3e_status prom3e_train(const prom3e_config* c, const prom3e_dataset* train, const prom3e_dataset* val,
                           const char* checkpoint_path, prom3e_model** out, char** report) {
  return guarded([&] {
    need(c, "config");
    need(train, "train");
    need(val, "val");
    prom3e::FitResult r =
        prom3e::fit(train->value, val->value, c->value, checkpoint_path == nullptr ? std::string{} : checkpoint_path);
    give(report, r.report.to_text());
    if (out != nullptr) *out = new prom3e_model{std::move(r.config), std::move(r.best)};
  });
}

prom3e_status prom3e_model_load(const char* path, prom3e_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    prom3e::Checkpoint ck = prom3e::load_checkpoint(path);
    *out = new prom3e_model{std::move(ck.config), std::move(ck.params)};
  });
}

prom3e_status prom3e_model_save(const prom3e_model* m, const char* path) {
  return guarded([&] {
    need(m, "model");
    need(path, "path");
    prom3e::save_checkpoint(path, m->config, m->params);
  });
}

void prom3e_model_free(prom3e_model* m) { delete m; }

prom3e_status prom3e_model_config(const prom3e_model* m, prom3e_config** out) {
  return guarded([&] {
    need(m, "model");
    need(out, "out");
    *out = new prom3e_config{m->config};
  });
}

prom3e_status prom3e_eval_retrieval(const prom3e_model* m, const prom3e_dataset* eval, const prom3e_dataset* tune_set,
                                    size_t query, size_t target, double delta, char** report) {
  return guarded([&] {
    need(m, "model");
    need(eval, "dataset");
    prom3e::RetrievalConfig rc;
    rc.query = query;
    rc.target = target;
    rc.delta = tune_set != nullptr ? 0.0 : delta;
    rc.validate(m->params.shape().modality_count());
    if (tune_set != nullptr) rc.delta = prom3e::tune_delta(m->params, tune_set->value, rc).best_delta;
    const prom3e::RetrievalResult r = prom3e::evaluate_retrieval(m->params, eval->value, rc);
    give(report, std::string(prom3e::kRetrievalHeader) + "\n" + prom3e::retrieval_row(rc, r) + "\n");
  });
}

prom3e_status prom3e_eval_probe(const prom3e_model* m, const prom3e_dataset* train, const prom3e_dataset* test,
                                const size_t* visible, size_t visible_count, const char* kind, char** report) {
  return guarded([&] {
    need(m, "model");
    need(train, "train");
    need(test, "test");
    if (visible_count == 0) throw prom3e::UsageError("probe needs at least one visible modality");
    need(visible, "visible");
    std::vector<prom3e::ModalityId> vis(visible, visible + visible_count);
    std::vector<prom3e::FeatureKind> kinds;
    if (kind == nullptr) {
      kinds.assign(std::begin(prom3e::kFeatureKinds), std::end(prom3e::kFeatureKinds));
    } else {
      kinds.push_back(prom3e::parse_feature_kind(kind));
    }
    give(report, prom3e::run_probe(m->params, train->value, test->value, vis, kinds).to_text());
  });
}

prom3e_status prom3e_analyze_uncertainty(const prom3e_model* m, const prom3e_dataset* d, char** report) {
  return guarded([&] {
    need(m, "model");
    need(d, "dataset");
    std::vector<std::vector<prom3e::ModalityId>> sets;
    for (const auto& vs : prom3e::progressive_sets(m->params.shape().modality_count())) sets.push_back(vs.visible);
    give(report, prom3e::uncertainty_sweep(m->params, d->value, sets).to_text());
  });
}

prom3e_status prom3e_analyze_gap(const prom3e_model* m, const prom3e_dataset* d, size_t a, size_t b, char** report) {
  return guarded([&] {
    need(m, "model");
    need(d, "dataset");
    const auto contexts = prom3e::growing_contexts(m->params.shape().modality_count(), a, b);
    give(report, prom3e::gap_sweep(m->params, d->value, a, b, contexts).to_text());
  });
}

prom3e_status prom3e_diversity_map(const prom3e_model* m, const prom3e_dataset* d, size_t rows, size_t cols,
                                   double smoothing, char** report) {
  return guarded([&] {
    need(m, "model");
    need(d, "dataset");
    const auto& sc = m->config.synth;
    prom3e::GridSpec spec{rows, cols, sc.lat_min, sc.lat_max, sc.lon_min, sc.lon_max, smoothing};
    const std::vector<double> sig = prom3e::location_sigma(m->params, d->value);
    const prom3e::DiversityGrid grid = prom3e::build_diversity_grid(d->value, spec, sig);
    std::string text = grid.to_text();
    const prom3e::Correlation c = prom3e::grid_correlation(grid, grid.sigma, grid.shannon);
    char buf[128];
    std::snprintf(buf, sizeof buf, "# spearman(sigma_l1, shannon)=%.6f p_value=%.6g\n", c.rho, c.p_value);
    give(report, text + buf);
  });
}

prom3e_status prom3e_grad_check(size_t dim, size_t modalities, size_t records, uint64_t seed, double step,
                                double* max_error, char** report) {
  return guarded([&] {
    const prom3e::GradCheckSetup s = prom3e::make_grad_check_setup(dim, modalities, records, seed);
    const prom3e::GradCheckResult r = prom3e::grad_check(s.params, s.batch, s.visible, s.loss, step, seed);
    if (max_error != nullptr) *max_error = r.max_relative_error;
    char buf[256];
    std::snprintf(buf, sizeof buf, "max_relative_error\t%.6e\nchecked\t%zu\nworst_param\t%zu (%s)\n",
                  r.max_relative_error, r.checked, r.worst_param, s.params.params()[r.worst_param].name.c_str());
    give(report, buf);
  });
}

}  // extern "C"
