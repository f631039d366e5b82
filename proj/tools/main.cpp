// prom3e command-line front end. Everything goes through the C interface.
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prom3e/prom3e.h"

namespace {

// Exit codes: 0 ok, 1 usage, 2 data / io, 3 numerical failure.
int exit_code(prom3e_status s) {
  switch (s) {
    case PROM3E_OK: return 0;
    case PROM3E_ERR_USAGE: return 1;
    case PROM3E_ERR_NUMERIC: return 3;
    default: return 2;
  }
}

struct Failure {
  prom3e_status status;
};

void check(prom3e_status s) {
  if (s != PROM3E_OK) throw Failure{s};
}

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<prom3e_config, Deleter<prom3e_config, prom3e_config_free>>;
using DatasetPtr = std::unique_ptr<prom3e_dataset, Deleter<prom3e_dataset, prom3e_dataset_free>>;
using Model = std::unique_ptr<prom3e_model, Deleter<prom3e_model, prom3e_model_free>>;

std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  prom3e_string_free(s);
  return out;
}

// Options shared by every command that resolves a run configuration.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;  // key=value
  std::vector<std::pair<std::string, std::string>> flag_keys;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "config file (key = value lines)");
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_option("--set", c.sets, "override any config key, KEY=VALUE (repeatable)");
}

// flags > config file > defaults (or > the checkpoint's config for eval commands)
Config resolve(const Common& c, Config base = nullptr) {
  prom3e_config* raw = nullptr;
  if (base) {
    raw = base.release();
  } else {
    check(prom3e_config_new(&raw));
  }
  Config cfg(raw);
  if (!c.config_path.empty()) check(prom3e_config_load(cfg.get(), c.config_path.c_str()));
  for (const auto& [k, v] : c.flag_keys) check(prom3e_config_set(cfg.get(), k.c_str(), v.c_str()));
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "--set expects KEY=VALUE, got '" << kv << "'\n";
      throw Failure{PROM3E_ERR_USAGE};
    }
    check(prom3e_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  if (c.seed) check(prom3e_config_set(cfg.get(), "seed", std::to_string(*c.seed).c_str()));
  check(prom3e_config_validate(cfg.get()));
  return cfg;
}

void echo(const char* command, const prom3e_config* cfg) {
  char* text = nullptr;
  check(prom3e_config_text(cfg, &text));
  std::istringstream in(take(text));
  std::cout << "# command " << command << "\n";
  for (std::string line; std::getline(in, line);) std::cout << "# " << line << "\n";
}

DatasetPtr read_data(const std::string& path) {
  prom3e_dataset* d = nullptr;
  check(prom3e_dataset_read(path.c_str(), &d));
  return DatasetPtr(d);
}

struct Parts {
  DatasetPtr train, val, test;
};

Parts split(const prom3e_dataset* d, const prom3e_config* cfg) {
  prom3e_dataset *tr = nullptr, *va = nullptr, *te = nullptr;
  check(prom3e_dataset_split(d, cfg, &tr, &va, &te));
  return {DatasetPtr(tr), DatasetPtr(va), DatasetPtr(te)};
}

Model load_model(const std::string& path) {
  prom3e_model* m = nullptr;
  check(prom3e_model_load(path.c_str(), &m));
  return Model(m);
}

Config model_config(const prom3e_model* m) {
  prom3e_config* c = nullptr;
  check(prom3e_model_config(m, &c));
  return Config(c);
}

std::size_t modality(const std::string& name, std::size_t count) {
  std::size_t idx = 0;
  check(prom3e_modality_index(name.c_str(), count, &idx));
  return idx;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prom3e: probabilistic masked multimodal embeddings"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "help for every command");

  // gen-data
  Common gen;
  std::string gen_out;
  std::optional<std::size_t> gen_records, gen_species, gen_modalities, gen_dim;
  bool gen_gradient = false;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic aligned-embedding dataset");
  add_common(gen_cmd, gen);
  gen_cmd->add_option("--out", gen_out, "output dataset path")->required();
  gen_cmd->add_option("--records", gen_records, "record count");
  gen_cmd->add_option("--species", gen_species, "species count");
  gen_cmd->add_option("--modalities", gen_modalities, "modality count");
  gen_cmd->add_option("--dim", gen_dim, "embedding dim per modality");
  gen_cmd->add_flag("--diversity-gradient", gen_gradient, "species entropy rises with longitude");

  // train
  Common tr;
  std::string tr_data, tr_out = "checkpoint.pm3c";
  auto* tr_cmd = app.add_subcommand("train", "train a model; writes the best-validation checkpoint");
  add_common(tr_cmd, tr);
  tr_cmd->add_option("--data", tr_data, "dataset path (generated from the config when omitted)");
  tr_cmd->add_option("--out", tr_out, "checkpoint path")->capture_default_str();

  // eval-retrieval
  Common er;
  std::string er_ckpt, er_data, er_query = "location", er_target = "satellite";
  double er_delta = 0.0;
  bool er_tune = false;
  auto* er_cmd = app.add_subcommand("eval-retrieval", "cross-modal recall@k on the test split");
  add_common(er_cmd, er);
  er_cmd->add_option("--checkpoint", er_ckpt, "checkpoint path")->required();
  er_cmd->add_option("--data", er_data, "dataset path")->required();
  er_cmd->add_option("--query", er_query, "query modality")->capture_default_str();
  er_cmd->add_option("--target", er_target, "target modality")->capture_default_str();
  auto* delta_opt = er_cmd->add_option("--delta", er_delta, "mixing coefficient in [0,1]");
  er_cmd->add_flag("--tune-delta", er_tune, "pick delta on the validation split")->excludes(delta_opt);

  // eval-probe
  Common ep;
  std::string ep_ckpt, ep_data, ep_visible = "image", ep_kind;
  auto* ep_cmd = app.add_subcommand("eval-probe", "linear species probe on hidden representations");
  add_common(ep_cmd, ep);
  ep_cmd->add_option("--checkpoint", ep_ckpt, "checkpoint path")->required();
  ep_cmd->add_option("--data", ep_data, "dataset path")->required();
  ep_cmd->add_option("--visible", ep_visible, "visible modalities, MOD[,MOD]")->capture_default_str();
  ep_cmd->add_option("--feature-kind", ep_kind,
                     "reconstructed | mu_token | modality_tokens | register_tokens | all_hidden (default: all)");

  // analyze-uncertainty
  Common au;
  std::string au_ckpt, au_data;
  auto* au_cmd = app.add_subcommand("analyze-uncertainty", "||sigma||_1 and reconstruction error as modalities are added");
  add_common(au_cmd, au);
  au_cmd->add_option("--checkpoint", au_ckpt, "checkpoint path")->required();
  au_cmd->add_option("--data", au_data, "dataset path")->required();

  // analyze-gap
  Common ag;
  std::string ag_ckpt, ag_data, ag_pair = "image,satellite";
  auto* ag_cmd = app.add_subcommand("analyze-gap", "centroid gap between two modalities at each stage");
  add_common(ag_cmd, ag);
  ag_cmd->add_option("--checkpoint", ag_ckpt, "checkpoint path")->required();
  ag_cmd->add_option("--data", ag_data, "dataset path")->required();
  ag_cmd->add_option("--visible", ag_pair, "modality pair, MOD,MOD")->capture_default_str();

  // diversity-map
  Common dm;
  std::string dm_ckpt, dm_data, dm_grid = "25x50";
  double dm_smoothing = 2.0;
  auto* dm_cmd = app.add_subcommand("diversity-map", "per-cell Shannon index, richness and location ||sigma||_1");
  add_common(dm_cmd, dm);
  dm_cmd->add_option("--checkpoint", dm_ckpt, "checkpoint path")->required();
  dm_cmd->add_option("--data", dm_data, "dataset path")->required();
  dm_cmd->add_option("--grid", dm_grid, "ROWSxCOLS")->capture_default_str();
  dm_cmd->add_option("--smoothing", dm_smoothing, "Gaussian kernel sigma in cells")->capture_default_str();

  // grad-check
  std::size_t gc_dim = 8, gc_modalities = 3, gc_records = 4;
  std::uint64_t gc_seed = 7;
  double gc_step = 1e-5;
  auto* gc_cmd = app.add_subcommand("grad-check", "analytic vs central-difference gradients on a small model");
  gc_cmd->add_option("--dim", gc_dim, "embedding and encoder dim")->capture_default_str();
  gc_cmd->add_option("--modalities", gc_modalities, "modality count")->capture_default_str();
  gc_cmd->add_option("--records", gc_records, "batch size")->capture_default_str();
  gc_cmd->add_option("--seed", gc_seed, "seed")->capture_default_str();
  gc_cmd->add_option("--step", gc_step, "finite-difference step")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen_cmd->parsed()) {
      if (gen_records) gen.flag_keys.emplace_back("records", std::to_string(*gen_records));
      if (gen_species) gen.flag_keys.emplace_back("species", std::to_string(*gen_species));
      if (gen_modalities) gen.flag_keys.emplace_back("modalities", std::to_string(*gen_modalities));
      if (gen_dim) gen.flag_keys.emplace_back("input_dim", std::to_string(*gen_dim));
      if (gen_gradient) gen.flag_keys.emplace_back("diversity_gradient", "true");
      Config cfg = resolve(gen);
      echo("gen-data", cfg.get());
      prom3e_dataset* d = nullptr;
      check(prom3e_dataset_generate(cfg.get(), &d));
      DatasetPtr data(d);
      check(prom3e_dataset_write(data.get(), gen_out.c_str()));
      std::cout << "records\t" << prom3e_dataset_size(data.get()) << "\nmodalities\t"
                << prom3e_dataset_modalities(data.get()) << "\nwritten\t" << gen_out << "\n";
    } else if (tr_cmd->parsed()) {
      Config cfg = resolve(tr);
      DatasetPtr data;
      if (tr_data.empty()) {
        prom3e_dataset* d = nullptr;
        check(prom3e_dataset_generate(cfg.get(), &d));
        data.reset(d);
      } else {
        data = read_data(tr_data);
      }
      echo("train", cfg.get());
      Parts parts = split(data.get(), cfg.get());
      char* report = nullptr;
      check(prom3e_train(cfg.get(), parts.train.get(), parts.val.get(), tr_out.c_str(), nullptr, &report));
      std::cout << take(report);
    } else if (er_cmd->parsed()) {
      Model m = load_model(er_ckpt);
      Config cfg = resolve(er, model_config(m.get()));
      echo("eval-retrieval", cfg.get());
      DatasetPtr data = read_data(er_data);
      Parts parts = split(data.get(), cfg.get());
      const std::size_t n = prom3e_dataset_modalities(data.get());
      char* report = nullptr;
      check(prom3e_eval_retrieval(m.get(), parts.test.get(), er_tune ? parts.val.get() : nullptr,
                                  modality(er_query, n), modality(er_target, n), er_delta, &report));
      std::cout << take(report);
    } else if (ep_cmd->parsed()) {
      Model m = load_model(ep_ckpt);
      Config cfg = resolve(ep, model_config(m.get()));
      echo("eval-probe", cfg.get());
      DatasetPtr data = read_data(ep_data);
      Parts parts = split(data.get(), cfg.get());
      const std::size_t n = prom3e_dataset_modalities(data.get());
      std::vector<std::size_t> visible;
      for (const auto& name : split_list(ep_visible)) visible.push_back(modality(name, n));
      char* report = nullptr;
      check(prom3e_eval_probe(m.get(), parts.train.get(), parts.test.get(), visible.data(), visible.size(),
                              ep_kind.empty() ? nullptr : ep_kind.c_str(), &report));
      std::cout << take(report);
    } else if (au_cmd->parsed()) {
      Model m = load_model(au_ckpt);
      Config cfg = resolve(au, model_config(m.get()));
      echo("analyze-uncertainty", cfg.get());
      DatasetPtr data = read_data(au_data);
      Parts parts = split(data.get(), cfg.get());
      char* report = nullptr;
      check(prom3e_analyze_uncertainty(m.get(), parts.test.get(), &report));
      std::cout << take(report);
    } else if (ag_cmd->parsed()) {
      Model m = load_model(ag_ckpt);
      Config cfg = resolve(ag, model_config(m.get()));
      echo("analyze-gap", cfg.get());
      DatasetPtr data = read_data(ag_data);
      Parts parts = split(data.get(), cfg.get());
      const std::size_t n = prom3e_dataset_modalities(data.get());
      const auto pair = split_list(ag_pair);
      if (pair.size() != 2) {
        std::cerr << "--visible for analyze-gap takes exactly two modalities\n";
        return 1;
      }
      char* report = nullptr;
      check(prom3e_analyze_gap(m.get(), parts.test.get(), modality(pair[0], n), modality(pair[1], n), &report));
      std::cout << take(report);
    } else if (dm_cmd->parsed()) {
      Model m = load_model(dm_ckpt);
      Config cfg = resolve(dm, model_config(m.get()));
      echo("diversity-map", cfg.get());
      std::size_t rows = 0, cols = 0;
      char x = 0;
      std::istringstream g(dm_grid);
      if (!(g >> rows >> x >> cols) || (x != 'x' && x != 'X') || !g.eof()) {
        std::cerr << "--grid expects ROWSxCOLS, got '" << dm_grid << "'\n";
        return 1;
      }
      DatasetPtr data = read_data(dm_data);
      char* report = nullptr;
      check(prom3e_diversity_map(m.get(), data.get(), rows, cols, dm_smoothing, &report));
      std::cout << take(report);
    } else if (gc_cmd->parsed()) {
      std::cout << "# command grad-check\n# dim = " << gc_dim << "\n# modalities = " << gc_modalities
                << "\n# records = " << gc_records << "\n# seed = " << gc_seed << "\n# step = " << gc_step << "\n";
      double err = 0.0;
      char* report = nullptr;
      check(prom3e_grad_check(gc_dim, gc_modalities, gc_records, gc_seed, gc_step, &err, &report));
      std::cout << take(report);
      if (!(err < 1e-4)) {
        std::cerr << "gradient check failed: max relative error " << err << " >= 1e-4\n";
        return 3;
      }
    }
  } catch (const Failure& f) {
    const char* msg = prom3e_last_error();
    std::cerr << "error (" << prom3e_status_name(f.status) << "): " << (msg && *msg ? msg : "see above") << "\n";
    return exit_code(f.status);
  }
  return 0;
}
