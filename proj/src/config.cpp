#include "prom3e/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "prom3e/error.hpp"

namespace prom3e {

namespace {

constexpr double kRoleNoise[] = {0.15, 0.20, 0.10, 0.35, 0.05, 0.15};
constexpr double kRoleLocationMix[] = {0.0, 0.5, 0.6, 0.0, 0.0, 0.4};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view key, std::string_view v) {
  v = trim(v);
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw UsageError("config key '" + std::string(key) + "': not a number: '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  v = trim(v);
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw UsageError("config key '" + std::string(key) + "': not an unsigned integer: '" +
                     std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw UsageError("config key '" + std::string(key) + "': not a boolean: '" + std::string(v) + "'");
}

std::vector<double> parse_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  v = trim(v);
  if (v.empty() || v == "default") return out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    out.push_back(parse_double(key, v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string fmt_list(const std::vector<double>& xs) {
  if (xs.empty()) return "default";
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) s += ',';
    s += fmt_double(xs[i]);
  }
  return s;
}

struct KeySpec {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PM3E_SIZE(key, field)                                                            \
  KeySpec{key, [](RunConfig& c, std::string_view v) { c.field = parse_u64(key, v); },    \
          [](const RunConfig& c) { return std::to_string(c.field); }}
#define PM3E_U64(key, field) PM3E_SIZE(key, field)
#define PM3E_DOUBLE(key, field)                                                          \
  KeySpec{key, [](RunConfig& c, std::string_view v) { c.field = parse_double(key, v); }, \
          [](const RunConfig& c) { return fmt_double(c.field); }}
#define PM3E_BOOL(key, field)                                                            \
  KeySpec{key, [](RunConfig& c, std::string_view v) { c.field = parse_bool(key, v); },   \
          [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }}
#define PM3E_LIST(key, field)                                                            \
  KeySpec{key, [](RunConfig& c, std::string_view v) { c.field = parse_list(key, v); },   \
          [](const RunConfig& c) { return fmt_list(c.field); }}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      PM3E_U64("seed", seed),
      // synthetic data
      PM3E_SIZE("modalities", synth.modality_count),
      PM3E_SIZE("input_dim", synth.input_dim),
      PM3E_SIZE("species", synth.species_count),
      PM3E_SIZE("records", synth.records),
      PM3E_SIZE("latent_dim", synth.latent_dim),
      PM3E_LIST("noise_std", synth.noise_std),
      PM3E_LIST("location_mix", synth.location_mix),
      PM3E_DOUBLE("modality_offset", synth.modality_offset),
      PM3E_DOUBLE("map_divergence", synth.map_divergence),
      PM3E_DOUBLE("location_frequency", synth.location_frequency),
      PM3E_U64("map_seed", synth.map_seed),
      PM3E_BOOL("diversity_gradient", synth.diversity_gradient),
      PM3E_DOUBLE("lat_min", synth.lat_min),
      PM3E_DOUBLE("lat_max", synth.lat_max),
      PM3E_DOUBLE("lon_min", synth.lon_min),
      PM3E_DOUBLE("lon_max", synth.lon_max),
      // model
      PM3E_SIZE("encoder_dim", model.encoder_dim),
      PM3E_SIZE("depth", model.depth),
      PM3E_SIZE("registers", model.registers),
      PM3E_SIZE("ff_mult", model.ff_mult),
      KeySpec{"activation",
              [](RunConfig& c, std::string_view v) {
                v = trim(v);
                if (v == "gelu") c.model.activation = Activation::gelu;
                else if (v == "identity") c.model.activation = Activation::identity;
                else throw UsageError("config key 'activation': expected gelu|identity, got '" + std::string(v) + "'");
              },
              [](const RunConfig& c) {
                return std::string(c.model.activation == Activation::gelu ? "gelu" : "identity");
              }},
      PM3E_BOOL("shared_epsilon", model.shared_epsilon),
      // loss
      PM3E_DOUBLE("lambda", loss.lambda),
      PM3E_DOUBLE("alpha_init", loss.alpha_init),
      PM3E_DOUBLE("beta_init", loss.beta_init),
      PM3E_BOOL("alpha_beta_learnable", loss.alpha_beta_learnable),
      KeySpec{"loss",
              [](RunConfig& c, std::string_view v) {
                v = trim(v);
                if (v == "contrastive") c.loss.kind = LossKind::contrastive;
                else if (v == "mse") c.loss.kind = LossKind::mse;
                else throw UsageError("config key 'loss': expected contrastive|mse, got '" + std::string(v) + "'");
              },
              [](const RunConfig& c) {
                return std::string(c.loss.kind == LossKind::contrastive ? "contrastive" : "mse");
              }},
      PM3E_BOOL("ratio_form", loss.ratio_form),
      // training
      PM3E_SIZE("batch_size", train.batch_size),
      PM3E_SIZE("epochs", train.epochs),
      PM3E_DOUBLE("learning_rate", train.learning_rate),
      PM3E_DOUBLE("adam_beta1", train.adam_beta1),
      PM3E_DOUBLE("adam_beta2", train.adam_beta2),
      PM3E_DOUBLE("adam_eps", train.adam_eps),
      PM3E_DOUBLE("weight_decay", train.weight_decay),
      PM3E_BOOL("masked_only_targets", train.masked_only_targets),
      PM3E_DOUBLE("grad_clip", train.grad_clip),
      // splits
      PM3E_DOUBLE("split_train", split.train),
      PM3E_DOUBLE("split_val", split.val),
      PM3E_DOUBLE("split_test", split.test),
  };
  return table;
}

#undef PM3E_SIZE
#undef PM3E_U64
#undef PM3E_DOUBLE
#undef PM3E_BOOL
#undef PM3E_LIST

}  // namespace

std::string modality_name(std::size_t index) {
  if (index < 6) return std::string(kModalityNames[index]);
  return std::string(kModalityNames[index % 6]) + std::to_string(index / 6);
}

std::size_t parse_modality(std::string_view name, std::size_t modality_count) {
  name = trim(name);
  for (std::size_t i = 0; i < modality_count; ++i) {
    if (modality_name(i) == name) return i;
  }
  std::size_t idx = 0;
  auto res = std::from_chars(name.data(), name.data() + name.size(), idx);
  if (res.ec == std::errc() && res.ptr == name.data() + name.size() && idx < modality_count) return idx;
  throw UsageError("unknown modality '" + std::string(name) + "' (have " +
                   std::to_string(modality_count) + " modalities)");
}

double SynthConfig::noise_for(std::size_t m) const {
  if (noise_std.empty()) return kRoleNoise[m % 6];
  if (noise_std.size() == 1) return noise_std[0];
  return noise_std.at(m);
}

double SynthConfig::location_mix_for(std::size_t m) const {
  if (location_mix.empty()) return kRoleLocationMix[m % 6];
  if (location_mix.size() == 1) return location_mix[0];
  return location_mix.at(m);
}

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  for (const auto& k : key_table()) {
    if (k.name == key) {
      k.set(*this, value);
      return;
    }
  }
  throw UsageError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::apply_text(std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set(line.substr(0, eq), line.substr(eq + 1));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(*this) + "\n";
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : key_table()) n.push_back(k.name);
    return n;
  }();
  return names;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("invalid config: " + m); };
  if (synth.modality_count < 2) fail("modalities must be >= 2");
  if (synth.modality_count > 255) fail("modalities must be <= 255");
  if (synth.input_dim == 0 || synth.latent_dim == 0) fail("input_dim and latent_dim must be positive");
  if (synth.species_count == 0) fail("species must be positive");
  for (double v : synth.noise_std)
    if (!(v >= 0.0)) fail("noise_std must be >= 0");
  for (double v : synth.location_mix)
    if (!(v >= 0.0 && v <= 1.0)) fail("location_mix must lie in [0,1]");
  for (const auto* list : {&synth.noise_std, &synth.location_mix}) {
    if (list->size() > 1 && list->size() != synth.modality_count)
      fail("per-modality lists need 1 or `modalities` entries");
  }
  if (!(synth.lat_min < synth.lat_max) || synth.lat_min < -90 || synth.lat_max > 90)
    fail("latitude box must satisfy -90 <= lat_min < lat_max <= 90");
  if (!(synth.lon_min < synth.lon_max) || synth.lon_min < -180 || synth.lon_max > 180)
    fail("longitude box must satisfy -180 <= lon_min < lon_max <= 180");
  if (model.encoder_dim == 0) fail("encoder_dim must be positive");
  if (model.depth == 0) fail("depth must be >= 1");
  if (model.ff_mult == 0) fail("ff_mult must be >= 1");
  if (!(loss.lambda >= 0.0)) fail("lambda must be >= 0");
  if (!(loss.alpha_init < 0.0)) fail("alpha_init must be negative");
  if (train.batch_size < 2) fail("batch_size must be >= 2");
  if (!(train.learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (!(train.weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(split.train > 0 && split.val > 0 && split.test > 0)) fail("split fractions must be positive");
  const double s = split.train + split.val + split.test;
  if (std::abs(s - 1.0) > 1e-9) fail("split fractions must sum to 1");
}

}  // namespace prom3e
