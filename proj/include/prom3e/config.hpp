#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace prom3e {

// Modality roles by convention; index i of a run uses role i % 6.
inline constexpr std::string_view kModalityNames[] = {"image", "satellite", "location",
                                                       "audio", "text",      "env"};

std::string modality_name(std::size_t index);
// Accepts the role names above or a plain integer index.
std::size_t parse_modality(std::string_view name, std::size_t modality_count);

struct SynthConfig {
  std::size_t modality_count = 6;
  std::size_t input_dim = 32;
  std::size_t species_count = 20;
  std::size_t records = 2400;
  std::size_t latent_dim = 16;
  // Per-modality values; a single entry applies to every modality and an
  // empty list selects the role defaults.
  std::vector<double> noise_std;
  std::vector<double> location_mix;
  double modality_offset = 0.5;   // strength of each modality's private direction
  double map_divergence = 0.5;    // how far each modality map strays from the shared map
  double location_frequency = 3.0;
  std::uint64_t map_seed = 0;     // 0: derive from the run seed
  bool diversity_gradient = false;
  double lat_min = 25.0, lat_max = 50.0;
  double lon_min = -125.0, lon_max = -65.0;

  double noise_for(std::size_t modality) const;
  double location_mix_for(std::size_t modality) const;
};

enum class Activation { gelu, identity };
enum class LossKind { contrastive, mse };

struct ModelConfig {
  std::size_t encoder_dim = 64;
  std::size_t depth = 1;
  std::size_t registers = 4;
  std::size_t ff_mult = 4;
  Activation activation = Activation::gelu;
  bool shared_epsilon = false;
};

struct LossConfig {
  double lambda = 0.001;
  double alpha_init = -5.0;
  double beta_init = 5.0;
  bool alpha_beta_learnable = true;
  LossKind kind = LossKind::contrastive;
  bool ratio_form = false;  // literal softmax-ratio objective, inspection only
};

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  bool masked_only_targets = false;
  double grad_clip = 0.0;  // 0 disables global-norm clipping
};

struct SplitConfig {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  SplitConfig split;

  // Apply one `key = value` setting. Unknown keys and malformed values throw
  // UsageError.
  void set(std::string_view key, std::string_view value);
  // Parse `key = value` lines; `#` starts a comment.
  void apply_text(std::string_view text);
  void load_file(const std::string& path);
  // Every key in a stable order, one `key = value` per line. Feeding the
  // result back through apply_text reproduces the config exactly.
  std::string to_text() const;
  void validate() const;

  static const std::vector<std::string>& keys();
};

}  // namespace prom3e
