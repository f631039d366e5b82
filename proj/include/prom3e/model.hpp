#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "prom3e/config.hpp"
#include "prom3e/graph.hpp"
#include "prom3e/rng.hpp"
#include "prom3e/tensor.hpp"

namespace prom3e {

using ModalityId = std::size_t;

// Modalities fed to the encoder and modalities to reconstruct. Both are kept
// sorted in modality order.
struct VisibleSet {
  std::vector<ModalityId> visible;
  std::vector<ModalityId> targets;

  static VisibleSet make(std::vector<ModalityId> visible, std::vector<ModalityId> targets);
  // Targets = every modality (masked_only = false) or only the masked ones;
  // with nothing masked, every modality.
  static VisibleSet with_targets(std::vector<ModalityId> visible, std::size_t modality_count,
                                 bool masked_only);
  bool is_visible(ModalityId m) const;
  std::string to_string() const;
};

struct Param {
  std::string name;
  Tensor value;
  bool decay = true;  // subject to AdamW weight decay
};

// Architecture derived from the run configuration plus per-modality input
// dimensions.
struct ModelShape {
  std::vector<std::size_t> input_dims;
  std::size_t encoder_dim = 64;
  std::size_t depth = 1;
  std::size_t registers = 4;
  std::size_t ff_mult = 4;
  Activation activation = Activation::gelu;

  std::size_t modality_count() const { return input_dims.size(); }
  std::size_t heads() const;
  std::size_t tokens(std::size_t visible) const { return 2 + registers + visible; }
};

// Every learnable tensor, in a fixed order:
//   per modality i:  proj.i.w1 proj.i.b1 proj.i.w2 proj.i.b2 modality_id.i
//   mu_token sigma_token register.0 .. register.R-1
//   per block l:     block.l.{ln1.gain ln1.bias wq bq wk bk wv bv wo bo
//                              ln2.gain ln2.bias ff.w1 ff.b1 ff.w2 ff.b2}
//   per modality i:  decoder.i.w1 decoder.i.b1 decoder.i.w2 decoder.i.b2
//   alpha beta
class ModelParams {
 public:
  // Gaussian init: weights std 1/sqrt(fan_in), learned tokens std 0.02,
  // biases zero, layer-norm gains one.
  static ModelParams initialize(const ModelShape& shape, const LossConfig& loss, Rng& rng);
  // Rebuild from tensors in checkpoint order; validates names and shapes.
  static ModelParams from_tensors(const ModelShape& shape, std::vector<Param> params);

  const ModelShape& shape() const noexcept { return shape_; }
  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  std::size_t parameter_count() const;

  // Index helpers into params().
  std::size_t proj(std::size_t modality, std::size_t which) const { return modality * 5 + which; }
  std::size_t modality_id(std::size_t modality) const { return modality * 5 + 4; }
  std::size_t mu_token() const { return shape_.modality_count() * 5; }
  std::size_t sigma_token() const { return mu_token() + 1; }
  std::size_t register_token(std::size_t r) const { return mu_token() + 2 + r; }
  std::size_t block(std::size_t layer, std::size_t which) const {
    return mu_token() + 2 + shape_.registers + layer * 16 + which;
  }
  std::size_t decoder(std::size_t modality, std::size_t which) const {
    return block(shape_.depth, 0) + modality * 4 + which;
  }
  std::size_t alpha() const { return decoder(shape_.modality_count(), 0); }
  std::size_t beta() const { return alpha() + 1; }

  const Tensor& operator[](std::size_t i) const { return params_[i].value; }
  Tensor& operator[](std::size_t i) { return params_[i].value; }

  // 64-bit FNV-1a over all parameter bytes.
  std::uint64_t fingerprint() const;

 private:
  ModelShape shape_;
  std::vector<Param> params_;
};

// ModelParams recorded onto a Graph (parameters or constants, depending on
// the graph's grad mode).
struct BoundParams {
  const ModelParams* params = nullptr;
  std::vector<Var> vars;
  Var operator[](std::size_t i) const { return vars[i]; }
};
BoundParams bind(Graph& g, const ModelParams& params);

// Batch input: one [B, D_i] matrix per modality (unit-norm rows). Masked
// modalities may hold anything; they are never read.
struct Batch {
  std::vector<Tensor> inputs;
  std::size_t size() const {
    for (const auto& t : inputs)
      if (!t.empty()) return t.rows();
    return 0;
  }
};

struct TokenSequence {
  Var tokens;                  // [B*T, E]
  std::size_t count = 0;       // T
  std::vector<Var> projected;  // per visible modality, [B, E] (projector + id)
};

struct Encoded {
  Var mu;       // [B, E]
  Var log_var;  // [B, E]
  Var hidden;   // [B*T, E]; order [mu], [sigma], registers, visible modalities
  std::size_t tokens = 0;
};

// Token order per record: mu, sigma, registers..., then project(f_i) + id_i
// for each visible modality in modality order.
TokenSequence assemble_tokens(Graph& g, const BoundParams& p, const Batch& batch, const VisibleSet& vs);
Encoded encode(Graph& g, const BoundParams& p, const TokenSequence& seq);
Var reparameterize(Graph& g, Var mu, Var log_var, Var epsilon);
Var decode(Graph& g, const BoundParams& p, Var z, ModalityId modality);

enum class EpsilonMode { sample, zero };

struct ForwardOutput {
  TokenSequence sequence;
  Encoded encoded;
  std::vector<Var> reconstructions;  // parallel to VisibleSet::targets, [B, D_i]
};

// assemble -> encode -> reparameterize -> decode for every target. In sample
// mode one epsilon matrix is drawn per target in target order, or a single
// one reused for all targets when shared_epsilon is set.
ForwardOutput forward(Graph& g, const BoundParams& p, const Batch& batch, const VisibleSet& vs,
                      EpsilonMode mode, Rng* rng, bool shared_epsilon = false);

// Deterministic (epsilon = 0) pass with every intermediate copied out.
struct Inference {
  std::size_t tokens = 0;
  Tensor mu;                            // [B, E]
  Tensor log_var;                       // [B, E]
  Tensor hidden;                        // [B*T, E]
  std::vector<Tensor> projected;        // parallel to visible
  std::vector<Tensor> reconstructions;  // parallel to targets
};
Inference infer(const ModelParams& params, const Batch& batch, const VisibleSet& vs);

// Rows of token `index` from a [B*T, E] matrix.
Tensor token_rows(const Tensor& hidden, std::size_t tokens, std::size_t index);

// Checkpoint: magic "PM3C", u16 version, u32 config-text length + text,
// u32 tensor count, then per tensor: u16 name length + name, u32 rows,
// u32 cols, rows*cols f64. Little-endian throughout.
inline constexpr char kCheckpointMagic[4] = {'P', 'M', '3', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  ModelParams params;
};

std::string serialize_checkpoint(const RunConfig& config, const ModelParams& params);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const RunConfig& config, const ModelParams& params);
Checkpoint load_checkpoint(const std::string& path);

ModelShape shape_from_config(const RunConfig& config, const std::vector<std::uint32_t>& input_dims);

}  // namespace prom3e
