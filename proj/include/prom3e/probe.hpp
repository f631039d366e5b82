#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prom3e/model.hpp"
#include "prom3e/synthdata.hpp"

namespace prom3e {

enum class FeatureKind { reconstructed, mu_token, modality_tokens, register_tokens, all_hidden };

inline constexpr FeatureKind kFeatureKinds[] = {FeatureKind::reconstructed, FeatureKind::mu_token,
                                                FeatureKind::modality_tokens, FeatureKind::register_tokens,
                                                FeatureKind::all_hidden};

std::string feature_kind_name(FeatureKind k);
FeatureKind parse_feature_kind(const std::string& name);

// Feature width for a kind under a visible set.
std::size_t feature_dim(const ModelShape& shape, const VisibleSet& vs, FeatureKind kind);

// One row per record, epsilon = 0.
//   reconstructed    decoder outputs for every modality, concatenated
//   mu_token         hidden [mu]
//   modality_tokens  hidden tokens of the visible modalities
//   register_tokens  hidden register tokens
//   all_hidden       [mu] [sigma] registers visible-modality tokens
Tensor extract_features(const ModelParams& params, const Batch& batch, const std::vector<ModalityId>& visible,
                        FeatureKind kind);
Tensor extract_features(const ModelParams& params, const Dataset& ds, const std::vector<ModalityId>& visible,
                        FeatureKind kind);

struct ProbeOptions {
  std::size_t iterations = 500;
  double learning_rate = 0.1;
  double l2_penalty = 1e-4;
};

// Multinomial logistic regression on standardized features.
struct LinearProbe {
  std::vector<double> mean;  // standardization, from the training features
  std::vector<double> scale;
  Tensor weights;            // [D, C]
  Tensor bias;               // [1, C]
  std::size_t classes = 0;

  std::vector<std::size_t> predict(const Tensor& features) const;  // argmax, ties -> lowest class
};

// Full-batch gradient descent. class_count 0 means max(label) + 1.
LinearProbe train_linear_probe(const Tensor& features, std::span<const std::uint32_t> labels,
                               const ProbeOptions& options = {}, std::size_t class_count = 0);

double evaluate_probe(const LinearProbe& probe, const Tensor& features, std::span<const std::uint32_t> labels);

struct ProbeRow {
  FeatureKind kind;
  std::size_t dim = 0;
  double top1 = 0.0;
};

struct ProbeReport {
  std::vector<ProbeRow> rows;
  std::size_t classes = 0;

  double accuracy(FeatureKind k) const;
  std::string to_text() const;  // kind, dim, top1
};

// Train on `train` features, report accuracy on `test`, per kind.
ProbeReport run_probe(const ModelParams& params, const Dataset& train, const Dataset& test,
                      const std::vector<ModalityId>& visible, const std::vector<FeatureKind>& kinds,
                      const ProbeOptions& options = {});

}  // namespace prom3e
