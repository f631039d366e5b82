#include "prom3e/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prom3e/error.hpp"
#include "prom3e/trainer.hpp"

namespace prom3e {

std::string feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::reconstructed: return "reconstructed";
    case FeatureKind::mu_token: return "mu_token";
    case FeatureKind::modality_tokens: return "modality_tokens";
    case FeatureKind::register_tokens: return "register_tokens";
    case FeatureKind::all_hidden: return "all_hidden";
  }
  return "?";
}

FeatureKind parse_feature_kind(const std::string& name) {
  for (FeatureKind k : kFeatureKinds)
    if (feature_kind_name(k) == name) return k;
  throw UsageError("unknown feature kind '" + name +
                   "' (expected reconstructed, mu_token, modality_tokens, register_tokens or all_hidden)");
}

std::size_t feature_dim(const ModelShape& shape, const VisibleSet& vs, FeatureKind kind) {
  const std::size_t e = shape.encoder_dim;
  switch (kind) {
    case FeatureKind::reconstructed:
      return std::accumulate(shape.input_dims.begin(), shape.input_dims.end(), std::size_t{0});
    case FeatureKind::mu_token: return e;
    case FeatureKind::modality_tokens: return vs.visible.size() * e;
    case FeatureKind::register_tokens: return shape.registers * e;
    case FeatureKind::all_hidden: return shape.tokens(vs.visible.size()) * e;
  }
  return 0;
}

namespace {

std::vector<ModalityId> every_modality(std::size_t n) {
  std::vector<ModalityId> all(n);
  std::iota(all.begin(), all.end(), 0);
  return all;
}

// Concatenate token rows [first, first + count) of each record.
Tensor gather_tokens(const Tensor& hidden, std::size_t tokens, std::size_t first, std::size_t count) {
  const std::size_t b = hidden.rows() / tokens, e = hidden.cols();
  Tensor out(b, count * e);
  for (std::size_t r = 0; r < b; ++r) {
    auto dst = out.row_span(r);
    for (std::size_t t = 0; t < count; ++t) {
      auto src = hidden.row_span(r * tokens + first + t);
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(t * e));
    }
  }
  return out;
}

}  // namespace

Tensor extract_features(const ModelParams& params, const Batch& batch, const std::vector<ModalityId>& visible,
                        FeatureKind kind) {
  const ModelShape& s = params.shape();
  const VisibleSet vs = VisibleSet::make(visible, every_modality(s.modality_count()));
  for (ModalityId m : vs.visible) {
    if (m < batch.inputs.size() && batch.inputs[m].empty()) {
      throw DataError("visible modality " + modality_name(m) + " missing from batch");
    }
  }
  Inference inf = infer(params, batch, vs);
  switch (kind) {
    case FeatureKind::reconstructed: {
      const std::size_t b = batch.size();
      Tensor out(b, feature_dim(s, vs, kind));
      for (std::size_t r = 0; r < b; ++r) {
        auto dst = out.row_span(r).begin();
        for (const Tensor& rec : inf.reconstructions) {
          auto src = rec.row_span(r);
          dst = std::copy(src.begin(), src.end(), dst);
        }
      }
      return out;
    }
    case FeatureKind::mu_token: return inf.mu;
    case FeatureKind::modality_tokens:
      return gather_tokens(inf.hidden, inf.tokens, 2 + s.registers, vs.visible.size());
    case FeatureKind::register_tokens: return gather_tokens(inf.hidden, inf.tokens, 2, s.registers);
    case FeatureKind::all_hidden: return gather_tokens(inf.hidden, inf.tokens, 0, inf.tokens);
  }
  throw UsageError("unknown feature kind");
}

Tensor extract_features(const ModelParams& params, const Dataset& ds, const std::vector<ModalityId>& visible,
                        FeatureKind kind) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  return extract_features(params, make_batch(ds, all), visible, kind);
}

std::vector<std::size_t> LinearProbe::predict(const Tensor& features) const {
  if (features.cols() != mean.size()) {
    throw ShapeError("probe expects " + std::to_string(mean.size()) + " features, got " + features.shape_str());
  }
  const std::size_t d = mean.size();
  std::vector<std::size_t> out(features.rows());
  std::vector<double> x(d), logits(classes);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto row = features.row_span(r);
    for (std::size_t j = 0; j < d; ++j) x[j] = (row[j] - mean[j]) / scale[j];
    for (std::size_t c = 0; c < classes; ++c) logits[c] = bias[c];
    for (std::size_t j = 0; j < d; ++j) {
      auto w = weights.row_span(j);
      for (std::size_t c = 0; c < classes; ++c) logits[c] += x[j] * w[c];
    }
    // max_element returns the first maximum
    out[r] = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  return out;
}

LinearProbe train_linear_probe(const Tensor& features, std::span<const std::uint32_t> labels,
                               const ProbeOptions& options, std::size_t class_count) {
  const std::size_t n = features.rows(), d = features.cols();
  if (n == 0) throw DataError("probe training set is empty");
  if (labels.size() != n) throw ShapeError("probe: " + std::to_string(labels.size()) + " labels for " + features.shape_str());
  const std::uint32_t max_label = *std::max_element(labels.begin(), labels.end());
  const std::size_t c = class_count == 0 ? max_label + 1 : class_count;
  if (max_label >= c) throw DataError("probe label " + std::to_string(max_label) + " outside class count");
  if (std::all_of(labels.begin(), labels.end(), [&](std::uint32_t l) { return l == labels[0]; })) {
    throw DataError("probe needs at least two distinct classes");
  }

  LinearProbe p;
  p.classes = c;
  p.mean.assign(d, 0.0);
  p.scale.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = features.row_span(r);
    for (std::size_t j = 0; j < d; ++j) p.mean[j] += row[j];
  }
  for (double& m : p.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = features.row_span(r);
    for (std::size_t j = 0; j < d; ++j) p.scale[j] += (row[j] - p.mean[j]) * (row[j] - p.mean[j]);
  }
  for (double& s : p.scale) {
    s = std::sqrt(s / static_cast<double>(n));
    if (!(s > 1e-12)) s = 1.0;  // constant feature
  }
  Tensor x(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    auto src = features.row_span(r);
    auto dst = x.row_span(r);
    for (std::size_t j = 0; j < d; ++j) dst[j] = (src[j] - p.mean[j]) / p.scale[j];
  }

  p.weights = Tensor(d, c);
  p.bias = Tensor(1, c);
  Tensor logits(n, c), grad_w(d, c);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    logits.fill(0.0);
    gemm_nn(x.data(), p.weights.data(), logits.data(), n, d, c);
    std::vector<double> grad_b(c, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      auto z = logits.row_span(r);
      double mx = -INFINITY;
      for (std::size_t k = 0; k < c; ++k) {
        z[k] += p.bias[k];
        mx = std::max(mx, z[k]);
      }
      double sum = 0.0;
      for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
      }
      // softmax minus one-hot, over n
      for (std::size_t k = 0; k < c; ++k) {
        z[k] = (z[k] / sum - (labels[r] == k ? 1.0 : 0.0)) / static_cast<double>(n);
        grad_b[k] += z[k];
      }
    }
    grad_w.fill(0.0);
    gemm_tn(x.data(), logits.data(), grad_w.data(), n, d, c);
    auto w = p.weights.data();
    auto gw = grad_w.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= options.learning_rate * (gw[i] + options.l2_penalty * w[i]);
    for (std::size_t k = 0; k < c; ++k) p.bias[k] -= options.learning_rate * grad_b[k];
  }
  return p;
}

double evaluate_probe(const LinearProbe& probe, const Tensor& features, std::span<const std::uint32_t> labels) {
  if (labels.size() != features.rows()) throw ShapeError("evaluate_probe: label count does not match features");
  if (labels.empty()) return 0.0;
  const auto pred = probe.predict(features);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double ProbeReport::accuracy(FeatureKind k) const {
  for (const auto& r : rows)
    if (r.kind == k) return r.top1;
  throw UsageError("probe report has no row for " + feature_kind_name(k));
}

std::string ProbeReport::to_text() const {
  std::string s = "kind\tdim\ttop1\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%.4f\n", feature_kind_name(r.kind).c_str(), r.dim, r.top1);
    s += buf;
  }
  return s;
}

ProbeReport run_probe(const ModelParams& params, const Dataset& train, const Dataset& test,
                      const std::vector<ModalityId>& visible, const std::vector<FeatureKind>& kinds,
                      const ProbeOptions& options) {
  ProbeReport rep;
  rep.classes = std::max(train.species_count(), test.species_count());
  const auto train_labels = train.labels();
  const auto test_labels = test.labels();
  for (FeatureKind k : kinds) {
    const Tensor ftr = extract_features(params, train, visible, k);
    const Tensor fte = extract_features(params, test, visible, k);
    const LinearProbe probe = train_linear_probe(ftr, train_labels, options, rep.classes);
    rep.rows.push_back({k, ftr.cols(), evaluate_probe(probe, fte, test_labels)});
  }
  return rep;
}

}  // namespace prom3e
