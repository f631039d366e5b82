#include "prom3e/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prom3e/config.hpp"
#include "prom3e/error.hpp"
#include "prom3e/trainer.hpp"

namespace prom3e {

void RetrievalConfig::validate(std::size_t modality_count) const {
  if (query >= modality_count || target >= modality_count) throw UsageError("retrieval modality out of range");
  if (query == target) throw UsageError("query and target modality must differ");
  if (!(delta >= 0.0 && delta <= 1.0)) throw UsageError("delta must lie in [0, 1]");
  for (std::size_t k : k_list)
    if (k < 1) throw UsageError("recall k must be >= 1");
}

double RetrievalResult::recall_at(std::size_t k) const {
  for (std::size_t i = 0; i < k_list.size(); ++i)
    if (k_list[i] == k) return recall[i];
  return recall_at_k(ranks, k);
}

std::vector<double> hybrid_query(std::span<const double> f_q, std::span<const double> f_hat, double delta) {
  if (f_q.size() != f_hat.size()) {
    throw ShapeError("hybrid_query: query dim " + std::to_string(f_q.size()) + " vs reconstruction dim " +
                     std::to_string(f_hat.size()));
  }
  std::vector<double> out(f_q.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - delta) * f_q[i] + delta * f_hat[i];
  return out;
}

Tensor hybrid_queries(const Tensor& f_q, const Tensor& f_hat, double delta) {
  if (!f_q.same_shape(f_hat)) throw ShapeError("hybrid_queries: " + f_q.shape_str() + " vs " + f_hat.shape_str());
  Tensor out(f_q.rows(), f_q.cols());
  auto a = f_q.data();
  auto b = f_hat.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = (1.0 - delta) * a[i] + delta * b[i];
  return out;
}

namespace {

// Cosine against unit-norm rows differs from the dot product only by the
// positive factor 1/|q|, which cannot reorder candidates.
std::vector<double> scores(std::span<const double> query, const Tensor& gallery) {
  if (gallery.rows() == 0) throw DataError("empty gallery");
  if (query.size() != gallery.cols()) {
    throw ShapeError("query dim " + std::to_string(query.size()) + " vs gallery " + gallery.shape_str());
  }
  std::vector<double> s(gallery.rows());
  for (std::size_t r = 0; r < gallery.rows(); ++r) {
    auto row = gallery.row_span(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) acc += query[c] * row[c];
    s[r] = acc;
  }
  return s;
}

}  // namespace

std::vector<std::size_t> rank_gallery(std::span<const double> query, const Tensor& gallery) {
  const std::vector<double> s = scores(query, gallery);
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return order;
}

std::size_t rank_of(std::span<const double> query, const Tensor& gallery, std::size_t target) {
  if (target >= gallery.rows()) throw UsageError("rank_of: target index outside gallery");
  const std::vector<double> s = scores(query, gallery);
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (s[j] > s[target] || (s[j] == s[target] && j < target)) ++ahead;
  }
  return ahead + 1;
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (k < 1) throw UsageError("recall_at_k: k must be >= 1");
  if (ranks.empty()) return 0.0;
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

RetrievalResult score_queries(const Tensor& queries, const Tensor& gallery, const std::vector<std::size_t>& k_list,
                              double delta) {
  if (queries.rows() != gallery.rows()) {
    throw ShapeError("score_queries: " + queries.shape_str() + " queries for gallery " + gallery.shape_str());
  }
  RetrievalResult r;
  r.k_list = k_list;
  r.delta = delta;
  r.gallery_size = gallery.rows();
  r.ranks.resize(queries.rows());
  for (std::size_t i = 0; i < queries.rows(); ++i) r.ranks[i] = rank_of(queries.row_span(i), gallery, i);
  for (std::size_t k : k_list) r.recall.push_back(recall_at_k(r.ranks, k));
  return r;
}

RetrievalInputs retrieval_inputs(const ModelParams& params, const Dataset& ds, ModalityId query, ModalityId target) {
  if (ds.empty()) throw DataError("retrieval set is empty");
  RetrievalConfig{query, target, 0.0, {1}}.validate(params.shape().modality_count());
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const Batch batch = make_batch(ds, all);
  const VisibleSet vs = VisibleSet::make({query}, {target});
  Inference inf = infer(params, batch, vs);
  return RetrievalInputs{batch.inputs[query], std::move(inf.reconstructions.front()), batch.inputs[target]};
}

RetrievalResult evaluate_retrieval(const RetrievalInputs& in, double delta, const std::vector<std::size_t>& k_list) {
  if (in.f_q.cols() != in.gallery.cols()) {
    // mixing needs a shared space; the raw query alone is only usable at delta = 1
    if (delta != 1.0) {
      throw ShapeError("query modality dim " + std::to_string(in.f_q.cols()) + " differs from target dim " +
                       std::to_string(in.gallery.cols()) + "; only delta = 1 is defined");
    }
    return score_queries(in.f_hat, in.gallery, k_list, delta);
  }
  return score_queries(hybrid_queries(in.f_q, in.f_hat, delta), in.gallery, k_list, delta);
}

RetrievalResult evaluate_retrieval(const ModelParams& params, const Dataset& ds, const RetrievalConfig& config) {
  config.validate(params.shape().modality_count());
  return evaluate_retrieval(retrieval_inputs(params, ds, config.query, config.target), config.delta, config.k_list);
}

DeltaSweep tune_delta(const RetrievalInputs& in) {
  DeltaSweep sweep;
  std::size_t best = 0;
  for (int step = 0; step <= 20; ++step) {
    const double delta = step / 20.0;
    sweep.deltas.push_back(delta);
    sweep.results.push_back(evaluate_retrieval(in, delta, {1, 5, 10}));
    const RetrievalResult& cur = sweep.results.back();
    const RetrievalResult& top = sweep.results[best];
    // strict improvements only, so equal scores keep the smaller delta
    if (cur.recall[0] > top.recall[0] || (cur.recall[0] == top.recall[0] && cur.recall[1] > top.recall[1])) {
      best = sweep.results.size() - 1;
    }
  }
  sweep.best_delta = sweep.deltas[best];
  return sweep;
}

DeltaSweep tune_delta(const ModelParams& params, const Dataset& val, const RetrievalConfig& config) {
  config.validate(params.shape().modality_count());
  return tune_delta(retrieval_inputs(params, val, config.query, config.target));
}

std::string retrieval_row(const RetrievalConfig& config, const RetrievalResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "\t%.2f\t%.4f\t%.4f\t%.4f\t%zu", r.delta, r.recall_at(1), r.recall_at(5),
                r.recall_at(10), r.gallery_size);
  return modality_name(config.query) + "\t" + modality_name(config.target) + buf;
}

}  // namespace prom3e
