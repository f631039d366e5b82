#pragma once

#include <span>
#include <string>
#include <vector>

#include "prom3e/model.hpp"
#include "prom3e/synthdata.hpp"

namespace prom3e {

struct RetrievalConfig {
  ModalityId query = 0;
  ModalityId target = 1;
  double delta = 0.0;
  std::vector<std::size_t> k_list{1, 5, 10};

  void validate(std::size_t modality_count) const;
};

struct RetrievalResult {
  std::vector<std::size_t> k_list;
  std::vector<double> recall;      // parallel to k_list
  std::vector<std::size_t> ranks;  // 1-based rank of each query's true item
  double delta = 0.0;
  std::size_t gallery_size = 0;

  double recall_at(std::size_t k) const;
};

// (1 - delta) * f_q + delta * f_hat, elementwise.
std::vector<double> hybrid_query(std::span<const double> f_q, std::span<const double> f_hat, double delta);
Tensor hybrid_queries(const Tensor& f_q, const Tensor& f_hat, double delta);

// Gallery indices by descending cosine similarity, ties by ascending index.
// Gallery rows must be unit norm; the query need not be.
std::vector<std::size_t> rank_gallery(std::span<const double> query, const Tensor& gallery);

// 1-based position `target` would take in rank_gallery(query, gallery).
std::size_t rank_of(std::span<const double> query, const Tensor& gallery, std::size_t target);

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);

// Query i is matched with gallery row i.
RetrievalResult score_queries(const Tensor& queries, const Tensor& gallery, const std::vector<std::size_t>& k_list,
                              double delta = 0.0);

// Raw query embeddings plus the model's epsilon = 0 reconstruction of the
// target from the query modality alone.
struct RetrievalInputs {
  Tensor f_q;
  Tensor f_hat;
  Tensor gallery;
};
RetrievalInputs retrieval_inputs(const ModelParams& params, const Dataset& ds, ModalityId query, ModalityId target);

RetrievalResult evaluate_retrieval(const RetrievalInputs& in, double delta, const std::vector<std::size_t>& k_list);
RetrievalResult evaluate_retrieval(const ModelParams& params, const Dataset& ds, const RetrievalConfig& config);

struct DeltaSweep {
  double best_delta = 0.0;
  std::vector<double> deltas;
  std::vector<RetrievalResult> results;
};

// Grid 0, 0.05, ..., 1. Best R@1, then R@5, then the smaller delta.
DeltaSweep tune_delta(const RetrievalInputs& in);
DeltaSweep tune_delta(const ModelParams& params, const Dataset& val, const RetrievalConfig& config);

inline constexpr const char* kRetrievalHeader = "query_mod\ttarget_mod\tdelta\tR@1\tR@5\tR@10\tgallery_size";
std::string retrieval_row(const RetrievalConfig& config, const RetrievalResult& r);

}  // namespace prom3e
