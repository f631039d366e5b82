#pragma once

#include <span>
#include <string>
#include <vector>

#include "prom3e/model.hpp"
#include "prom3e/synthdata.hpp"

namespace prom3e {

// sum_d exp(0.5 * log_var_d)
double sigma_l1(std::span<const double> log_var);

struct Correlation {
  double rho = 0.0;
  double p_value = 1.0;
};

double pearson(std::span<const double> x, std::span<const double> y);
// Average ranks for ties (1-based).
std::vector<double> average_ranks(std::span<const double> x);
// Pearson on average ranks; two-sided p from t = rho sqrt((n-2)/(1-rho^2)).
Correlation spearman(std::span<const double> x, std::span<const double> y);

struct UncertaintyRow {
  VisibleSet visible;
  double sigma_l1 = 0.0;  // mean over records
  double mse = 0.0;       // mean over records and masked targets
};

struct UncertaintyReport {
  std::vector<UncertaintyRow> rows;
  bool correlated = false;  // unset with fewer than 3 rows or a constant series
  double pearson = 0.0;
  Correlation spearman;

  std::string to_text() const;
};

// Visible sets {m0}, {m0,m1}, ... adding modalities in index order.
std::vector<VisibleSet> progressive_sets(std::size_t modality_count);

// Per visible set: mean ||sigma||_1 and mean squared reconstruction error of
// the masked targets (every target when nothing is masked). epsilon = 0.
UncertaintyReport uncertainty_sweep(const ModelParams& params, const Dataset& ds,
                                    const std::vector<std::vector<ModalityId>>& visible_sets);

// Euclidean distance between row means.
double modality_gap(const Tensor& a, const Tensor& b);

struct GapRow {
  std::vector<ModalityId> context;  // visible set, includes the pair
  double input = 0.0;
  double projected = 0.0;
  double hidden = 0.0;
};

struct GapReport {
  ModalityId a = 0, b = 1;
  std::vector<GapRow> rows;

  std::string to_text() const;
};

// Gaps between the pair's representations at three stages (raw input,
// projected + id token, encoder output token) for each context. Rows are L2
// normalized before taking centroids so that stages are on one scale.
GapReport gap_sweep(const ModelParams& params, const Dataset& ds, ModalityId a, ModalityId b,
                    const std::vector<std::vector<ModalityId>>& contexts);

// The pair, then the remaining modalities added one at a time in index order.
std::vector<std::vector<ModalityId>> growing_contexts(std::size_t modality_count, ModalityId a, ModalityId b);

// -sum p ln p over non-zero counts.
double shannon_index(std::span<const double> counts);

struct GridSpec {
  std::size_t rows = 25;
  std::size_t cols = 50;
  double lat_min = 25.0, lat_max = 50.0;
  double lon_min = -125.0, lon_max = -65.0;
  double smoothing = 2.0;  // kernel sigma in cells
};

struct DiversityGrid {
  GridSpec spec;
  std::vector<bool> present;      // cell had at least one record
  std::vector<double> shannon;
  std::vector<double> richness;   // distinct species; integer before smoothing
  std::vector<double> sigma;      // mean ||sigma||_1, empty when not supplied

  std::size_t index(std::size_t r, std::size_t c) const { return r * spec.cols + c; }
  double lat_center(std::size_t r) const;
  double lon_center(std::size_t c) const;
  std::string to_text() const;   // row col lat_center lon_center shannon richness sigma_l1, present cells only
};

// Cell of a coordinate; row 0 is the southern edge, col 0 the western. Points on
// the far edge fall into the last cell.
std::pair<std::size_t, std::size_t> grid_cell(const GridSpec& spec, double lat, double lon);

// Per-cell maps from records; `record_sigma` (one per record) is optional.
// Each map is smoothed with a Gaussian kernel truncated at radius 3 sigma and
// renormalized over present cells; absent cells stay absent.
DiversityGrid build_diversity_grid(const Dataset& ds, const GridSpec& spec,
                                   std::span<const double> record_sigma = {});

// ||sigma||_1 of each record encoded with only the location modality visible.
std::vector<double> location_sigma(const ModelParams& params, const Dataset& ds, ModalityId location = 2);

// Spearman between two maps over present cells.
Correlation grid_correlation(const DiversityGrid& grid, const std::vector<double>& a, const std::vector<double>& b);

}  // namespace prom3e
