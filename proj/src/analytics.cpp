#include "prom3e/analytics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "prom3e/config.hpp"
#include "prom3e/error.hpp"
#include "prom3e/trainer.hpp"

namespace prom3e {

double sigma_l1(std::span<const double> log_var) {
  double s = 0.0;
  for (double v : log_var) s += std::exp(0.5 * v);
  return s;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("correlation: series lengths differ");
  if (x.size() < 2) throw DataError("correlation needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("correlation undefined for a constant series");
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman: series lengths differ");
  if (x.size() < 3) throw DataError("spearman needs at least three points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  Correlation c;
  c.rho = pearson(rx, ry);
  const double df = static_cast<double>(x.size() - 2);
  if (std::abs(c.rho) >= 1.0) {
    c.p_value = 0.0;
  } else {
    const double t = c.rho * std::sqrt(df / (1.0 - c.rho * c.rho));
    boost::math::students_t dist(df);
    c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return c;
}

// ---------------------------------------------------------------------------

std::vector<VisibleSet> progressive_sets(std::size_t modality_count) {
  std::vector<VisibleSet> out;
  std::vector<ModalityId> vis;
  for (ModalityId m = 0; m < modality_count; ++m) {
    vis.push_back(m);
    out.push_back(VisibleSet::with_targets(vis, modality_count, true));
  }
  return out;
}

namespace {

std::vector<std::size_t> all_indices(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

double mean_sq(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return s / static_cast<double>(a.rows());
}

Tensor normalized(Tensor t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row_span(r);
    double ss = 0.0;
    for (double v : row) ss += v * v;
    if (ss > 0.0) {
      const double inv = 1.0 / std::sqrt(ss);
      for (double& v : row) v *= inv;
    }
  }
  return t;
}

std::string set_label(const std::vector<ModalityId>& s) {
  std::string out;
  for (ModalityId m : s) out += (out.empty() ? "" : "+") + modality_name(m);
  return out;
}

}  // namespace

UncertaintyReport uncertainty_sweep(const ModelParams& params, const Dataset& ds,
                                    const std::vector<std::vector<ModalityId>>& visible_sets) {
  if (ds.empty()) throw DataError("uncertainty sweep: empty dataset");
  const std::size_t nm = params.shape().modality_count();
  const Batch batch = make_batch(ds, all_indices(ds));
  UncertaintyReport rep;
  for (const auto& visible : visible_sets) {
    const VisibleSet vs = VisibleSet::with_targets(visible, nm, true);
    const Inference inf = infer(params, batch, vs);
    UncertaintyRow row{vs, 0.0, 0.0};
    for (std::size_t r = 0; r < inf.log_var.rows(); ++r) row.sigma_l1 += sigma_l1(inf.log_var.row_span(r));
    row.sigma_l1 /= static_cast<double>(inf.log_var.rows());
    for (std::size_t i = 0; i < vs.targets.size(); ++i) {
      row.mse += mean_sq(inf.reconstructions[i], batch.inputs[vs.targets[i]]);
    }
    row.mse /= static_cast<double>(vs.targets.size());
    rep.rows.push_back(std::move(row));
  }
  if (rep.rows.size() >= 3) {
    std::vector<double> s, m;
    for (const auto& r : rep.rows) {
      s.push_back(r.sigma_l1);
      m.push_back(r.mse);
    }
    const bool flat = std::adjacent_find(s.begin(), s.end(), std::not_equal_to<>()) == s.end() ||
                      std::adjacent_find(m.begin(), m.end(), std::not_equal_to<>()) == m.end();
    if (!flat) {
      rep.pearson = pearson(s, m);
      rep.spearman = spearman(s, m);
      rep.correlated = true;
    }
  }
  return rep;
}

std::string UncertaintyReport::to_text() const {
  std::string s = "visible\tn_visible\tsigma_l1\trecon_mse\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "\t%zu\t%.6f\t%.6g\n", r.visible.visible.size(), r.sigma_l1, r.mse);
    s += set_label(r.visible.visible) + buf;
  }
  if (!correlated) return s + "# correlation undefined\n";
  std::snprintf(buf, sizeof buf, "# pearson=%.6f spearman=%.6f p_value=%.6g\n", pearson, spearman.rho,
                spearman.p_value);
  return s + buf;
}

double modality_gap(const Tensor& a, const Tensor& b) {
  if (a.rows() == 0 || b.rows() == 0) throw DataError("modality_gap needs non-empty sets");
  if (a.cols() != b.cols()) throw ShapeError("modality_gap: " + a.shape_str() + " vs " + b.shape_str());
  double ss = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    double ma = 0.0, mb = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r) ma += a(r, c);
    for (std::size_t r = 0; r < b.rows(); ++r) mb += b(r, c);
    const double d = ma / static_cast<double>(a.rows()) - mb / static_cast<double>(b.rows());
    ss += d * d;
  }
  return std::sqrt(ss);
}

std::vector<std::vector<ModalityId>> growing_contexts(std::size_t modality_count, ModalityId a, ModalityId b) {
  std::vector<std::vector<ModalityId>> out;
  std::vector<ModalityId> ctx{a, b};
  out.push_back(ctx);
  for (ModalityId m = 0; m < modality_count; ++m) {
    if (m == a || m == b) continue;
    ctx.push_back(m);
    out.push_back(ctx);
  }
  return out;
}

GapReport gap_sweep(const ModelParams& params, const Dataset& ds, ModalityId a, ModalityId b,
                    const std::vector<std::vector<ModalityId>>& contexts) {
  if (ds.empty()) throw DataError("gap sweep: empty dataset");
  const std::size_t nm = params.shape().modality_count();
  if (a >= nm || b >= nm || a == b) throw UsageError("gap sweep needs two distinct modalities");
  const Batch batch = make_batch(ds, all_indices(ds));
  GapReport rep{a, b, {}};
  const double input_gap = batch.inputs[a].cols() == batch.inputs[b].cols()
                               ? modality_gap(normalized(batch.inputs[a]), normalized(batch.inputs[b]))
                               : NAN;
  for (const auto& ctx : contexts) {
    const VisibleSet vs = VisibleSet::with_targets(ctx, nm, false);
    if (!vs.is_visible(a) || !vs.is_visible(b)) throw UsageError("gap context must contain both modalities");
    const Inference inf = infer(params, batch, vs);
    const auto pos = [&](ModalityId m) {
      return static_cast<std::size_t>(std::find(vs.visible.begin(), vs.visible.end(), m) - vs.visible.begin());
    };
    const std::size_t first = 2 + params.shape().registers;
    GapRow row;
    row.context = vs.visible;
    row.input = input_gap;
    row.projected = modality_gap(normalized(inf.projected[pos(a)]), normalized(inf.projected[pos(b)]));
    row.hidden = modality_gap(normalized(token_rows(inf.hidden, inf.tokens, first + pos(a))),
                              normalized(token_rows(inf.hidden, inf.tokens, first + pos(b))));
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

std::string GapReport::to_text() const {
  std::string s = "pair\tcontext\tn_visible\tinput_gap\tprojected_gap\thidden_gap\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "\t%zu\t%.6f\t%.6f\t%.6f\n", r.context.size(), r.input, r.projected, r.hidden);
    s += modality_name(a) + "+" + modality_name(b) + "\t" + set_label(r.context) + buf;
  }
  return s;
}

// ---------------------------------------------------------------------------

double shannon_index(std::span<const double> counts) {
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw DataError("shannon_index: counts must be finite and >= 0");
    total += c;
  }
  if (total <= 0.0) throw DataError("shannon_index: all counts are zero");
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double p = c / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

std::pair<std::size_t, std::size_t> grid_cell(const GridSpec& s, double lat, double lon) {
  auto bin = [](double v, double lo, double hi, std::size_t n) {
    const double f = (v - lo) / (hi - lo) * static_cast<double>(n);
    if (!(f > 0.0)) return std::size_t{0};
    return std::min(static_cast<std::size_t>(f), n - 1);
  };
  return {bin(lat, s.lat_min, s.lat_max, s.rows), bin(lon, s.lon_min, s.lon_max, s.cols)};
}

double DiversityGrid::lat_center(std::size_t r) const {
  return spec.lat_min + (static_cast<double>(r) + 0.5) * (spec.lat_max - spec.lat_min) / static_cast<double>(spec.rows);
}

double DiversityGrid::lon_center(std::size_t c) const {
  return spec.lon_min + (static_cast<double>(c) + 0.5) * (spec.lon_max - spec.lon_min) / static_cast<double>(spec.cols);
}

namespace {

std::vector<double> smooth(const std::vector<double>& map, const std::vector<bool>& present, std::size_t rows,
                           std::size_t cols, double sigma) {
  if (sigma <= 0.0) return map;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(radius + 1));
  for (std::ptrdiff_t d = 0; d <= radius; ++d) {
    kernel[static_cast<std::size_t>(d)] = std::exp(-0.5 * static_cast<double>(d * d) / (sigma * sigma));
  }
  std::vector<double> out(map.size(), 0.0);
  const auto R = static_cast<std::ptrdiff_t>(rows), C = static_cast<std::ptrdiff_t>(cols);
  for (std::ptrdiff_t r = 0; r < R; ++r) {
    for (std::ptrdiff_t c = 0; c < C; ++c) {
      const auto i = static_cast<std::size_t>(r * C + c);
      if (!present[i]) continue;
      double num = 0.0, den = 0.0;
      for (std::ptrdiff_t dr = -radius; dr <= radius; ++dr) {
        const std::ptrdiff_t rr = r + dr;
        if (rr < 0 || rr >= R) continue;
        for (std::ptrdiff_t dc = -radius; dc <= radius; ++dc) {
          const std::ptrdiff_t cc = c + dc;
          if (cc < 0 || cc >= C) continue;
          if (dr * dr + dc * dc > radius * radius) continue;
          const auto j = static_cast<std::size_t>(rr * C + cc);
          if (!present[j]) continue;
          const double w = kernel[static_cast<std::size_t>(std::abs(dr))] * kernel[static_cast<std::size_t>(std::abs(dc))];
          num += w * map[j];
          den += w;
        }
      }
      out[i] = num / den;
    }
  }
  return out;
}

}  // namespace

DiversityGrid build_diversity_grid(const Dataset& ds, const GridSpec& spec, std::span<const double> record_sigma) {
  if (ds.empty()) throw DataError("diversity grid: no records");
  if (spec.rows == 0 || spec.cols == 0) throw UsageError("diversity grid dims must be positive");
  if (!(spec.lat_max > spec.lat_min) || !(spec.lon_max > spec.lon_min)) throw UsageError("diversity grid: invalid bounding box");
  if (!(spec.smoothing >= 0.0)) throw UsageError("smoothing sigma must be >= 0");
  if (!record_sigma.empty() && record_sigma.size() != ds.size()) {
    throw ShapeError("diversity grid: " + std::to_string(record_sigma.size()) + " sigma values for " +
                     std::to_string(ds.size()) + " records");
  }
  const std::size_t cells = spec.rows * spec.cols;
  std::vector<std::vector<double>> counts(cells);
  std::vector<double> sigma_sum(cells, 0.0);
  std::vector<std::size_t> n(cells, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds[i];
    const auto [r, c] = grid_cell(spec, rec.lat, rec.lon);
    const std::size_t k = r * spec.cols + c;
    if (counts[k].empty()) counts[k].assign(ds.species_count(), 0.0);
    counts[k][rec.species_id] += 1.0;
    if (!record_sigma.empty()) sigma_sum[k] += record_sigma[i];
    ++n[k];
  }
  DiversityGrid g;
  g.spec = spec;
  g.present.assign(cells, false);
  g.shannon.assign(cells, 0.0);
  g.richness.assign(cells, 0.0);
  if (!record_sigma.empty()) g.sigma.assign(cells, 0.0);
  for (std::size_t k = 0; k < cells; ++k) {
    if (n[k] == 0) continue;
    g.present[k] = true;
    g.shannon[k] = shannon_index(counts[k]);
    g.richness[k] = static_cast<double>(std::count_if(counts[k].begin(), counts[k].end(), [](double v) { return v > 0.0; }));
    if (!record_sigma.empty()) g.sigma[k] = sigma_sum[k] / static_cast<double>(n[k]);
  }
  g.shannon = smooth(g.shannon, g.present, spec.rows, spec.cols, spec.smoothing);
  g.richness = smooth(g.richness, g.present, spec.rows, spec.cols, spec.smoothing);
  if (!g.sigma.empty()) g.sigma = smooth(g.sigma, g.present, spec.rows, spec.cols, spec.smoothing);
  return g;
}

std::string DiversityGrid::to_text() const {
  std::string s = "row\tcol\tlat_center\tlon_center\tshannon\trichness\tsigma_l1\n";
  char buf[200];
  for (std::size_t r = 0; r < spec.rows; ++r) {
    for (std::size_t c = 0; c < spec.cols; ++c) {
      const std::size_t k = index(r, c);
      if (!present[k]) continue;
      std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.4f\t%.4f\t%.6f\t%.6f\t", r, c, lat_center(r), lon_center(c),
                    shannon[k], richness[k]);
      s += buf;
      if (sigma.empty()) {
        s += "nan\n";
      } else {
        std::snprintf(buf, sizeof buf, "%.6f\n", sigma[k]);
        s += buf;
      }
    }
  }
  return s;
}

std::vector<double> location_sigma(const ModelParams& params, const Dataset& ds, ModalityId location) {
  if (location >= params.shape().modality_count()) throw UsageError("location modality out of range");
  const Batch batch = make_batch(ds, all_indices(ds));
  const Inference inf = infer(params, batch, VisibleSet::make({location}, {location}));
  std::vector<double> out(inf.log_var.rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = sigma_l1(inf.log_var.row_span(r));
  return out;
}

Correlation grid_correlation(const DiversityGrid& grid, const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> x, y;
  for (std::size_t k = 0; k < grid.present.size(); ++k) {
    if (!grid.present[k]) continue;
    x.push_back(a[k]);
    y.push_back(b[k]);
  }
  return spearman(x, y);
}

}  // namespace prom3e
