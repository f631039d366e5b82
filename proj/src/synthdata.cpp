#include "prom3e/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "prom3e/error.hpp"
#include "prom3e/rng.hpp"

namespace prom3e {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

Dataset::Dataset(std::vector<std::uint32_t> dims, std::uint32_t species_count)
    : dims_(std::move(dims)), species_count_(species_count) {}

void Dataset::push_back(EmbeddingRecord r) {
  if (r.embeddings.size() != dims_.size()) {
    throw DataError("record has " + std::to_string(r.embeddings.size()) + " modalities, dataset has " +
                    std::to_string(dims_.size()));
  }
  for (std::size_t m = 0; m < dims_.size(); ++m) {
    if (r.embeddings[m].size() != dims_[m]) {
      throw DataError("modality " + std::to_string(m) + " embedding has dim " +
                      std::to_string(r.embeddings[m].size()) + ", expected " + std::to_string(dims_[m]));
    }
  }
  records_.push_back(std::move(r));
}

Tensor Dataset::matrix(std::span<const std::size_t> indices, std::size_t modality) const {
  const std::size_t d = dim(modality);
  Tensor out(indices.size(), d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& src = records_.at(indices[r]).embeddings[modality];
    auto dst = out.row_span(r);
    double ss = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      dst[c] = static_cast<double>(src[c]);
      ss += dst[c] * dst[c];
    }
    if (ss > 0.0) {
      const double inv = 1.0 / std::sqrt(ss);
      for (double& v : dst) v *= inv;
    }
  }
  return out;
}

Tensor Dataset::matrix(std::size_t modality) const {
  std::vector<std::size_t> all(size());
  std::iota(all.begin(), all.end(), 0);
  return matrix(all, modality);
}

std::vector<std::uint32_t> Dataset::labels() const {
  std::vector<std::uint32_t> out;
  out.reserve(size());
  for (const auto& r : records_) out.push_back(r.species_id);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out(dims_, species_count_);
  out.records_.reserve(indices.size());
  for (std::size_t i : indices) out.records_.push_back(records_.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Binary format

namespace {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw TruncatedError("dataset header truncated at byte " + std::to_string(bytes_.size()));
    }
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Dataset::serialize() const {
  std::string out;
  std::size_t rec_bytes = 12;
  for (auto d : dims_) rec_bytes += 4 * static_cast<std::size_t>(d);
  out.reserve(4 + 2 + 1 + 4 * dims_.size() + 4 + 8 + rec_bytes * records_.size());
  out.append(kDatasetMagic, 4);
  put<std::uint16_t>(out, kDatasetVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dims_.size()));
  for (auto d : dims_) put<std::uint32_t>(out, d);
  put<std::uint32_t>(out, species_count_);
  put<std::uint64_t>(out, records_.size());
  for (const auto& r : records_) {
    put<std::uint32_t>(out, r.species_id);
    put<float>(out, r.lat);
    put<float>(out, r.lon);
    for (const auto& e : r.embeddings)
      for (float v : e) put<float>(out, v);
  }
  return out;
}

Dataset Dataset::deserialize(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0) {
    throw BadMagicError("not a dataset file: bad magic (expected \"PM3E\")");
  }
  Reader rd(bytes.substr(4));
  const auto version = rd.get<std::uint16_t>();
  if (version != kDatasetVersion) {
    throw VersionError("unsupported dataset version " + std::to_string(version) + " (expected " +
                       std::to_string(kDatasetVersion) + ")");
  }
  const auto mcount = rd.get<std::uint8_t>();
  std::vector<std::uint32_t> dims(mcount);
  for (auto& d : dims) d = rd.get<std::uint32_t>();
  const auto species = rd.get<std::uint32_t>();
  const auto count = rd.get<std::uint64_t>();

  std::uint64_t rec_bytes = 12;
  for (auto d : dims) rec_bytes += 4ULL * d;
  const std::uint64_t header = 4 + rd.pos();
  const std::uint64_t payload = bytes.size() - header;
  if (count > 0 && rec_bytes > 0 && count > (UINT64_MAX - header) / rec_bytes) {
    throw FormatError("record count " + std::to_string(count) + " overflows the file size");
  }
  const std::uint64_t expected = header + count * rec_bytes;
  if (bytes.size() < expected) {
    throw TruncatedError("dataset truncated: header declares " + std::to_string(count) +
                         " records, expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError("dataset has " + std::to_string(payload - count * rec_bytes) +
                      " trailing bytes after " + std::to_string(count) + " records");
  }

  Dataset ds(std::move(dims), species);
  ds.records_.reserve(count);
  const char* p = bytes.data() + header;
  for (std::uint64_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    std::memcpy(&r.species_id, p, 4);
    std::memcpy(&r.lat, p + 4, 4);
    std::memcpy(&r.lon, p + 8, 4);
    p += 12;
    r.embeddings.resize(ds.dims_.size());
    for (std::size_t m = 0; m < ds.dims_.size(); ++m) {
      r.embeddings[m].resize(ds.dims_[m]);
      std::memcpy(r.embeddings[m].data(), p, 4ULL * ds.dims_[m]);
      p += 4ULL * ds.dims_[m];
    }
    ds.records_.push_back(std::move(r));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::string bytes = ds.serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return Dataset::deserialize(ss.str());
}

// ---------------------------------------------------------------------------
// Generator

namespace {

void normalize(std::vector<double>& v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  if (ss == 0.0) return;
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
}

struct ModalityMap {
  std::vector<double> weights;  // dim x latent, row-major
  std::vector<double> offset;   // unit direction private to the modality
};

}  // namespace

double gradient_entropy(double t, std::size_t species_count) {
  const double s = static_cast<double>(species_count);
  const double p_dom = (1.0 - t) + t / s;
  const double p_other = t / s;
  double h = 0.0;
  if (p_dom > 0.0) h -= p_dom * std::log(p_dom);
  if (p_other > 0.0) h -= (s - 1.0) * p_other * std::log(p_other);
  return h;
}

Dataset generate(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.modality_count < 2) throw UsageError("generator needs at least 2 modalities");
  if (cfg.species_count == 0) throw UsageError("generator needs at least one species");
  if (cfg.records < cfg.species_count) {
    throw UsageError("records (" + std::to_string(cfg.records) + ") < species (" +
                     std::to_string(cfg.species_count) + "): every species must appear");
  }
  for (std::size_t m = 0; m < cfg.modality_count; ++m) {
    if (!(cfg.noise_for(m) >= 0.0)) throw UsageError("noise std must be >= 0");
  }
  const std::size_t k = cfg.latent_dim, d = cfg.input_dim, nm = cfg.modality_count;
  const std::uint64_t world = cfg.map_seed != 0 ? cfg.map_seed : seed;

  // Shared structure: species factors, location features, modality maps.
  Rng species_rng = stream(world, "species");
  std::vector<std::vector<double>> species(cfg.species_count, std::vector<double>(k));
  for (auto& f : species)
    for (double& x : f) x = normal(species_rng);

  Rng loc_rng = stream(world, "location-features");
  std::vector<std::array<double, 2>> freq(k);
  std::vector<double> phase(k);
  for (std::size_t j = 0; j < k; ++j) {
    freq[j] = {normal(loc_rng), normal(loc_rng)};
    phase[j] = 2.0 * std::numbers::pi * uniform(loc_rng);
  }

  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(k));
  Rng shared_rng = stream(world, "shared-map");
  std::vector<double> shared(d * k);
  for (double& x : shared) x = normal(shared_rng) * inv_sqrt_k;

  std::vector<ModalityMap> maps(nm);
  const double tau = cfg.map_divergence;
  const double renorm = 1.0 / std::sqrt(1.0 + tau * tau);
  for (std::size_t m = 0; m < nm; ++m) {
    Rng mrng = stream(world, "modality-map", m);
    maps[m].weights.resize(d * k);
    for (std::size_t i = 0; i < d * k; ++i)
      maps[m].weights[i] = (shared[i] + tau * normal(mrng) * inv_sqrt_k) * renorm;
    maps[m].offset.resize(d);
    for (double& x : maps[m].offset) x = normal(mrng);
    normalize(maps[m].offset);
  }

  Dataset ds(std::vector<std::uint32_t>(nm, static_cast<std::uint32_t>(d)),
             static_cast<std::uint32_t>(cfg.species_count));
  Rng rng = stream(seed, "records");
  const double sqrt2 = std::sqrt(2.0);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> loc_feat(k), latent(k), v(d);
  for (std::size_t r = 0; r < cfg.records; ++r) {
    const double ulat = uniform(rng), ulon = uniform(rng);
    EmbeddingRecord rec;
    rec.lat = static_cast<float>(cfg.lat_min + ulat * (cfg.lat_max - cfg.lat_min));
    rec.lon = static_cast<float>(cfg.lon_min + ulon * (cfg.lon_max - cfg.lon_min));

    const double pick = uniform(rng);
    const double choice = uniform(rng);
    std::size_t sp;
    if (r < cfg.species_count) {
      sp = r;
    } else if (cfg.diversity_gradient && pick >= ulon) {
      // Species 0 dominates the western edge; the dominance fades linearly
      // toward the east.
      sp = 0;
    } else {
      sp = std::min(cfg.species_count - 1, static_cast<std::size_t>(choice * cfg.species_count));
    }
    rec.species_id = static_cast<std::uint32_t>(sp);

    const double f = cfg.location_frequency;
    for (std::size_t j = 0; j < k; ++j)
      loc_feat[j] = sqrt2 * std::cos(2.0 * std::numbers::pi * f * (freq[j][0] * ulat + freq[j][1] * ulon) + phase[j]);

    rec.embeddings.resize(nm);
    for (std::size_t m = 0; m < nm; ++m) {
      const double w = cfg.location_mix_for(m);
      for (std::size_t j = 0; j < k; ++j) latent[j] = (1.0 - w) * species[sp][j] + w * loc_feat[j];
      const auto& W = maps[m].weights;
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += W[i * k + j] * latent[j];
        v[i] = std::tanh(s);
      }
      normalize(v);
      for (std::size_t i = 0; i < d; ++i) v[i] += cfg.modality_offset * maps[m].offset[i];
      normalize(v);
      const double sigma = cfg.noise_for(m);
      for (std::size_t i = 0; i < d; ++i) {
        const double z = normal(rng);
        v[i] += sigma * inv_sqrt_d * z;
      }
      normalize(v);
      rec.embeddings[m].assign(v.begin(), v.end());
    }
    ds.push_back(std::move(rec));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Split

Splits split(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f > 0.0)) throw UsageError("split fractions must be positive");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw UsageError("split fractions must sum to 1");
  }
  const std::size_t n = ds.size();
  std::array<std::size_t, 3> target{};
  target[0] = static_cast<std::size_t>(std::llround(n * fractions[0]));
  target[1] = static_cast<std::size_t>(std::llround(n * fractions[1]));
  if (target[0] + target[1] > n) throw UsageError("split would leave the test split empty");
  target[2] = n - target[0] - target[1];
  for (std::size_t t : target) {
    if (t == 0) throw UsageError("split of " + std::to_string(n) + " records would leave a split empty");
  }

  // Group by species, shuffled within each species.
  std::size_t nspecies = ds.species_count();
  for (const auto& r : ds.records()) nspecies = std::max<std::size_t>(nspecies, r.species_id + 1);
  std::vector<std::vector<std::size_t>> groups(nspecies);
  for (std::size_t i = 0; i < n; ++i) groups[ds[i].species_id].push_back(i);
  Rng rng = stream(seed, "split");
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);

  // Per-species quotas: floors of the exact shares, then hand out the
  // remaining units so each split total hits its target exactly.
  std::vector<std::array<std::size_t, 3>> quota(nspecies);
  std::vector<std::array<double, 3>> frac(nspecies);
  std::vector<std::size_t> spare(nspecies, 0);
  std::array<long long, 3> need{};
  for (int k = 0; k < 3; ++k) need[k] = static_cast<long long>(target[k]);
  for (std::size_t s = 0; s < nspecies; ++s) {
    const double ns = static_cast<double>(groups[s].size());
    std::size_t used = 0;
    for (int k = 0; k < 3; ++k) {
      const double exact = ns * fractions[k];
      quota[s][k] = static_cast<std::size_t>(std::floor(exact));
      frac[s][k] = exact - std::floor(exact);
      used += quota[s][k];
      need[k] -= static_cast<long long>(quota[s][k]);
    }
    spare[s] = groups[s].size() - used;
  }
  // A split can be over-full only through rounding of the targets; give
  // units back from the species with the smallest fractional share.
  for (int k = 0; k < 3; ++k) {
    while (need[k] < 0) {
      std::size_t best = nspecies;
      for (std::size_t s = 0; s < nspecies; ++s) {
        if (quota[s][k] == 0) continue;
        if (best == nspecies || frac[s][k] < frac[best][k]) best = s;
      }
      --quota[best][k];
      ++spare[best];
      frac[best][k] += 1.0;
      ++need[k];
    }
  }
  for (std::size_t s = 0; s < nspecies; ++s) {
    std::array<bool, 3> given{};
    while (spare[s] > 0) {
      int best = -1;
      for (int pass = 0; pass < 2 && best < 0; ++pass) {
        for (int k = 0; k < 3; ++k) {
          if (need[k] <= 0 || (pass == 0 && given[k])) continue;
          if (best < 0 || frac[s][k] > frac[s][best]) best = k;
        }
      }
      if (best < 0) throw DataError("split quota assignment failed");
      ++quota[s][best];
      given[best] = true;
      --need[best];
      --spare[s];
    }
  }

  Splits out;
  std::array<std::vector<std::size_t>*, 3> idx{&out.train_index, &out.val_index, &out.test_index};
  for (std::size_t s = 0; s < nspecies; ++s) {
    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k)
      for (std::size_t q = 0; q < quota[s][k]; ++q) idx[k]->push_back(groups[s][pos++]);
  }
  for (auto* v : idx) std::sort(v->begin(), v->end());
  out.train = ds.subset(out.train_index);
  out.val = ds.subset(out.val_index);
  out.test = ds.subset(out.test_index);
  return out;
}

}  // namespace prom3e
