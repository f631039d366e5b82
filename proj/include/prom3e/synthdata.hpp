#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prom3e/config.hpp"
#include "prom3e/tensor.hpp"

namespace prom3e {

// One observation: species label, location and one embedding per modality.
// Embeddings are held at the precision of the on-disk format (f32).
struct EmbeddingRecord {
  std::uint32_t species_id = 0;
  float lat = 0.0f;
  float lon = 0.0f;
  std::vector<std::vector<float>> embeddings;  // [modality][dim]
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<std::uint32_t> dims, std::uint32_t species_count);

  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  std::size_t modality_count() const noexcept { return dims_.size(); }
  std::uint32_t dim(std::size_t modality) const { return dims_.at(modality); }
  const std::vector<std::uint32_t>& dims() const noexcept { return dims_; }
  std::uint32_t species_count() const noexcept { return species_count_; }

  const EmbeddingRecord& operator[](std::size_t i) const { return records_[i]; }
  EmbeddingRecord& operator[](std::size_t i) { return records_[i]; }
  const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }

  // Validates modality count and dims against the header.
  void push_back(EmbeddingRecord r);

  // Embeddings of the given records for one modality as a double matrix, each
  // row re-normalized to unit L2 norm in double precision.
  Tensor matrix(std::span<const std::size_t> indices, std::size_t modality) const;
  Tensor matrix(std::size_t modality) const;  // all records
  std::vector<std::uint32_t> labels() const;

  Dataset subset(std::span<const std::size_t> indices) const;

  // Bit-exact binary encoding (see README for the layout).
  std::string serialize() const;
  static Dataset deserialize(std::string_view bytes);

 private:
  std::vector<std::uint32_t> dims_;
  std::uint32_t species_count_ = 0;
  std::vector<EmbeddingRecord> records_;
};

inline constexpr char kDatasetMagic[4] = {'P', 'M', '3', 'E'};
inline constexpr std::uint16_t kDatasetVersion = 1;

Dataset generate(const SynthConfig& config, std::uint64_t seed);

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

struct Splits {
  Dataset train, val, test;
  std::vector<std::size_t> train_index, val_index, test_index;  // into the source
};

// Stratified, deterministic three-way split. Fractions must be positive and
// sum to one; totals are round(N*f_train), round(N*f_val) and the rest.
Splits split(const Dataset& ds, std::array<double, 3> fractions, std::uint64_t seed);

// Expected species entropy (nats) at normalized longitude t in [0,1] under the
// diversity-gradient sampler; increases monotonically with t.
double gradient_entropy(double t, std::size_t species_count);

}  // namespace prom3e
