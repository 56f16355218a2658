#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vmm/tensor.hpp"

namespace vmm::data {

struct Dataset {
  Tensor x;                           // [N,D]
  std::vector<int> labels;            // empty when unlabeled
  std::vector<std::size_t> train_idx; // empty until split
  std::vector<std::size_t> val_idx;
  std::string scaling = "raw";        // provenance of the feature range
  bool labeled() const { return !labels.empty(); }
};

/// IDX ingestion: big-endian magic (2051 images, 2049 labels), big-endian
/// dimension sizes, raw bytes; pixels mapped to [-1,1] by x/127.5 - 1.
/// Gzip-compressed files are accepted transparently. An empty labels path
/// loads an unlabeled dataset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// IDX writers, byte-exact inverses of the reader's parsing.
void save_idx_images(const std::string& path, std::size_t rows, std::size_t cols,
                     const std::vector<unsigned char>& pixels);
void save_idx_labels(const std::string& path, const std::vector<unsigned char>& labels);

/// Comma-separated numeric columns, '.' decimal separator; a non-numeric
/// first line is treated as a header. With `final_column_labels` the last
/// column must hold integers and becomes the label vector.
Dataset load_csv(const std::string& path, bool final_column_labels);

struct SynthSpec {
  std::size_t components = 0;
  std::size_t dim = 0;
  std::vector<std::vector<double>> means; // one [dim] center per component
  std::vector<double> scales;             // isotropic stddev per component
  std::size_t points_per_component = 0;
  std::uint64_t seed = 0;
  void validate() const;
};

/// Isotropic Gaussian blobs, labels = component of origin, grouped by
/// component so the label histogram is exact by construction.
Dataset synth_mixture(const SynthSpec& spec);

/// Seeded shuffle-then-partition; fills train_idx/val_idx (each sorted).
Dataset split(Dataset ds, double val_fraction, std::uint64_t seed);

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx);
std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& idx);

/// Binary PGM (P5, maxval 255), row-major pixels.
void save_pgm(const std::string& path, std::size_t width, std::size_t height,
              const std::vector<unsigned char>& pixels);

} // namespace vmm::data
