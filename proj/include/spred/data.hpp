#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "spred/tensor.hpp"

namespace spred::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabeledData {
  Tensor X;  // [N x d]
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t samples() const { return labels.size(); }
  LabeledData subset(const std::vector<std::size_t>& rows) const;
};

// Numeric CSV; an optional non-numeric first line is treated as a header.
Tensor load_csv_matrix(const std::filesystem::path& path);
// Last column holds integer class labels, relabelled to 0..C-1 in sorted order.
LabeledData load_labeled_csv(const std::filesystem::path& path);

// Binary patch file: the 8 bytes "SPATCH01", then little-endian uint64
// patch dimension and patch count, then count*dimension float64 values with
// each patch contiguous. Loaded as a [dimension x count] matrix.
void write_patches(const std::filesystem::path& path, const Tensor& patches);
Tensor read_patches(const std::filesystem::path& path);

// Binary (P5) or ASCII (P2) greyscale PGM scaled to [0, 1].
Tensor read_pgm(const std::filesystem::path& path);

// Oriented gratings, blobs and edges on a square image, values in [0, 1].
Tensor synthetic_texture(std::size_t size, std::uint64_t seed);
// Random patch x patch crops as columns, each with its mean removed. [patch^2 x count]
Tensor extract_patches(const Tensor& image, std::size_t patch, std::size_t count, std::uint64_t seed);

// Isotropic Gaussian clusters with random means at the given separation.
LabeledData gaussian_mixture(std::size_t n, std::size_t dim, std::size_t classes, double separation, double noise,
                             std::uint64_t seed);

// Entrywise |x| of a mixture: nonnegative, pixel-like inputs.
LabeledData nonnegative_mixture(std::size_t n, std::size_t dim, std::size_t classes, double separation, double noise,
                                std::uint64_t seed);
// Mixture of `clusters` components labelled cluster % classes, so classes are
// unions of clusters and not linearly separable.
LabeledData clustered_classes(std::size_t n, std::size_t dim, std::size_t clusters, std::size_t classes,
                              double separation, double noise, std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> dev;
  std::vector<std::size_t> test;
};
// Shuffled disjoint split; the test set takes what remains after train and dev.
Split split_indices(std::size_t n, double train_fraction, double dev_fraction, std::uint64_t seed);

}  // namespace spred::data
