#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fcraft/tensor.hpp"

namespace fcraft::synthdata {

// A labeled image set. Images are flattened side x side grids, one per row,
// pixels in [0, 1]. ids are identity labels, attrs the binary utility
// attribute (derived from per-image brightness, independent of identity).
struct Dataset {
  Tensor images;
  std::vector<int> ids;
  std::vector<int> attrs;
  std::size_t side = 0;

  std::size_t count() const { return images.rows(); }
  std::size_t dims() const { return images.cols(); }
};

struct DataConfig {
  std::size_t n_identities = 24;
  std::size_t images_per_identity = 9;
  std::size_t side = 16;
  // Blob count per identity; centers, widths and amplitudes form the
  // persistent identity signature.
  std::size_t blobs = 3;
};

// Each identity is a fixed constellation of 2-D Gaussian blobs; per-image
// nuisance is a small center jitter plus a global brightness offset. The
// utility attribute is brightness > 0, and brightness draws are stratified by
// image index so every identity carries both classes. Bitwise deterministic:
// each (identity, image) pair reads its own derived RNG stream.
Dataset generate_dataset(const DataConfig& cfg, std::uint64_t seed);

// Identity-disjoint public/private split. All images of a public identity go
// to x_pub; each private identity's images are split train:test by
// train_test_ratio (ratio 2 means 2:1), at least one image on each side.
struct DatasetSplit {
  Dataset x_pub;
  Dataset x_train;
  Dataset x_test;
};

DatasetSplit split_dataset(const Dataset& d, double pub_fraction,
                           double train_test_ratio, std::uint64_t seed);

// Affine remap of the whole pixel population so its mean and variance match
// reference's. Refuses a zero-variance input. No clamping: matching moments
// exactly matters more here than staying inside [0, 1].
Tensor normalize_to_reference(const Tensor& images, const Tensor& reference);

// Little-endian dump: u32 count, u32 dims, count*dims float64 pixels,
// count i32 ids, count i32 attrs. side is recovered as round(sqrt(dims)).
void dump_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

}  // namespace fcraft::synthdata
