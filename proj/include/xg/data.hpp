#pragma once

#include <string>
#include <utility>
#include <vector>

#include "xg/tensor.hpp"

namespace xg::data {

struct Dataset {
  Tensor images;  // [N,C,H,W] in [0,1]
  std::vector<int> labels;
  int class_count = 0;
  std::string split;
  std::string provenance;

  size_t size() const { return labels.size(); }
  int channels() const { return images.dim(1); }
  int side() const { return images.dim(2); }
  Tensor image(size_t i) const;  // [1,C,H,W] copy
  void validate() const;
};

// CIFAR-10 binary layout: per record 1 label byte + 3072 pixel bytes
// (R plane, G plane, B plane, each 32x32 row-major); pixels scaled by /255.
std::pair<Dataset, Dataset> load_cifar10_binary(const std::string& dir);
Dataset load_cifar10_file(const std::string& path, int class_count = 10);
void save_cifar10_fixture(const Dataset& d, const std::string& path);

// snaps pixel values to the k/255 grid the binary format can represent
Dataset quantize_to_bytes(const Dataset& d);

// deterministic glyph dataset: filled square, circle, triangle, cross, ring,
// bar at randomized position/scale/intensity plus clamped Gaussian noise
Dataset gen_synthetic_shapes(int n_per_class, int class_count, int image_side, double noise_sd,
                             uint64_t seed);

struct Batch {
  Tensor x;  // [B,C,H,W]
  std::vector<int> y;
  std::vector<size_t> indices;  // positions in the source dataset
};

// deterministic permutation from seed when shuffling; final partial batch kept
std::vector<Batch> batches(const Dataset& d, int size, uint64_t seed, bool shuffle);

Dataset subset(const Dataset& d, size_t start, size_t count);

}  // namespace xg::data
