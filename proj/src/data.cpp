#include "xg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace xg::data {

namespace {
constexpr int kCifarSide = 32;
constexpr int kCifarChannels = 3;
constexpr size_t kCifarRecord = 1 + 3072;
constexpr size_t kCifarBatchBytes = kCifarRecord * 10000;
}  // namespace

Tensor Dataset::image(size_t i) const {
  const int C = images.dim(1), H = images.dim(2), W = images.dim(3);
  const size_t n = static_cast<size_t>(C) * H * W;
  std::vector<double> v(images.data().begin() + static_cast<long>(i * n),
                        images.data().begin() + static_cast<long>((i + 1) * n));
  return Tensor::from(std::move(v), {1, C, H, W});
}

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError("dataset: images must be [N,C,H,W]");
  if (static_cast<size_t>(images.dim(0)) != labels.size())
    throw DataError("dataset: image/label count mismatch");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= class_count)
      throw DataError("dataset: label " + std::to_string(labels[i]) + " at index " +
                      std::to_string(i) + " outside " + std::to_string(class_count) + " classes");
  for (double v : images.data())
    if (v < 0.0 || v > 1.0) throw DataError("dataset: pixel outside [0,1]");
}

Dataset load_cifar10_file(const std::string& path, int class_count) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("cifar10: cannot open " + path);
  const auto sz = static_cast<size_t>(f.tellg());
  if (sz == 0 || sz % kCifarRecord != 0)
    throw DataError("cifar10: " + path + " has " + std::to_string(sz) +
                    " bytes, expected a multiple of " + std::to_string(kCifarRecord));
  f.seekg(0);
  const size_t n = sz / kCifarRecord;
  std::vector<uint8_t> raw(sz);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<long>(sz));
  if (!f) throw DataError("cifar10: short read on " + path);

  Dataset d;
  d.class_count = class_count;
  d.labels.resize(n);
  std::vector<double> px(n * 3072);
  for (size_t i = 0; i < n; ++i) {
    const uint8_t lab = raw[i * kCifarRecord];
    if (lab >= static_cast<uint8_t>(class_count))
      throw DataError("cifar10: label byte " + std::to_string(lab) + " at offset " +
                      std::to_string(i * kCifarRecord) + " in " + path);
    d.labels[i] = lab;
    const uint8_t* rec = raw.data() + i * kCifarRecord + 1;
    for (size_t j = 0; j < 3072; ++j) px[i * 3072 + j] = static_cast<double>(rec[j]) / 255.0;
  }
  d.images = Tensor::from(std::move(px),
                          {static_cast<int>(n), kCifarChannels, kCifarSide, kCifarSide});
  d.provenance = path;
  return d;
}

std::pair<Dataset, Dataset> load_cifar10_binary(const std::string& dir) {
  auto check_size = [](const std::string& p) {
    std::ifstream f(p, std::ios::binary | std::ios::ate);
    if (!f) throw DataError("cifar10: cannot open " + p);
    const auto sz = static_cast<size_t>(f.tellg());
    if (sz != kCifarBatchBytes)
      throw DataError("cifar10: " + p + " has " + std::to_string(sz) + " bytes, expected " +
                      std::to_string(kCifarBatchBytes));
  };

  Dataset train;
  train.class_count = 10;
  train.split = "train";
  std::vector<double> px;
  std::vector<int> labels;
  for (int b = 1; b <= 5; ++b) {
    const std::string p = dir + "/data_batch_" + std::to_string(b) + ".bin";
    check_size(p);
    Dataset part = load_cifar10_file(p);
    px.insert(px.end(), part.images.data().begin(), part.images.data().end());
    labels.insert(labels.end(), part.labels.begin(), part.labels.end());
  }
  train.labels = std::move(labels);
  train.images = Tensor::from(std::move(px), {static_cast<int>(train.labels.size()),
                                              kCifarChannels, kCifarSide, kCifarSide});
  train.provenance = dir;

  const std::string tp = dir + "/test_batch.bin";
  check_size(tp);
  Dataset test = load_cifar10_file(tp);
  test.split = "test";
  test.provenance = dir;
  return {std::move(train), std::move(test)};
}

void save_cifar10_fixture(const Dataset& d, const std::string& path) {
  if (d.channels() != kCifarChannels || d.images.dim(2) != kCifarSide ||
      d.images.dim(3) != kCifarSide)
    throw DataError("cifar10 fixture: dataset must be 3x32x32");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cifar10 fixture: cannot open " + path);
  const auto& px = d.images.data();
  for (size_t i = 0; i < d.size(); ++i) {
    const auto lab = static_cast<uint8_t>(d.labels[i]);
    f.write(reinterpret_cast<const char*>(&lab), 1);
    for (size_t j = 0; j < 3072; ++j) {
      const auto b = static_cast<uint8_t>(std::lround(px[i * 3072 + j] * 255.0));
      f.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
  if (!f) throw DataError("cifar10 fixture: write failed for " + path);
}

Dataset quantize_to_bytes(const Dataset& d) {
  Dataset out = d;
  std::vector<double> px = d.images.data();
  for (auto& v : px) v = static_cast<double>(std::lround(v * 255.0)) / 255.0;
  out.images = Tensor::from(std::move(px), d.images.shape());
  return out;
}

namespace {

// glyph masks on an s x s grid; a is the half-extent, (cy,cx) the center
bool in_glyph(int cls, int y, int x, int cy, int cx, int a) {
  const int dy = y - cy, dx = x - cx;
  const int th = std::max(1, a / 3);
  switch (cls) {
    case 0:  // filled square
      return std::abs(dy) <= a && std::abs(dx) <= a;
    case 1:  // circle
      return dy * dy + dx * dx <= a * a;
    case 2: {  // upward triangle
      if (dy < -a || dy > a) return false;
      const int half = (dy + a) / 2;
      return std::abs(dx) <= half;
    }
    case 3:  // cross
      return (std::abs(dy) <= th && std::abs(dx) <= a) ||
             (std::abs(dx) <= th && std::abs(dy) <= a);
    case 4: {  // ring
      const int d2 = dy * dy + dx * dx;
      return d2 <= a * a && d2 >= (a * a) * 2 / 5;
    }
    case 5:  // horizontal bar
      return std::abs(dy) <= std::max(1, a / 2) && std::abs(dx) <= a;
    default:
      return false;
  }
}

}  // namespace

Dataset gen_synthetic_shapes(int n_per_class, int class_count, int image_side, double noise_sd,
                             uint64_t seed) {
  if (class_count < 1 || class_count > 6)
    throw ConfigError("synthetic shapes: class_count must be in 1..6, got " +
                      std::to_string(class_count));
  if (image_side < 16) throw ConfigError("synthetic shapes: image_side must be >= 16");
  if (n_per_class < 1) throw ConfigError("synthetic shapes: n_per_class must be positive");

  Rng rng = Rng::split(seed, "synthetic_shapes");
  const int n = n_per_class * class_count;
  const int C = 3;
  std::vector<double> px(static_cast<size_t>(n) * C * image_side * image_side, 0.0);
  std::vector<int> labels(static_cast<size_t>(n));

  size_t idx = 0;
  for (int cls = 0; cls < class_count; ++cls) {
    for (int i = 0; i < n_per_class; ++i, ++idx) {
      labels[idx] = cls;
      const int a = static_cast<int>(std::lround(rng.uniform(0.15, 0.28) * image_side));
      const int lo = a + 1, hi = image_side - a - 2;
      const int cy = rng.uniform_int(lo, std::max(lo, hi));
      const int cx = rng.uniform_int(lo, std::max(lo, hi));
      const double intensity = rng.uniform(0.55, 1.0);
      double* img = px.data() + idx * static_cast<size_t>(C) * image_side * image_side;
      for (int y = 0; y < image_side; ++y)
        for (int x = 0; x < image_side; ++x)
          if (in_glyph(cls, y, x, cy, cx, a)) {
            for (int c = 0; c < C; ++c)
              img[(static_cast<size_t>(c) * image_side + y) * image_side + x] = intensity;
          }
      if (noise_sd > 0.0) {
        const size_t m = static_cast<size_t>(C) * image_side * image_side;
        for (size_t j = 0; j < m; ++j) {
          img[j] += noise_sd * rng.normal();
          img[j] = std::min(1.0, std::max(0.0, img[j]));
        }
      }
    }
  }

  Dataset d;
  d.images = Tensor::from(std::move(px), {n, C, image_side, image_side});
  d.labels = std::move(labels);
  d.class_count = class_count;
  d.provenance = "synthetic_shapes(seed=" + std::to_string(seed) + ")";
  return d;
}

std::vector<Batch> batches(const Dataset& d, int size, uint64_t seed, bool shuffle) {
  if (size < 1) throw ConfigError("batches: size must be >= 1");
  const size_t n = d.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  if (shuffle) {
    Rng rng = Rng::split(seed, "batch_shuffle");
    for (size_t i = n; i > 1; --i) {
      const auto j = static_cast<size_t>(rng.next_u64() % i);
      std::swap(order[i - 1], order[j]);
    }
  }
  const int C = d.images.dim(1), H = d.images.dim(2), W = d.images.dim(3);
  const size_t pix = static_cast<size_t>(C) * H * W;
  std::vector<Batch> out;
  for (size_t start = 0; start < n; start += static_cast<size_t>(size)) {
    const size_t b = std::min(static_cast<size_t>(size), n - start);
    Batch batch;
    batch.indices.assign(order.begin() + static_cast<long>(start),
                         order.begin() + static_cast<long>(start + b));
    std::vector<double> v(b * pix);
    batch.y.resize(b);
    for (size_t k = 0; k < b; ++k) {
      const size_t src = batch.indices[k];
      std::copy(d.images.data().begin() + static_cast<long>(src * pix),
                d.images.data().begin() + static_cast<long>((src + 1) * pix),
                v.begin() + static_cast<long>(k * pix));
      batch.y[k] = d.labels[src];
    }
    batch.x = Tensor::from(std::move(v), {static_cast<int>(b), C, H, W});
    out.push_back(std::move(batch));
  }
  return out;
}

Dataset subset(const Dataset& d, size_t start, size_t count) {
  if (start + count > d.size()) throw DataError("subset: range out of bounds");
  const int C = d.images.dim(1), H = d.images.dim(2), W = d.images.dim(3);
  const size_t pix = static_cast<size_t>(C) * H * W;
  std::vector<double> v(d.images.data().begin() + static_cast<long>(start * pix),
                        d.images.data().begin() + static_cast<long>((start + count) * pix));
  Dataset out;
  out.images = Tensor::from(std::move(v), {static_cast<int>(count), C, H, W});
  out.labels.assign(d.labels.begin() + static_cast<long>(start),
                    d.labels.begin() + static_cast<long>(start + count));
  out.class_count = d.class_count;
  out.split = d.split;
  out.provenance = d.provenance;
  return out;
}

}  // namespace xg::data
