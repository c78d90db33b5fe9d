#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "xg/data.hpp"

using namespace xg;
using namespace xg::data;

TEST_CASE("synthetic shapes: deterministic, validated, within bounds") {
  auto a = gen_synthetic_shapes(20, 4, 16, 0.08, 42);
  auto b = gen_synthetic_shapes(20, 4, 16, 0.08, 42);
  CHECK(a.images.data() == b.images.data());
  CHECK(a.labels == b.labels);
  a.validate();
  CHECK(a.size() == 80);
  CHECK(a.images.shape() == Shape{80, 3, 16, 16});

  auto c = gen_synthetic_shapes(20, 4, 16, 0.08, 43);
  CHECK(a.images.data() != c.images.data());

  CHECK_THROWS_AS(gen_synthetic_shapes(5, 7, 16, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(gen_synthetic_shapes(5, 4, 8, 0.0, 1), ConfigError);
}

TEST_CASE("synthetic shapes: noiseless class-0 images are exact squares") {
  auto d = gen_synthetic_shapes(10, 1, 20, 0.0, 9);
  for (size_t i = 0; i < d.size(); ++i) {
    const size_t pix = 3 * 20 * 20;
    double intensity = 0.0;
    size_t nonzero = 0;
    for (size_t j = 0; j < 400; ++j) {  // first channel
      const double v = d.images.data()[i * pix + j];
      if (v != 0.0) {
        ++nonzero;
        if (intensity == 0.0) intensity = v;
        CHECK(v == intensity);  // single glyph intensity
      }
    }
    // filled square has (2a+1)^2 pixels; check perfect odd square
    const auto side = static_cast<size_t>(std::lround(std::sqrt(static_cast<double>(nonzero))));
    CHECK(side * side == nonzero);
    CHECK(side % 2 == 1);
    CHECK(intensity >= 0.55);
    CHECK(intensity <= 1.0);
  }
}

TEST_CASE("synthetic shapes: per-class mean images are pairwise distinct") {
  auto d = gen_synthetic_shapes(60, 6, 16, 0.05, 11);
  const size_t pix = 3 * 16 * 16;
  std::vector<std::vector<double>> means(6, std::vector<double>(pix, 0.0));
  std::vector<int> counts(6, 0);
  for (size_t i = 0; i < d.size(); ++i) {
    const int c = d.labels[i];
    ++counts[static_cast<size_t>(c)];
    for (size_t j = 0; j < pix; ++j)
      means[static_cast<size_t>(c)][j] += d.images.data()[i * pix + j];
  }
  for (int c = 0; c < 6; ++c)
    for (auto& v : means[static_cast<size_t>(c)]) v /= counts[static_cast<size_t>(c)];
  for (int a = 0; a < 6; ++a)
    for (int b = a + 1; b < 6; ++b) {
      double l2 = 0.0;
      for (size_t j = 0; j < pix; ++j) {
        const double dd = means[static_cast<size_t>(a)][j] - means[static_cast<size_t>(b)][j];
        l2 += dd * dd;
      }
      CHECK(std::sqrt(l2) > 0.05);
    }
}

TEST_CASE("batches: sizes, order, determinism, multiset coverage") {
  auto d = gen_synthetic_shapes(5, 2, 16, 0.0, 3);  // n = 10
  auto bs = batches(d, 4, 7, true);
  REQUIRE(bs.size() == 3);
  CHECK(bs[0].y.size() == 4);
  CHECK(bs[1].y.size() == 4);
  CHECK(bs[2].y.size() == 2);

  // shuffle off preserves order
  auto plain = batches(d, 4, 7, false);
  CHECK(plain[0].indices == std::vector<size_t>{0, 1, 2, 3});

  // same seed, same permutation
  auto bs2 = batches(d, 4, 7, true);
  for (size_t i = 0; i < bs.size(); ++i) CHECK(bs[i].indices == bs2[i].indices);

  // union of batches covers the dataset exactly once
  std::set<size_t> seen;
  for (const auto& b : bs)
    for (size_t ix : b.indices) CHECK(seen.insert(ix).second);
  CHECK(seen.size() == 10);

  CHECK_THROWS_AS(batches(d, 0, 1, false), ConfigError);
}

TEST_CASE("cifar fixture round trip is pixel exact") {
  auto d = gen_synthetic_shapes(8, 2, 32, 0.1, 21);
  auto q = quantize_to_bytes(d);
  const std::string path = "/tmp/xg_cifar_fixture.bin";
  save_cifar10_fixture(q, path);
  auto r = load_cifar10_file(path, 2);
  CHECK(r.images.data() == q.images.data());
  CHECK(r.labels == q.labels);
  std::remove(path.c_str());
}

TEST_CASE("cifar loader: known bytes decode to exact pixel values") {
  const std::string path = "/tmp/xg_cifar_known.bin";
  {
    std::ofstream f(path, std::ios::binary);
    const uint8_t label = 3;
    f.write(reinterpret_cast<const char*>(&label), 1);
    for (int j = 0; j < 3072; ++j) {
      const auto b = static_cast<uint8_t>(j % 256);
      f.write(reinterpret_cast<const char*>(&b), 1);
    }
  }
  auto d = load_cifar10_file(path);
  CHECK(d.size() == 1);
  CHECK(d.labels[0] == 3);
  for (int j = 0; j < 3072; ++j)
    CHECK(d.images.data()[static_cast<size_t>(j)] ==
          doctest::Approx(static_cast<double>(j % 256) / 255.0).epsilon(1e-15));
  std::remove(path.c_str());
}

TEST_CASE("cifar loader errors: truncation and bad label bytes") {
  const std::string path = "/tmp/xg_cifar_bad.bin";
  {
    std::ofstream f(path, std::ios::binary);
    std::vector<char> half(1500, 0);
    f.write(half.data(), static_cast<long>(half.size()));
  }
  CHECK_THROWS_WITH_AS(load_cifar10_file(path), doctest::Contains("3073"), DataError);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    const uint8_t label = 11;  // out of range
    f.write(reinterpret_cast<const char*>(&label), 1);
    std::vector<char> px(3072, 0);
    f.write(px.data(), static_cast<long>(px.size()));
  }
  CHECK_THROWS_WITH_AS(load_cifar10_file(path), doctest::Contains("offset"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("cifar directory loader reads the full five-plus-one layout") {
  const std::string dir = "/tmp/xg_cifar_dir";
  std::remove((dir + "/test_batch.bin").c_str());
  (void)std::system(("mkdir -p " + dir).c_str());
  auto write_batch = [&](const std::string& name, uint8_t base) {
    std::ofstream f(dir + "/" + name, std::ios::binary | std::ios::trunc);
    std::vector<char> rec(3073);
    for (int i = 0; i < 10000; ++i) {
      rec[0] = static_cast<char>((base + i) % 10);
      for (int j = 1; j < 3073; ++j) rec[static_cast<size_t>(j)] = static_cast<char>((i + j) % 256);
      f.write(rec.data(), 3073);
    }
  };
  for (int b = 1; b <= 5; ++b) write_batch("data_batch_" + std::to_string(b) + ".bin", static_cast<uint8_t>(b));
  write_batch("test_batch.bin", 0);

  auto [train, test] = load_cifar10_binary(dir);
  CHECK(train.size() == 50000);
  CHECK(test.size() == 10000);
  CHECK(test.images.shape() == Shape{10000, 3, 32, 32});
  train.validate();

  // wrong-size file is rejected with the byte counts
  {
    std::ofstream f(dir + "/test_batch.bin", std::ios::binary | std::ios::trunc);
    f.write("xx", 2);
  }
  CHECK_THROWS_WITH_AS(load_cifar10_binary(dir), doctest::Contains("30730000"), DataError);
  (void)std::system(("rm -rf " + dir).c_str());
}

TEST_CASE("subset keeps alignment") {
  auto d = gen_synthetic_shapes(5, 2, 16, 0.0, 3);
  auto s = subset(d, 2, 4);
  CHECK(s.size() == 4);
  for (size_t i = 0; i < 4; ++i) CHECK(s.labels[i] == d.labels[i + 2]);
  CHECK_THROWS_AS(subset(d, 8, 4), DataError);
}
