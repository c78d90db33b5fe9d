#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace xg {

// Error taxonomy; the CLI maps these onto exit codes (config=2, data=3, numeric=4).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 14695981039346656037ull);

// Derives an independent stream seed from a root seed and a purpose label, so
// every consumer (init, shuffling, attack batching, ...) gets its own stream.
uint64_t split_seed(uint64_t root, std::string_view purpose);

// mt19937_64 engine with portable value transforms. std::uniform_real_distribution
// and friends are implementation-defined, so the mappings are done by hand.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  static Rng split(uint64_t root, std::string_view purpose) {
    return Rng(split_seed(root, purpose));
  }

  uint64_t next_u64() { return eng_(); }

  // [0,1) with 53-bit resolution
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller, pairs cached
  double normal();

  // inclusive range, rejection-free modulo bias is irrelevant at our ranges
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(eng_() % static_cast<uint64_t>(hi - lo + 1));
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xg
