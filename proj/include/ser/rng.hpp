#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace ser {

// Portable seeded generator. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the distributions below are written out
// by hand because the std:: distributions are implementation-defined.
//
//   uniform01()        : (next() >> 11) * 2^-53, in [0, 1)
//   uniform_index(n)   : rejection sampling on the top bits, in [0, n)
//   normal()           : Box-Muller on two uniform01() draws
//   shuffle(range)     : Fisher-Yates from the back, j = uniform_index(i + 1)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  std::size_t uniform_index(std::size_t n);
  double normal();

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace ser
