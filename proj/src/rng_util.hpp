#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace fairbase::rng {

// Bit-stable uniform in [0, 1): identical across platforms for a given engine
// state, unlike std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

// Index in [0, bound); bound must be positive.
inline std::size_t pick_index(std::mt19937_64& engine, std::size_t bound) {
  auto index = static_cast<std::size_t>(uniform01(engine) * static_cast<double>(bound));
  return index < bound ? index : bound - 1;
}

// Fisher-Yates on top of uniform01, again for cross-platform stability.
template <typename T>
void shuffle(std::vector<T>& values, std::mt19937_64& engine) {
  for (std::size_t i = values.size(); i > 1; --i) {
    std::swap(values[i - 1], values[pick_index(engine, i)]);
  }
}

// Box-Muller with a cached spare; std::normal_distribution's algorithm is
// unspecified, so it cannot back a portable deterministic stream.
class Gaussian {
 public:
  double operator()(std::mt19937_64& engine) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform01(engine);  // (0, 1], keeps log finite
    const double u2 = uniform01(engine);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fairbase::rng
