#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string_view>

namespace girl {

using Rng = std::mt19937_64;

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Every random stream in a run is derived from the master seed and a
// (component, index, iteration) triple, so a stream never depends on how
// many draws other components made before it.
inline uint64_t derive_seed(uint64_t master, std::string_view component, uint64_t index = 0,
                            uint64_t iteration = 0) {
  uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : component) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  uint64_t s = splitmix64(master ^ h);
  s = splitmix64(s ^ index);
  s = splitmix64(s ^ (iteration * 0xD1B54A32D192ED03ULL));
  return s;
}

inline Rng make_rng(uint64_t master, std::string_view component, uint64_t index = 0,
                    uint64_t iteration = 0) {
  return Rng(derive_seed(master, component, index, iteration));
}

inline Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo,
                                      double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  return m;
}

}  // namespace girl
