// Copyright 2026 The loramerge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Counter-based Gaussian generator. Element e of a stream is a pure function
// of (key, e), so any matrix filled from a stream is reproducible bit for bit
// and independent of fill order or thread count.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "loramerge/linalg.hpp"

namespace loramerge::rng {

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Philox4x32 with 10 rounds (Salmon et al., Random123).
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit constexpr Philox4x32(std::uint64_t key) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  constexpr Block operator()(Block ctr) const noexcept {
    std::array<std::uint32_t, 2> k = key_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ k[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ k[1], static_cast<std::uint32_t>(p0)};
      k[0] += kWeyl0;
      k[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  std::array<std::uint32_t, 2> key_;
};

/// Derives a stream key from a seed and any number of string labels.
template <typename... Labels>
constexpr std::uint64_t stream_key(std::uint64_t seed, const Labels&... labels) noexcept {
  std::uint64_t k = splitmix64(seed);
  ((k = splitmix64(k ^ fnv1a(std::string_view(labels)))), ...);
  return k;
}

class GaussianStream {
 public:
  explicit constexpr GaussianStream(std::uint64_t key) noexcept : philox_(key) {}

  /// Standard normal deviate number `index` of this stream (Box-Muller on
  /// one Philox block per pair of outputs).
  double operator()(std::uint64_t index) const noexcept {
    const std::uint64_t pair = index >> 1;
    const auto block = philox_({static_cast<std::uint32_t>(pair), static_cast<std::uint32_t>(pair >> 32), 0u, 0u});
    const std::uint64_t a = (static_cast<std::uint64_t>(block[0]) << 32) | block[1];
    const std::uint64_t b = (static_cast<std::uint64_t>(block[2]) << 32) | block[3];
    const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;          // [0, 1)
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return (index & 1) ? radius * std::sin(angle) : radius * std::cos(angle);
  }

  /// Fills column-major: entry (i, j) is deviate j * rows + i, so the first
  /// k columns do not depend on how many columns are requested.
  Matrix matrix(Index rows, Index cols, double stddev = 1.0) const {
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
      for (Index i = 0; i < rows; ++i) {
        m(i, j) = stddev * (*this)(static_cast<std::uint64_t>(j * rows + i));
      }
    }
    return m;
  }

 private:
  Philox4x32 philox_;
};

/// Orthonormal basis of R^dim (columns) from the QR factorization of a
/// Gaussian matrix.
inline Matrix random_orthonormal(std::uint64_t key, Index dim, Index cols) {
  const Matrix g = GaussianStream(key).matrix(dim, cols);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(dim, cols);
}

}  // namespace loramerge::rng
