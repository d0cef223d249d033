#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace focl {

// Dense row-major double matrix, the value type of the whole engine.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Caller broke an operation contract (bad shape, wrong mode, missing state).
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

// A value came out non-finite, or training hit a NaN loss.
struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Rejected configuration (unknown field, bad range, incompatible modes).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem / serialization trouble.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

// 64-bit FNV-1a, used for rng stream derivation and config hashing.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

}  // namespace focl
