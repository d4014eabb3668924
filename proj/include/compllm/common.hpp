#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace compllm {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

using TokenId = std::int32_t;

// Row-major everywhere: rows are sequence positions, columns are feature dims.
template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using ColVector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Bad caller input (out-of-range ids, empty sequences, shape mismatches).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sequence or cache would exceed a configured capacity.
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem / serialization failure.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exact (query, key) interaction counts. The causal pattern is identical for
// every layer and head, so counts are tracked once per forward in units of
// "pairs per layer per head".
struct PairCounter {
  std::uint64_t pairs = 0;
};

// Pairs in one causal pass over n rows: sum_{i=1..n} i.
inline std::uint64_t causal_pair_count(std::uint64_t n) { return n * (n + 1) / 2; }

template <class S>
void fill_normal(Matrix<S>& m, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      m(i, j) = static_cast<S>(dist(rng));
    }
  }
}

template <class S>
bool bit_equal(const Matrix<S>& a, const Matrix<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return (a.array() == b.array()).all();
}

}  // namespace compllm
