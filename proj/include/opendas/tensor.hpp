#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string>

#include "error.hpp"

namespace opendas {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

// Fills with N(0, std^2) drawn from a caller-owned engine. Row-major order
// so results are reproducible for a given seed.
template <typename T>
void fill_normal(Matrix<T>& m, std::mt19937_64& rng, double std) {
    std::normal_distribution<double> dist(0.0, std);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

template <typename T>
void fill_normal(RowVector<T>& v, std::mt19937_64& rng, double std) {
    std::normal_distribution<double> dist(0.0, std);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<T>(dist(rng));
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

// FNV-1a over the raw bytes. Used to detect any bitwise change of a tensor.
inline std::uint64_t fnv1a(std::span<const unsigned char> bytes,
                           std::uint64_t h = 14695981039346656037ULL) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

template <typename Derived>
std::uint64_t checksum(const Eigen::DenseBase<Derived>& m, std::uint64_t h = 14695981039346656037ULL) {
    using Scalar = typename Derived::Scalar;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            Scalar v = m(r, c);
            unsigned char buf[sizeof(Scalar)];
            std::memcpy(buf, &v, sizeof(Scalar));
            h = fnv1a(buf, h);
        }
    }
    return h;
}

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
}

} // namespace opendas
