#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "unlab/rng.hpp"

namespace unlab {

// Dense row-major tensor of doubles. Rank 0 (scalar), 1 and 2 are the only
// shapes the transformer needs.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor scalar(double value);
    static Tensor gaussian(std::vector<std::size_t> shape, Rng& rng, double sigma);

    std::size_t numel() const;
    bool is_scalar() const { return numel() == 1; }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;
};

// out[m×n] = a[m×k] · b[k×n]. The OpenMP kernel parallelizes over output
// rows; each element is accumulated serially, so results are bit-identical
// to the serial reference at any thread count.
void matmul(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_serial(const Tensor& a, const Tensor& b, Tensor& out);

// out[k×n] += a[m×k]ᵀ · b[m×n]   (accumulating, used by backward passes)
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);
// out[m×k] += a[m×n] · b[k×n]ᵀ
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out);

// FNV-1a over the raw byte representation; used for checkpoint checksums
// and frozen-model immutability assertions.
std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 1469598103934665603ull);
std::uint64_t checksum(const Tensor& t);

} // namespace unlab
