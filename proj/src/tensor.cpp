#include "unlab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace unlab {

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    std::size_t n = 1;
    for (std::size_t dim : shape) n *= dim;
    if (n != data.size()) {
        throw std::invalid_argument("tensor: shape/data size mismatch");
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (std::size_t dim : shape) n *= dim;
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    std::size_t n = 1;
    for (std::size_t dim : shape) n *= dim;
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) {
    return Tensor({}, {value});
}

Tensor Tensor::gaussian(std::vector<std::size_t> shape, Rng& rng, double sigma) {
    Tensor t = zeros(std::move(shape));
    for (double& v : t.data) v = rng.gaussian() * sigma;
    return t;
}

std::size_t Tensor::numel() const {
    std::size_t n = 1;
    for (std::size_t dim : shape) n *= dim;
    return n;
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

static void check_matmul_shapes(const Tensor& a, const Tensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: incompatible shapes " + a.shape_str() +
                                    " and " + b.shape_str());
    }
}

void matmul_serial(const Tensor& a, const Tensor& b, Tensor& out) {
    check_matmul_shapes(a, b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    out = Tensor::zeros({m, n});
    const double* pa = a.data.data();
    const double* pb = b.data.data();
    double* po = out.data.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            const double* brow = pb + kk * n;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
    check_matmul_shapes(a, b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    out = Tensor::zeros({m, n});
    const double* pa = a.data.data();
    const double* pb = b.data.data();
    double* po = out.data.data();
#pragma omp parallel for schedule(static) if (m * n * k > 65536)
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            const double* brow = pb + kk * n;
            double* orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
        throw std::invalid_argument("matmul_tn_acc: incompatible shapes");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const double* pa = a.data.data();
    const double* pb = b.data.data();
    double* po = out.data.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        const double* brow = pb + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            double* orow = po + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows()) {
        throw std::invalid_argument("matmul_nt_acc: incompatible shapes");
    }
    const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
    const double* pa = a.data.data();
    const double* pb = b.data.data();
    double* po = out.data.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * n;
        double* orow = po + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = pb + kk * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            orow[kk] += acc;
        }
    }
}

std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t checksum(const Tensor& t) {
    std::uint64_t h = fnv1a64(t.shape.data(), t.shape.size() * sizeof(std::size_t));
    return fnv1a64(t.data.data(), t.data.size() * sizeof(double), h);
}

} // namespace unlab
