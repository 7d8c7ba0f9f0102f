#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "pnr/error.hpp"

namespace pnr {

// Dense row-major matrix of 64-bit floats. Entry (r, c) lives at data[r * cols + c];
// every file format in this project serializes in the same order.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    // Throws ShapeMismatch if data.size() != rows * cols, NonFiniteValue on NaN/Inf.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const noexcept;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s) noexcept;

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

// Selects rows by index, in the order given.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);
// Stacks a on top of b. Either may have zero rows; cols must agree otherwise.
Matrix vstack(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
// a (n x k) times b (k x m).
Matrix matmul(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double squared_distance(std::span<const double> a, std::span<const double> b) noexcept;
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& m) noexcept;

inline constexpr double kNormEpsilon = 1e-12;

// Scales every row to unit L2 norm. Throws ZeroRow if any row norm <= eps.
Matrix row_l2_normalize(const Matrix& m, double eps = kNormEpsilon);

// Chain rule through row_l2_normalize: given the raw input and dL/d(normalized),
// returns dL/d(raw). For y = x/|x|: dx = (g - y (y.g)) / |x|.
Matrix row_l2_normalize_backward(const Matrix& raw, const Matrix& grad_normalized);

// True if every row has unit norm within tol.
bool rows_unit_norm(const Matrix& m, double tol) noexcept;

// out(i, j) = sum_k a(i, k) * b(j, k). Throws ShapeMismatch if a.cols != b.cols.
Matrix pairwise_dot(const Matrix& a, const Matrix& b);

// log(sum(exp(v))) with max shift. Throws EmptyInput on empty input.
double logsumexp(std::span<const double> v);

// Central differences (f(x + eps e_ij) - f(x - eps e_ij)) / (2 eps) for every entry.
// Throws NonFiniteEvaluation if any probe returns NaN/Inf.
Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& f,
                                  const Matrix& x, double eps = 1e-5);

// Relative error |a - b| / max(|a|, |b|, floor), measured in the Frobenius norm.
double relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-8);

// xoshiro256** seeded through splitmix64. Streams are identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64() noexcept;
    // Uniform in [0, 1) using the top 53 bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept;
    // Unbiased integer in [0, bound). bound must be > 0.
    std::uint64_t uniform_index(std::uint64_t bound) noexcept;
    // Standard normal via Box-Muller; the second variate of each pair is cached.
    double gaussian() noexcept;

    // Fisher-Yates, drawing from this generator.
    template <typename T>
    void shuffle(std::vector<T>& items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;

// Per-component seed: splitmix64 finalizer of (root XOR fnv1a64(tag)).
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) noexcept;

// n draws of mean + std * N(0, 1). std == 0 returns n copies of mean.
std::vector<double> rng_gaussian(Rng& rng, std::size_t n, double mean, double std);

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std);

// Haar-ish random orthogonal matrix: Gram-Schmidt (two passes) on a Gaussian matrix.
Matrix random_orthogonal(Rng& rng, std::size_t n);

// Identity permutation 0..n-1 shuffled with rng.
std::vector<std::size_t> shuffled_indices(Rng& rng, std::size_t n);

}  // namespace pnr
