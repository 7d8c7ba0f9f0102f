#include "pnr/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace pnr {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
    }
}

std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw Error(ErrorCode::ShapeMismatch, "matrix data length " +
                                                  std::to_string(data_.size()) + " != " +
                                                  std::to_string(rows) + "x" +
                                                  std::to_string(cols));
    }
    if (!all_finite()) throw Error(ErrorCode::NonFiniteValue, "matrix contains NaN/Inf");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw Error(ErrorCode::ShapeMismatch, "ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "operator-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), m.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= m.rows()) {
            throw Error(ErrorCode::IndexOutOfRange, "gather_rows index " +
                                                        std::to_string(indices[i]));
        }
        const auto src = m.row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
    if (a.rows() == 0) return b;
    if (b.rows() == 0) return a;
    if (a.cols() != b.cols()) throw Error(ErrorCode::ShapeMismatch, "vstack column mismatch");
    std::vector<double> data = a.data();
    data.insert(data.end(), b.data().begin(), b.data().end());
    Matrix out(a.rows() + b.rows(), a.cols());
    out.data() = std::move(data);
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
    return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw Error(ErrorCode::ShapeMismatch, "matmul inner dims");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

double frobenius_norm(const Matrix& m) noexcept {
    double s = 0.0;
    for (double v : m.data()) s += v * v;
    return std::sqrt(s);
}

Matrix row_l2_normalize(const Matrix& m, double eps) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto in = m.row(r);
        const double norm = std::sqrt(dot(in, in));
        if (!(norm > eps)) {
            throw Error(ErrorCode::ZeroRow, "row " + std::to_string(r) + " has norm " +
                                                std::to_string(norm));
        }
        auto o = out.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) o[c] = in[c] / norm;
    }
    return out;
}

Matrix row_l2_normalize_backward(const Matrix& raw, const Matrix& grad_normalized) {
    require_same_shape(raw, grad_normalized, "row_l2_normalize_backward");
    Matrix out(raw.rows(), raw.cols());
    for (std::size_t r = 0; r < raw.rows(); ++r) {
        const auto x = raw.row(r);
        const auto g = grad_normalized.row(r);
        const double norm = std::sqrt(dot(x, x));
        if (!(norm > kNormEpsilon)) {
            throw Error(ErrorCode::ZeroRow, "row " + std::to_string(r) + " in normalize backward");
        }
        double yg = 0.0;
        for (std::size_t c = 0; c < x.size(); ++c) yg += (x[c] / norm) * g[c];
        auto o = out.row(r);
        for (std::size_t c = 0; c < x.size(); ++c) o[c] = (g[c] - (x[c] / norm) * yg) / norm;
    }
    return out;
}

bool rows_unit_norm(const Matrix& m, double tol) noexcept {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        if (std::abs(std::sqrt(dot(row, row)) - 1.0) > tol) return false;
    }
    return true;
}

Matrix pairwise_dot(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw Error(ErrorCode::ShapeMismatch, "pairwise_dot: " + std::to_string(a.cols()) +
                                                  " vs " + std::to_string(b.cols()) + " cols");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(ai, b.row(j));
    }
    return out;
}

double logsumexp(std::span<const double> v) {
    if (v.empty()) throw Error(ErrorCode::EmptyInput, "logsumexp of empty vector");
    const double m = *std::max_element(v.begin(), v.end());
    if (v.size() == 1) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& f,
                                  const Matrix& x, double eps) {
    if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "finite difference eps must be > 0");
    Matrix probe = x;
    Matrix grad(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + eps;
        const double fp = f(probe);
        probe.data()[i] = orig - eps;
        const double fm = f(probe);
        probe.data()[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw Error(ErrorCode::NonFiniteEvaluation,
                        "f is not finite at probe " + std::to_string(i));
        }
        grad.data()[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

double relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
    require_same_shape(analytic, numeric, "relative_error");
    const double diff = frobenius_norm(analytic - numeric);
    const double scale = std::max({frobenius_norm(analytic), frobenius_norm(numeric), floor});
    return diff / scale;
}

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

std::uint64_t Rng::uniform_index(std::uint64_t bound) noexcept {
    // Rejection on the low end of the range keeps the draw unbiased.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % bound;
    }
}

double Rng::gaussian() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text) noexcept {
    return fnv1a64(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) noexcept {
    std::uint64_t state = root ^ fnv1a64(tag);
    return splitmix64(state);
}

std::vector<double> rng_gaussian(Rng& rng, std::size_t n, double mean, double std) {
    if (std < 0.0) throw Error(ErrorCode::InvalidArgument, "rng_gaussian: std < 0");
    std::vector<double> out(n, mean);
    if (std == 0.0) return out;
    for (double& v : out) v = mean + std * rng.gaussian();
    return out;
}

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = std * rng.gaussian();
    return m;
}

Matrix random_orthogonal(Rng& rng, std::size_t n) {
    // Rows are orthonormalized in place; a degenerate draw is simply redrawn.
    Matrix q = gaussian_matrix(rng, n, n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (;;) {
            auto qi = q.row(i);
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t j = 0; j < i; ++j) {
                    const auto qj = q.row(j);
                    const double proj = dot(qi, qj);
                    for (std::size_t k = 0; k < n; ++k) qi[k] -= proj * qj[k];
                }
            }
            const double norm = std::sqrt(dot(qi, qi));
            if (norm > 1e-8) {
                for (double& v : qi) v /= norm;
                break;
            }
            for (double& v : qi) v = rng.gaussian();
        }
    }
    return q;
}

std::vector<std::size_t> shuffled_indices(Rng& rng, std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng.shuffle(idx);
    return idx;
}

}  // namespace pnr
