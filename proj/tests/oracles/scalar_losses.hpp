#pragma once

// Direct scalar evaluations of the non-contrastive objectives.

#include <cmath>

#include "pnr/numerics.hpp"

namespace oracle {

inline double mean_sq(const pnr::Matrix& a, const pnr::Matrix& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double row = 0.0;
        for (std::size_t k = 0; k < a.cols(); ++k) row += (a(i, k) - b(i, k)) * (a(i, k) - b(i, k));
        total += row;
    }
    return total / static_cast<double>(a.rows());
}

inline double column_mean(const pnr::Matrix& z, std::size_t c) {
    double m = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) m += z(i, c);
    return m / static_cast<double>(z.rows());
}

inline double covariance(const pnr::Matrix& z, std::size_t c, std::size_t e) {
    const double mc = column_mean(z, c);
    const double me = column_mean(z, e);
    double s = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) s += (z(i, c) - mc) * (z(i, e) - me);
    return s / static_cast<double>(z.rows() - 1);
}

inline double vicreg_variance(const pnr::Matrix& z, double gamma, double eps) {
    double s = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c)
        s += std::max(0.0, gamma - std::sqrt(covariance(z, c, c) + eps));
    return s / static_cast<double>(z.cols());
}

inline double vicreg_covariance(const pnr::Matrix& z) {
    double s = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c)
        for (std::size_t e = 0; e < z.cols(); ++e)
            if (c != e) s += covariance(z, c, e) * covariance(z, c, e);
    return s / static_cast<double>(z.cols());
}

inline double vicreg(const pnr::Matrix& a, const pnr::Matrix& b, double inv, double var, double cov,
                     double gamma, double eps) {
    return inv * mean_sq(a, b) +
           var * (vicreg_variance(a, gamma, eps) + vicreg_variance(b, gamma, eps)) +
           cov * (vicreg_covariance(a) + vicreg_covariance(b));
}

// Cross-correlation of column-standardized views (biased std).
inline double barlow(const pnr::Matrix& a, const pnr::Matrix& b, double lambda) {
    const std::size_t n = a.rows();
    const std::size_t d = a.cols();
    auto standardized = [&](const pnr::Matrix& z, std::size_t i, std::size_t c) {
        const double m = column_mean(z, c);
        double v = 0.0;
        for (std::size_t r = 0; r < n; ++r) v += (z(r, c) - m) * (z(r, c) - m);
        return (z(i, c) - m) / std::sqrt(v / static_cast<double>(n));
    };
    double loss = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t e = 0; e < d; ++e) {
            double cc = 0.0;
            for (std::size_t i = 0; i < n; ++i) cc += standardized(a, i, c) * standardized(b, i, e);
            cc /= static_cast<double>(n);
            loss += c == e ? (1.0 - cc) * (1.0 - cc) : lambda * cc * cc;
        }
    }
    return loss;
}

}  // namespace oracle
