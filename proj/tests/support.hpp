#pragma once

#include <cstdint>
#include <vector>

#include "pnr/losses.hpp"
#include "pnr/numerics.hpp"

namespace testing {

inline pnr::Matrix random_matrix(pnr::Rng& rng, std::size_t rows, std::size_t cols, double std = 1.0) {
    return pnr::gaussian_matrix(rng, rows, cols, std);
}

inline pnr::Matrix random_unit(pnr::Rng& rng, std::size_t rows, std::size_t cols) {
    return pnr::row_l2_normalize(pnr::gaussian_matrix(rng, rows, cols, 1.0));
}

inline pnr::ContrastiveViews random_views(pnr::Rng& rng, std::size_t n, std::size_t d) {
    pnr::ContrastiveViews v;
    v.zA_t = random_unit(rng, n, d);
    v.zB_t = random_unit(rng, n, d);
    v.zA_prev = random_unit(rng, n, d);
    v.zB_prev = random_unit(rng, n, d);
    v.gA_t = random_unit(rng, n, d);
    v.gB_t = random_unit(rng, n, d);
    return v;
}

// Rows of an n x n matrix whose off-diagonal dots and diagonal are all equal:
// every row is the same unit vector.
inline pnr::Matrix repeated_row(std::size_t n, std::size_t d) {
    pnr::Matrix m(n, d);
    for (std::size_t i = 0; i < n; ++i) m(i, 0) = 1.0;
    return m;
}

inline bool bitwise_equal(const pnr::Matrix& a, const pnr::Matrix& b) {
    return a.same_shape(b) && a.data() == b.data();
}

}  // namespace testing
