#pragma once

// CaSSLe baseline: SimCLR InfoNCE on the current views plus a contrastive
// distillation term whose negatives come only from the previous model.
// Summation order matches the library.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "pnr/numerics.hpp"

namespace oracle {

inline double row_dot(const pnr::Matrix& a, std::size_t i, const pnr::Matrix& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
    return s;
}

// Mean over anchors of -log softmax of the positive among `negatives`, where
// negatives is the concatenation of (matrix, skip-own-row) pairs.
struct Block {
    const pnr::Matrix* m;
    bool skip_self;
};

inline double info_nce(const pnr::Matrix& anchors, const pnr::Matrix& positives,
                       const std::vector<Block>& blocks, double tau) {
    double mean = 0.0;
    for (std::size_t i = 0; i < anchors.rows(); ++i) {
        std::vector<double> logits;
        for (const Block& b : blocks)
            for (std::size_t r = 0; r < b.m->rows(); ++r)
                if (!(b.skip_self && r == i)) logits.push_back(row_dot(anchors, i, *b.m, r) / tau);
        const double pos = row_dot(anchors, i, positives, i) / tau;
        const double mx = *std::max_element(logits.begin(), logits.end());
        double s = 0.0;
        for (double l : logits) s += std::exp(l - mx);
        const double loss = (mx - pos) + std::log(s);
        mean += (loss - mean) / static_cast<double>(i + 1);
    }
    return mean;
}

// SimCLR term for anchor view x, positive view y.
inline double simclr(const pnr::Matrix& x, const pnr::Matrix& y, const pnr::Matrix* queue, double tau) {
    std::vector<Block> blocks{{&x, true}, {&y, false}};
    if (queue) blocks.push_back({queue, false});
    return info_nce(x, y, blocks, tau);
}

// Distillation term: predictor output g against the previous model's view.
inline double distill(const pnr::Matrix& g, const pnr::Matrix& x_prev, const pnr::Matrix& y_prev,
                      const pnr::Matrix* queue, double tau) {
    std::vector<Block> blocks{{&x_prev, true}, {&y_prev, false}};
    if (queue) blocks.push_back({queue, false});
    return info_nce(g, x_prev, blocks, tau);
}

struct CasslePair {
    const pnr::Matrix& zA;
    const pnr::Matrix& zB;
    const pnr::Matrix& pA;
    const pnr::Matrix& pB;
    const pnr::Matrix& gA;
    const pnr::Matrix& gB;
    const pnr::Matrix* cur_queue = nullptr;
    const pnr::Matrix* prev_queue = nullptr;
};

inline double cassle_total(const CasslePair& v, double tau) {
    double ab = simclr(v.zA, v.zB, v.cur_queue, tau);
    ab += distill(v.gA, v.pA, v.pB, v.prev_queue, tau);
    double ba = simclr(v.zB, v.zA, v.cur_queue, tau);
    ba += distill(v.gB, v.pB, v.pA, v.prev_queue, tau);
    return 0.5 * (ab + ba);
}

}  // namespace oracle
