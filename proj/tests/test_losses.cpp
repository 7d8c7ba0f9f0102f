#include <doctest.h>

#include <cmath>

#include "oracles/cassle_reference.hpp"
#include "oracles/scalar_losses.hpp"
#include "pnr/losses.hpp"
#include "support.hpp"

using pnr::Matrix;
using pnr::Method;
using pnr::Regime;

namespace {

Matrix unit(std::size_t d, std::size_t k) {
    Matrix m(1, d);
    m(0, k) = 1.0;
    return m;
}

pnr::ContrastiveViews uniform_views(std::size_t n, std::size_t d) {
    pnr::ContrastiveViews v;
    v.zA_t = v.zB_t = v.zA_prev = v.zB_prev = v.gA_t = v.gB_t = testing::repeated_row(n, d);
    return v;
}

pnr::ContrastiveViews swapped(const pnr::ContrastiveViews& v) {
    pnr::ContrastiveViews s = v;
    std::swap(s.zA_t, s.zB_t);
    std::swap(s.zA_prev, s.zB_prev);
    std::swap(s.gA_t, s.gB_t);
    return s;
}

pnr::PnrConfig config(Method m, Regime r) {
    return pnr::PnrConfig::defaults_for(m, r);
}

// Columns of a 4 x 2 batch: zero mean, orthogonal, unbiased variance 16/3.
Matrix orthogonal_columns() {
    return Matrix::from_rows({{2, 2}, {2, -2}, {-2, 2}, {-2, -2}});
}

// Four zero-mean, mutually orthogonal +-1 columns on 8 points.
Matrix walsh(std::initializer_list<int> which) {
    const int w[8][4] = {{1, 1, 1, 1},   {1, 1, -1, -1}, {1, -1, 1, -1}, {1, -1, -1, 1},
                         {-1, 1, 1, -1}, {-1, 1, -1, 1}, {-1, -1, 1, 1}, {-1, -1, -1, -1}};
    Matrix m(8, which.size());
    std::size_t c = 0;
    for (int k : which) {
        for (std::size_t i = 0; i < 8; ++i) m(i, c) = w[i][k];
        ++c;
    }
    return m;
}

pnr::NonContrastiveViews random_nc_views(pnr::Rng& rng, std::size_t n, std::size_t d) {
    pnr::NonContrastiveViews v;
    v.zA_t = testing::random_matrix(rng, n, d);
    v.zB_t = testing::random_matrix(rng, n, d);
    v.zA_prev = testing::random_matrix(rng, n, d);
    v.zB_prev = testing::random_matrix(rng, n, d);
    v.gA_t = testing::random_matrix(rng, n, d);
    v.gB_t = testing::random_matrix(rng, n, d);
    v.qA_t = testing::random_unit(rng, n, d);
    v.qB_t = testing::random_unit(rng, n, d);
    v.targetA = testing::random_unit(rng, n, d);
    v.targetB = testing::random_unit(rng, n, d);
    return v;
}

pnr::NonContrastiveViews normalized_for_byol(pnr::NonContrastiveViews v) {
    v.gA_t = pnr::row_l2_normalize(v.gA_t);
    v.gB_t = pnr::row_l2_normalize(v.gB_t);
    v.zA_prev = pnr::row_l2_normalize(v.zA_prev);
    v.zB_prev = pnr::row_l2_normalize(v.zB_prev);
    return v;
}

void check_same(const pnr::LossResult& a, const pnr::LossResult& b) {
    CHECK(a.value == b.value);
    CHECK(testing::bitwise_equal(a.grad_zA_t, b.grad_zA_t));
    CHECK(testing::bitwise_equal(a.grad_zB_t, b.grad_zB_t));
    CHECK(testing::bitwise_equal(a.grad_gA_t, b.grad_gA_t));
    CHECK(testing::bitwise_equal(a.grad_gB_t, b.grad_gB_t));
    CHECK(testing::bitwise_equal(a.grad_qA_t, b.grad_qA_t));
    CHECK(testing::bitwise_equal(a.grad_qB_t, b.grad_qB_t));
}

}  // namespace

TEST_CASE("uniform similarity counts denominator terms") {
    for (std::size_t n = 1; n <= 8; ++n) {
        const auto v = uniform_views(n, 4);
        const double with_pn = std::log(static_cast<double>(2 * n - 1 + 2 * n - 1));
        const double without_pn = std::log(static_cast<double>(2 * n - 1));
        CHECK(pnr::pnr_l1(v, 0.2).value == with_pn);
        CHECK(pnr::pnr_l2(v, 0.2).value == with_pn);
        CHECK(pnr::pnr_l1(v, 0.2, false).value == without_pn);
        CHECK(pnr::pnr_l2(v, 0.2, false).value == without_pn);
    }
}

TEST_CASE("uniform similarity with queue extras") {
    for (std::size_t q = 0; q <= 5; ++q) {
        auto v = uniform_views(1, 3);
        v.extra_neg_cur = testing::repeated_row(q, 3);
        v.extra_neg_prev = testing::repeated_row(q, 3);
        // N = 1: one current negative (zB), one previous pseudo-negative (zB_prev), plus queues.
        const double expected = std::log(static_cast<double>(2 + 2 * q));
        CHECK(pnr::pnr_l1(v, 0.5).value == expected);
        CHECK(pnr::pnr_l2(v, 0.5).value == expected);
    }
    // One current-queue entry: N1 = {zB, queue row}, PN1 = {zB_prev}.
    auto v = uniform_views(1, 3);
    v.extra_neg_cur = testing::repeated_row(1, 3);
    CHECK(pnr::pnr_l1(v, 0.5).value == std::log(3.0));
    CHECK(pnr::pnr_l1(v, 0.5, false).value == std::log(2.0));
}

TEST_CASE("single-sample hand values") {
    SUBCASE("plasticity term with orthogonal pseudo-negatives") {
        pnr::ContrastiveViews v;
        v.zA_t = unit(3, 0);
        v.zB_t = unit(3, 0);
        v.zA_prev = unit(3, 1);
        v.zB_prev = unit(3, 1);
        CHECK(pnr::pnr_l1(v, 1.0).value == doctest::Approx(std::log(std::exp(1.0) + 1.0) - 1.0).epsilon(1e-15));
    }
    SUBCASE("distillation term with orthogonal pseudo-negatives") {
        pnr::ContrastiveViews v;
        v.gA_t = unit(3, 0);
        v.zA_prev = unit(3, 0);
        v.zB_prev = unit(3, 1);
        v.zB_t = unit(3, 1);
        v.zA_t = unit(3, 2);
        CHECK(pnr::pnr_l2(v, 1.0).value == doctest::Approx(std::log(2.0) - 1.0).epsilon(1e-15));
    }
    SUBCASE("fine-tuning counting, N = 2") {
        const auto v = uniform_views(2, 4);
        pnr::ContrastiveViews ft;
        ft.zA_t = v.zA_t;
        ft.zB_t = v.zB_t;
        CHECK(pnr::cssl_total(ft, config(Method::SimCLR, Regime::FT)).value == std::log(3.0));
    }
}

TEST_CASE("cssl_total view swap symmetry") {
    pnr::Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        auto v = testing::random_views(rng, 2 + trial % 7, 5);
        if (trial % 2) {
            v.extra_neg_cur = testing::random_unit(rng, 7, 5);
            v.extra_neg_prev = testing::random_unit(rng, 4, 5);
        }
        for (Regime r : {Regime::FT, Regime::CaSSLe, Regime::PNR}) {
            const auto cfg = config(Method::SimCLR, r);
            const auto a = pnr::cssl_total(v, cfg);
            const auto b = pnr::cssl_total(swapped(v), cfg);
            CHECK(std::abs(a.value - b.value) < 1e-12);
            CHECK(pnr::max_abs_diff(a.grad_zA_t, b.grad_zB_t) < 1e-12);
        }
    }
}

TEST_CASE("symmetric views give equal orderings") {
    pnr::Rng rng(22);
    auto v = testing::random_views(rng, 5, 4);
    v.zB_t = v.zA_t;
    v.zB_prev = v.zA_prev;
    v.gB_t = v.gA_t;
    const double one_ordering = pnr::pnr_l1(v, 0.2).value + pnr::pnr_l2(v, 0.2).value;
    CHECK(pnr::cssl_total(v, config(Method::SimCLR, Regime::PNR)).value == one_ordering);
}

TEST_CASE("empty pseudo-negative sets reproduce the CaSSLe baseline bitwise") {
    pnr::Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        auto v = testing::random_views(rng, 1 + trial % 9, 6);
        const bool queues = trial % 3 == 0;
        if (queues) {
            v.extra_neg_cur = testing::random_unit(rng, 11, 6);
            v.extra_neg_prev = testing::random_unit(rng, 5, 6);
        }
        const Matrix* cq = queues ? &*v.extra_neg_cur : nullptr;
        const Matrix* pq = queues ? &*v.extra_neg_prev : nullptr;
        const double tau = 0.1 + 0.05 * (trial % 5);
        auto cfg = config(Method::SimCLR, Regime::CaSSLe);
        cfg.tau = tau;

        CHECK(pnr::pnr_l1(v, tau, false).value == oracle::simclr(v.zA_t, v.zB_t, cq, tau));
        CHECK(pnr::pnr_l2(v, tau, false).value ==
              oracle::distill(v.gA_t, v.zA_prev, v.zB_prev, pq, tau));
        const oracle::CasslePair pair{v.zA_t, v.zB_t, v.zA_prev, v.zB_prev, v.gA_t, v.gB_t, cq, pq};
        CHECK(pnr::cssl_total(v, cfg).value == oracle::cassle_total(pair, tau));
    }
}

TEST_CASE("fine-tuning ignores the previous model") {
    pnr::Rng rng(24);
    const auto v = testing::random_views(rng, 6, 5);
    auto other = v;
    other.zA_prev = testing::random_unit(rng, 6, 5);
    other.gA_t = testing::random_unit(rng, 6, 5);
    pnr::ContrastiveViews bare;
    bare.zA_t = v.zA_t;
    bare.zB_t = v.zB_t;
    const auto cfg = config(Method::SimCLR, Regime::FT);
    const auto a = pnr::cssl_total(v, cfg);
    check_same(a, pnr::cssl_total(other, cfg));
    check_same(a, pnr::cssl_total(bare, cfg));
    CHECK(a.grad_gA_t.empty());
    CHECK(a.value == 0.5 * (oracle::simclr(v.zA_t, v.zB_t, nullptr, 0.2) +
                            oracle::simclr(v.zB_t, v.zA_t, nullptr, 0.2)));
}

TEST_CASE("gradients only reach current-model quantities") {
    pnr::Rng rng(25);
    const auto v = testing::random_views(rng, 4, 3);
    const auto l1 = pnr::pnr_l1(v, 0.3);
    CHECK(l1.grad_zA_t.same_shape(v.zA_t));
    CHECK(l1.grad_zB_t.same_shape(v.zB_t));
    CHECK(l1.grad_gA_t.empty());
    const auto l2 = pnr::pnr_l2(v, 0.3);
    CHECK(l2.grad_gA_t.same_shape(v.gA_t));
    CHECK(l2.grad_qA_t.empty());
}

TEST_CASE("contrastive input validation") {
    pnr::Rng rng(26);
    auto v = testing::random_views(rng, 3, 4);
    v.zA_t(0, 0) += 0.5;
    CHECK_THROWS_AS(pnr::pnr_l1(v, 0.2), pnr::Error);
    CHECK_NOTHROW(pnr::pnr_l1(v, 0.2, true, pnr::NormCheck::Skip));
    auto w = testing::random_views(rng, 3, 4);
    w.zB_t = testing::random_unit(rng, 2, 4);
    CHECK_THROWS_AS(pnr::pnr_l1(w, 0.2), pnr::Error);
    auto bad = config(Method::SimCLR, Regime::PNR);
    bad.tau = 0.0;
    CHECK_THROWS_AS(pnr::validate(bad), pnr::Error);
}

TEST_CASE("closed-form anchor gradient") {
    pnr::Rng rng(27);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + trial % 6;
        const std::size_t d = 3 + trial % 4;
        auto v = testing::random_views(rng, n, d);
        // Attract targets coincide: the attract part is exactly -p.
        if (trial % 5 == 0) v.zA_prev = v.zB_t;
        if (trial % 2) {
            v.extra_neg_cur = testing::random_unit(rng, 3, d);
            v.extra_neg_prev = testing::random_unit(rng, 2, d);
        }
        const double tau = 0.15 + 0.1 * (trial % 3);
        const auto cf = pnr::closed_form_grad(v, tau);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(std::abs(cf.mass_l1[i] + cf.mass_l2[i] - 1.0) <= 1e-12);

            // Softmax-weighted repel term computed independently; what is left is the attract term.
            std::vector<const Matrix*> cur{&v.zA_t, &v.zB_t};
            std::vector<const Matrix*> prev{&v.zA_prev, &v.zB_prev};
            if (v.extra_neg_cur) cur.push_back(&*v.extra_neg_cur);
            if (v.extra_neg_prev) prev.push_back(&*v.extra_neg_prev);
            std::vector<double> repel(d, 0.0);
            for (int set = 0; set < 2; ++set) {
                std::vector<std::pair<const Matrix*, std::size_t>> members;
                for (const Matrix* m : cur)
                    for (std::size_t r = 0; r < m->rows(); ++r)
                        if (!(m == &v.zA_t && r == i)) members.push_back({m, r});
                for (const Matrix* m : prev)
                    for (std::size_t r = 0; r < m->rows(); ++r)
                        if (!(m == &v.zA_prev && r == i)) members.push_back({m, r});
                double z = 0.0;
                std::vector<double> e;
                for (auto [m, r] : members) e.push_back(std::exp(oracle::row_dot(v.zA_t, i, *m, r) / tau));
                for (double x : e) z += x;
                for (std::size_t k = 0; k < members.size(); ++k)
                    for (std::size_t c = 0; c < d; ++c)
                        repel[c] += 0.5 * e[k] / z * (*members[k].first)(members[k].second, c);
            }
            for (std::size_t c = 0; c < d; ++c) {
                const double attract = cf.grad(i, c) * tau - repel[c];
                CHECK(std::abs(attract + 0.5 * (v.zB_t(i, c) + v.zA_prev(i, c))) < 1e-12);
            }
        }
    }

}

TEST_CASE("byol terms") {
    pnr::Rng rng(31);
    const Matrix a = testing::random_unit(rng, 5, 4);
    CHECK(pnr::byol_loss(a, a).value == 0.0);
    Matrix e1(3, 2), e2(3, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        e1(i, 0) = 1.0;
        e2(i, 1) = 1.0;
    }
    CHECK(pnr::byol_loss(e1, e2).value == 2.0);

    const Matrix g = testing::random_unit(rng, 4, 6);
    const Matrix pa = testing::random_unit(rng, 4, 6);
    const Matrix pb = testing::random_unit(rng, 4, 6);
    CHECK(pnr::byol_pnr_l2(g, pa, pb, 0.0).value == pnr::byol_loss(g, pa).value);
    for (double lambda : {0.0, 0.5, 3.0}) CHECK(pnr::byol_pnr_l2(g, g, g, lambda).value == 0.0);
    const double expected = oracle::mean_sq(g, pa) - 0.5 * oracle::mean_sq(g, pb);
    CHECK(std::abs(pnr::byol_pnr_l2(g, pa, pb, 0.5).value - expected) < 1e-12);
    CHECK(pnr::byol_pnr_l2(g, pa, pb, 0.5).grad_second.empty());
}

TEST_CASE("vicreg terms") {
    const pnr::VicregWeights w;
    SUBCASE("aligned decorrelated wide batch is a zero") {
        const Matrix z = orthogonal_columns();
        CHECK(pnr::vicreg_variance(z, w) == 0.0);
        CHECK(pnr::vicreg_covariance(z) == 0.0);
        CHECK(pnr::vicreg_loss(z, z, w).value == 0.0);
    }
    SUBCASE("constant batch pays only the variance hinge") {
        const Matrix z = Matrix::from_rows({{0.3, -1.0, 2.0}, {0.3, -1.0, 2.0}, {0.3, -1.0, 2.0}});
        CHECK(pnr::vicreg_covariance(z) == 0.0);
        CHECK(pnr::vicreg_loss(z, z, w).value ==
              doctest::Approx(2.0 * w.variance * (w.gamma - std::sqrt(w.eps))).epsilon(1e-14));
    }
    SUBCASE("scalar oracle") {
        pnr::Rng rng(32);
        const Matrix a = testing::random_matrix(rng, 7, 5, 0.8);
        const Matrix b = testing::random_matrix(rng, 7, 5, 0.8);
        CHECK(std::abs(pnr::vicreg_loss(a, b, w).value -
                       oracle::vicreg(a, b, w.invariance, w.variance, w.covariance, w.gamma, w.eps)) < 1e-12);
        const Matrix g = testing::random_matrix(rng, 7, 5);
        CHECK(std::abs(pnr::vicreg_pnr_l2(g, a, b, 25.0, 23.0).value -
                       (0.5 * 25.0 * oracle::mean_sq(g, a) - 0.5 * 23.0 * oracle::mean_sq(g, b))) < 1e-12);
        CHECK(pnr::vicreg_pnr_l2(g, a, b, 1.0, 0.0).value > 0.0);
        CHECK(pnr::vicreg_pnr_l2(a, a, b, 1.0, 0.0).value == 0.0);
        for (double lam : {0.0, 1.0, 23.0}) CHECK(pnr::vicreg_pnr_l2(g, a, a, lam, lam).value == 0.0);
    }
    SUBCASE("too small a batch") {
        CHECK_THROWS_AS(pnr::vicreg_loss(Matrix(1, 3), Matrix(1, 3), w), pnr::Error);
    }
}

TEST_CASE("barlow terms") {
    SUBCASE("identity cross-correlation") {
        const Matrix z = walsh({0, 1, 2});
        CHECK(pnr::barlow_loss(z, z, 5e-3).value == 0.0);
    }
    SUBCASE("decorrelated views cost one per dimension") {
        CHECK(pnr::barlow_loss(walsh({0, 1}), walsh({2, 3}), 5e-3).value == 2.0);
    }
    SUBCASE("scalar oracle") {
        pnr::Rng rng(33);
        const Matrix a = testing::random_matrix(rng, 9, 4);
        const Matrix b = testing::random_matrix(rng, 9, 4);
        CHECK(std::abs(pnr::barlow_loss(a, b, 5e-3).value - oracle::barlow(a, b, 5e-3)) < 1e-12);
    }
    SUBCASE("zero-variance column") {
        Matrix a = walsh({1, 2});
        for (std::size_t i = 0; i < a.rows(); ++i) a(i, 1) = 4.0;
        try {
            pnr::barlow_loss(a, walsh({1, 2}), 5e-3);
            FAIL("expected ZeroVarianceColumn");
        } catch (const pnr::Error& e) {
            CHECK(e.code() == pnr::ErrorCode::ZeroVarianceColumn);
        }
    }
}

TEST_CASE("non-contrastive totals") {
    pnr::Rng rng(34);
    SUBCASE("zero pseudo-negative weight reproduces CaSSLe bitwise") {
        for (Method m : {Method::BYOL, Method::VICReg, Method::Barlow}) {
            auto v = random_nc_views(rng, 6, 4);
            if (m == Method::BYOL) v = normalized_for_byol(v);
            auto pnr_cfg = config(m, Regime::PNR);
            pnr_cfg.lambda = 0.0;
            pnr_cfg.lambda_pnr = 0.0;
            check_same(pnr::noncontrastive_pnr_total(v, pnr_cfg),
                       pnr::noncontrastive_pnr_total(v, config(m, Regime::CaSSLe)));
        }
    }
    SUBCASE("fine-tuning drops every previous-model term") {
        for (Method m : {Method::BYOL, Method::VICReg, Method::Barlow}) {
            auto v = random_nc_views(rng, 6, 4);
            if (m == Method::BYOL) v = normalized_for_byol(v);
            auto w = v;
            w.zA_prev = pnr::row_l2_normalize(testing::random_matrix(rng, 6, 4));
            w.gA_t = pnr::row_l2_normalize(testing::random_matrix(rng, 6, 4));
            const auto ft = pnr::noncontrastive_pnr_total(v, config(m, Regime::FT));
            check_same(ft, pnr::noncontrastive_pnr_total(w, config(m, Regime::FT)));
            CHECK(ft.grad_gA_t.empty());
            auto zero = config(m, Regime::PNR);
            zero.lambda = zero.lambda_pnr = zero.lambda_cassle = 0.0;
            if (m == Method::VICReg) CHECK(pnr::noncontrastive_pnr_total(v, zero).value == ft.value);
        }
    }
    SUBCASE("fine-tuned Barlow at identity correlation") {
        pnr::NonContrastiveViews v;
        v.zA_t = v.zB_t = walsh({0, 1, 2});
        CHECK(pnr::noncontrastive_pnr_total(v, config(Method::Barlow, Regime::FT)).value == 0.0);
    }
    SUBCASE("BYOL composition") {
        auto v = normalized_for_byol(random_nc_views(rng, 4, 3));
        const auto cfg = config(Method::BYOL, Regime::PNR);
        const double lam = cfg.lambda;
        const double ab = oracle::mean_sq(v.qA_t, v.targetB) +
                          (oracle::mean_sq(v.gA_t, v.zA_prev) - lam * oracle::mean_sq(v.gA_t, v.zB_prev));
        const double ba = oracle::mean_sq(v.qB_t, v.targetA) +
                          (oracle::mean_sq(v.gB_t, v.zB_prev) - lam * oracle::mean_sq(v.gB_t, v.zA_prev));
        CHECK(std::abs(pnr::noncontrastive_pnr_total(v, cfg).value - 0.5 * (ab + ba)) < 1e-12);
    }
}

TEST_CASE("method defaults") {
    CHECK(config(Method::BYOL, Regime::PNR).lambda == 0.5);
    CHECK(config(Method::Barlow, Regime::PNR).lambda == 1.0);
    CHECK(config(Method::VICReg, Regime::PNR).lambda_pnr == 23.0);
    CHECK(config(Method::VICReg, Regime::PNR).lambda_cassle == 25.0);
    CHECK(pnr::parse_method("simclr") == Method::SimCLR);
    CHECK(pnr::parse_regime("CaSSLe") == Regime::CaSSLe);
    CHECK_THROWS_AS(pnr::parse_method("swav"), pnr::Error);
}
