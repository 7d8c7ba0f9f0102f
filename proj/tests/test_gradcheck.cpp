#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pnr/verify/autodiff.hpp"
#include "pnr/verify/gradcheck.hpp"
#include "support.hpp"

using namespace pnr::verify;

TEST_CASE("tape derivatives") {
    Tape tape;
    const Var x = tape.variable(1.5);
    const Var y = tape.variable(-0.5);
    const Var f = log(exp(x * y) + 2.0) / (x - y) * 3.0;
    tape.backward(f);
    const double e = std::exp(1.5 * -0.5);
    const double g = std::log(e + 2.0);
    const double d = 1.5 - -0.5;
    CHECK(f.value() == doctest::Approx(3.0 * g / d).epsilon(1e-15));
    CHECK(x.grad() == doctest::Approx(3.0 * (e * -0.5 / (e + 2.0) / d - g / (d * d))).epsilon(1e-14));
    CHECK(y.grad() == doctest::Approx(3.0 * (e * 1.5 / (e + 2.0) / d + g / (d * d))).epsilon(1e-14));
}

TEST_CASE("every required check is registered") {
    const auto& names = gradient_check_names();
    for (const char* n : {"pnr_l1", "pnr_l2", "cssl_total", "byol_loss", "byol_pnr_l2", "vicreg_loss",
                          "vicreg_pnr_l2", "barlow_loss", "noncontrastive_pnr_total", "stack_simclr",
                          "stack_moco", "stack_byol", "stack_vicreg", "stack_barlow", "closed_form"})
        CHECK(std::find(names.begin(), names.end(), n) != names.end());
    CHECK(names.back() == "closed_form");
    CHECK_THROWS_AS(run_gradient_check("nope", {}), pnr::Error);
}

TEST_CASE("full suite passes at the default points") {
    const auto results = run_gradient_suite({});
    for (const auto& r : results) {
        INFO(r.name << " worst " << r.worst << " " << r.detail);
        CHECK(r.passed);
        CHECK(r.trials >= (r.name == "closed_form" ? 50u : 20u));
        CHECK(r.worst < r.tolerance);
    }
}

TEST_CASE("checks report failure when the tolerance cannot be met") {
    GradCheckOptions strict;
    strict.trials = 3;
    strict.tolerance = 1e-300;
    CHECK_FALSE(run_gradient_check("pnr_l1", strict).passed);
    GradCheckOptions coarse;
    coarse.trials = 3;
    coarse.eps = 1e-1;
    CHECK_FALSE(run_gradient_check("cssl_total", coarse).passed);
}

TEST_CASE("closed form agrees with the tape") {
    pnr::Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        auto v = testing::random_views(rng, 1 + trial % 5, 3 + trial % 3);
        if (trial % 2) {
            v.extra_neg_cur = testing::random_unit(rng, 4, v.zA_t.cols());
            v.extra_neg_prev = testing::random_unit(rng, 2, v.zA_t.cols());
        }
        const double tau = 0.1 + 0.05 * (trial % 4);
        const pnr::Matrix tape = autodiff_anchor_grad(v, tau);
        CHECK(pnr::max_abs_diff(pnr::closed_form_grad(v, tau).grad, tape) < 1e-10);
    }
}
