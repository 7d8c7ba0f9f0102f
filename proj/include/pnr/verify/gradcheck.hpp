#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pnr/losses.hpp"
#include "pnr/numerics.hpp"

namespace pnr::verify {

struct GradCheckOptions {
    std::size_t trials = 20;
    std::uint64_t seed = 20240917;
    double eps = 1e-5;
    double tolerance = 1e-6;
    // Closed-form checks always run at least this many instances.
    std::size_t closed_form_trials = 50;
    double closed_form_tolerance = 1e-10;
    double mass_tolerance = 1e-12;
};

struct CheckResult {
    std::string name;
    std::size_t trials = 0;
    double worst = 0.0;  // worst relative error (absolute for closed_form)
    double tolerance = 0.0;
    bool passed = false;
    std::string detail;
};

// Every check the suite knows, in run order. "closed_form" is last.
const std::vector<std::string>& gradient_check_names();

// Throws InvalidArgument for an unknown name.
CheckResult run_gradient_check(std::string_view name, const GradCheckOptions& opts);
std::vector<CheckResult> run_gradient_suite(const GradCheckOptions& opts);

// Gradient of 1/2 [l1_i + l2_i] with respect to each anchor slot zA_t,i under an
// identity predictor, computed on a scalar tape.
Matrix autodiff_anchor_grad(const ContrastiveViews& v, double tau);

}  // namespace pnr::verify
