#include "pnr/verify/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "pnr/continual.hpp"
#include "pnr/error.hpp"
#include "pnr/model.hpp"
#include "pnr/verify/autodiff.hpp"

namespace pnr::verify {

namespace {

constexpr std::size_t kBatch = 6;
constexpr std::size_t kDim = 8;

Matrix unit_rows(Rng& rng, std::size_t n, std::size_t d) {
    return row_l2_normalize(gaussian_matrix(rng, n, d, 1.0));
}

Matrix or_zeros(const Matrix& grad, const Matrix& like) {
    return grad.empty() ? Matrix(like.rows(), like.cols()) : grad;
}

// One differentiable input: the matrix is perturbed in place while f is probed.
struct Probe {
    Matrix* input;
    Matrix analytic;
};

// Relative error of the concatenated gradient over all probes.
double probe_error(const std::function<double()>& f, std::vector<Probe>& probes, double eps) {
    double diff2 = 0.0;
    double a2 = 0.0;
    double n2 = 0.0;
    for (Probe& p : probes) {
        Matrix& x = *p.input;
        const Matrix base = x;
        const Matrix numeric = finite_difference_gradient(
            [&](const Matrix& xp) {
                x = xp;
                return f();
            },
            base, eps);
        x = base;
        const Matrix analytic = or_zeros(p.analytic, base);
        for (std::size_t k = 0; k < numeric.size(); ++k) {
            const double a = analytic.data()[k];
            const double n = numeric.data()[k];
            diff2 += (a - n) * (a - n);
            a2 += a * a;
            n2 += n * n;
        }
    }
    return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
}

ContrastiveViews random_views(Rng& rng, bool queues) {
    ContrastiveViews v;
    v.zA_t = unit_rows(rng, kBatch, kDim);
    v.zB_t = unit_rows(rng, kBatch, kDim);
    v.zA_prev = unit_rows(rng, kBatch, kDim);
    v.zB_prev = unit_rows(rng, kBatch, kDim);
    v.gA_t = unit_rows(rng, kBatch, kDim);
    v.gB_t = unit_rows(rng, kBatch, kDim);
    if (queues) {
        v.extra_neg_cur = unit_rows(rng, 5, kDim);
        v.extra_neg_prev = unit_rows(rng, 5, kDim);
    }
    return v;
}

using Trial = std::function<double(Rng&, std::size_t, double)>;

double trial_pnr_l1(Rng& rng, std::size_t k, double eps) {
    ContrastiveViews v = random_views(rng, k % 2 == 1);
    const double tau = rng.uniform(0.1, 1.0);
    const bool pn = k % 3 != 2;
    const LossResult r = pnr_l1(v, tau, pn, NormCheck::Skip);
    std::vector<Probe> probes{{&v.zA_t, r.grad_zA_t}, {&v.zB_t, r.grad_zB_t}};
    return probe_error([&] { return pnr_l1(v, tau, pn, NormCheck::Skip).value; }, probes, eps);
}

double trial_pnr_l2(Rng& rng, std::size_t k, double eps) {
    ContrastiveViews v = random_views(rng, k % 2 == 1);
    const double tau = rng.uniform(0.1, 1.0);
    const bool pn = k % 3 != 2;
    const LossResult r = pnr_l2(v, tau, pn, NormCheck::Skip);
    std::vector<Probe> probes{
        {&v.gA_t, r.grad_gA_t}, {&v.zA_t, r.grad_zA_t}, {&v.zB_t, r.grad_zB_t}};
    return probe_error([&] { return pnr_l2(v, tau, pn, NormCheck::Skip).value; }, probes, eps);
}

double trial_cssl_total(Rng& rng, std::size_t k, double eps) {
    const bool moco = k % 2 == 1;
    ContrastiveViews v = random_views(rng, moco);
    PnrConfig cfg = PnrConfig::defaults_for(moco ? Method::MoCo : Method::SimCLR,
                                            static_cast<Regime>((k / 2) % 3));
    cfg.tau = rng.uniform(0.1, 1.0);
    const LossResult r = cssl_total(v, cfg, NormCheck::Skip);
    std::vector<Probe> probes{{&v.zA_t, r.grad_zA_t},
                              {&v.zB_t, r.grad_zB_t},
                              {&v.gA_t, r.grad_gA_t},
                              {&v.gB_t, r.grad_gB_t}};
    return probe_error([&] { return cssl_total(v, cfg, NormCheck::Skip).value; }, probes, eps);
}

double trial_byol_loss(Rng& rng, std::size_t, double eps) {
    Matrix online = unit_rows(rng, kBatch, kDim);
    const Matrix target = unit_rows(rng, kBatch, kDim);
    const LossTerm r = byol_loss(online, target, NormCheck::Skip);
    std::vector<Probe> probes{{&online, r.grad_first}};
    return probe_error([&] { return byol_loss(online, target, NormCheck::Skip).value; }, probes,
                       eps);
}

double trial_byol_pnr_l2(Rng& rng, std::size_t, double eps) {
    Matrix g = unit_rows(rng, kBatch, kDim);
    const Matrix za = unit_rows(rng, kBatch, kDim);
    const Matrix zb = unit_rows(rng, kBatch, kDim);
    const double lambda = rng.uniform(0.0, 1.0);
    const LossTerm r = byol_pnr_l2(g, za, zb, lambda, NormCheck::Skip);
    std::vector<Probe> probes{{&g, r.grad_first}};
    return probe_error([&] { return byol_pnr_l2(g, za, zb, lambda, NormCheck::Skip).value; },
                       probes, eps);
}

// Columns with spread in [0.3, 2.5] so some variance hinges are active and some
// are not; redrawn until every column std is at least 1e-3 away from the kink.
Matrix vicreg_batch(Rng& rng, const VicregWeights& w, std::size_t n, std::size_t d) {
    for (;;) {
        Matrix z = gaussian_matrix(rng, n, d, 1.0);
        for (std::size_t c = 0; c < d; ++c) {
            const double s = rng.uniform(0.3, 2.5);
            const double shift = rng.uniform(-1.0, 1.0);
            for (std::size_t i = 0; i < n; ++i) z(i, c) = s * z(i, c) + shift;
        }
        bool clear = true;
        for (std::size_t c = 0; c < d && clear; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += z(i, c);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) var += (z(i, c) - mean) * (z(i, c) - mean);
            var /= static_cast<double>(n - 1);
            clear = std::abs(std::sqrt(var + w.eps) - w.gamma) > 1e-3;
        }
        if (clear) return z;
    }
}

double trial_vicreg_loss(Rng& rng, std::size_t, double eps) {
    const VicregWeights w;
    Matrix za = vicreg_batch(rng, w, 8, kBatch);
    Matrix zb = vicreg_batch(rng, w, 8, kBatch);
    const LossTerm r = vicreg_loss(za, zb, w);
    std::vector<Probe> probes{{&za, r.grad_first}, {&zb, r.grad_second}};
    return probe_error([&] { return vicreg_loss(za, zb, w).value; }, probes, eps);
}

double trial_vicreg_pnr_l2(Rng& rng, std::size_t, double eps) {
    Matrix g = gaussian_matrix(rng, kBatch, kDim, 1.0);
    const Matrix za = gaussian_matrix(rng, kBatch, kDim, 1.0);
    const Matrix zb = gaussian_matrix(rng, kBatch, kDim, 1.0);
    const double lc = 25.0;
    const double lp = rng.uniform(0.0, 25.0);
    const LossTerm r = vicreg_pnr_l2(g, za, zb, lc, lp);
    std::vector<Probe> probes{{&g, r.grad_first}};
    return probe_error([&] { return vicreg_pnr_l2(g, za, zb, lc, lp).value; }, probes, eps);
}

double trial_barlow_loss(Rng& rng, std::size_t, double eps) {
    Matrix za = gaussian_matrix(rng, 8, 5, 1.0);
    Matrix zb = gaussian_matrix(rng, 8, 5, 1.0);
    zb += za * 0.7;
    const double lambda = 5e-3;
    const LossTerm r = barlow_loss(za, zb, lambda);
    std::vector<Probe> probes{{&za, r.grad_first}, {&zb, r.grad_second}};
    return probe_error([&] { return barlow_loss(za, zb, lambda).value; }, probes, eps);
}

double trial_barlow_pnr_l2(Rng& rng, std::size_t, double eps) {
    Matrix g = gaussian_matrix(rng, 8, 5, 1.0);
    const Matrix za = gaussian_matrix(rng, 8, 5, 1.0);
    const Matrix zb = gaussian_matrix(rng, 8, 5, 1.0);
    const double lambda = rng.uniform(0.0, 1.0);
    const LossTerm r = barlow_pnr_l2(g, za, zb, 5e-3, lambda);
    std::vector<Probe> probes{{&g, r.grad_first}};
    return probe_error([&] { return barlow_pnr_l2(g, za, zb, 5e-3, lambda).value; }, probes,
                       eps);
}

// Probes raw vectors; the loss sees their row normalization.
double trial_noncontrastive(Rng& rng, std::size_t k, double eps) {
    static constexpr Method kMethods[] = {Method::BYOL, Method::VICReg, Method::Barlow};
    const Method method = kMethods[k % 3];
    const auto regime = static_cast<Regime>((k / 3) % 3);
    const PnrConfig cfg = PnrConfig::defaults_for(method, regime);
    const std::size_t n = 8;
    const std::size_t d = 5;

    if (method == Method::BYOL) {
        Matrix qa = gaussian_matrix(rng, n, d, 1.0);
        Matrix qb = gaussian_matrix(rng, n, d, 1.0);
        Matrix ga = gaussian_matrix(rng, n, d, 1.0);
        Matrix gb = gaussian_matrix(rng, n, d, 1.0);
        NonContrastiveViews v;
        v.targetA = unit_rows(rng, n, d);
        v.targetB = unit_rows(rng, n, d);
        v.zA_prev = unit_rows(rng, n, d);
        v.zB_prev = unit_rows(rng, n, d);
        auto eval = [&]() {
            v.qA_t = row_l2_normalize(qa);
            v.qB_t = row_l2_normalize(qb);
            v.gA_t = row_l2_normalize(ga);
            v.gB_t = row_l2_normalize(gb);
            return noncontrastive_pnr_total(v, cfg);
        };
        const LossResult r = eval();
        auto back = [](const Matrix& raw, const Matrix& g) {
            return g.empty() ? Matrix(raw.rows(), raw.cols()) : row_l2_normalize_backward(raw, g);
        };
        std::vector<Probe> probes{{&qa, back(qa, r.grad_qA_t)},
                                  {&qb, back(qb, r.grad_qB_t)},
                                  {&ga, back(ga, r.grad_gA_t)},
                                  {&gb, back(gb, r.grad_gB_t)}};
        return probe_error([&] { return eval().value; }, probes, eps);
    }

    NonContrastiveViews v;
    if (method == Method::VICReg) {
        v.zA_t = vicreg_batch(rng, cfg.vicreg, n, d);
        v.zB_t = vicreg_batch(rng, cfg.vicreg, n, d);
    } else {
        v.zA_t = gaussian_matrix(rng, n, d, 1.0);
        v.zB_t = gaussian_matrix(rng, n, d, 1.0) + v.zA_t * 0.7;
    }
    v.zA_prev = gaussian_matrix(rng, n, d, 1.0);
    v.zB_prev = gaussian_matrix(rng, n, d, 1.0);
    v.gA_t = gaussian_matrix(rng, n, d, 1.0);
    v.gB_t = gaussian_matrix(rng, n, d, 1.0);
    const LossResult r = noncontrastive_pnr_total(v, cfg);
    std::vector<Probe> probes{{&v.zA_t, r.grad_zA_t},
                              {&v.zB_t, r.grad_zB_t},
                              {&v.gA_t, r.grad_gA_t},
                              {&v.gB_t, r.grad_gB_t}};
    return probe_error([&] { return noncontrastive_pnr_total(v, cfg).value; }, probes, eps);
}

// Flattened parameter vector as a 1 x P matrix.
Matrix flatten(const EncoderStack& stack) {
    Matrix flat(1, parameter_count(stack));
    std::size_t k = 0;
    for (const auto span : parameter_spans(stack))
        for (double x : span) flat.data()[k++] = x;
    return flat;
}

void unflatten(const Matrix& flat, EncoderStack& stack) {
    std::size_t k = 0;
    for (auto span : parameter_spans(stack))
        for (double& x : span) x = flat.data()[k++];
}

// Smallest |pre-activation| feeding a ReLU anywhere in the live stack.
double relu_margin(const EncoderStack& stack, const Matrix& x) {
    const ForwardPass pass = forward(stack, x, true, stack.ssl_predictor.has_value());
    double margin = INFINITY;
    auto scan = [&](const MlpTrace& trace) {
        for (std::size_t k = 0; k + 1 < trace.pre_activations.size(); ++k)
            for (double v : trace.pre_activations[k].data()) margin = std::min(margin, std::abs(v));
    };
    scan(pass.encoder_trace);
    scan(pass.projector_trace);
    if (pass.predictor_trace) scan(*pass.predictor_trace);
    if (pass.ssl_predictor_trace) scan(*pass.ssl_predictor_trace);
    return margin;
}

// Full parameter-space check of training_objective on a 3-layer encoder, batch 8.
double trial_stack(Method method, Rng& rng, std::size_t k, double eps) {
    StackDims dims;
    dims.encoder = {6, 10, 8, 5};
    dims.projector = {5, 16, 4};
    dims.predictor = {4, 16, 4};
    if (method == Method::BYOL) dims.ssl_predictor = {4, 16, 4};
    // Random biases move the point away from the zero-bias initialization.
    auto draw = [&]() {
        EncoderStack s = init_stack(rng, dims);
        for (MlpParams* mlp : {&s.encoder, &s.projector, &s.predictor})
            for (DenseLayer& layer : mlp->layers)
                for (double& b : layer.bias) b = 0.1 * rng.gaussian();
        return s;
    };
    EncoderStack stack;
    EncoderStack prev;
    TargetNetwork target;
    Matrix xa, xb;
    // Points with a ReLU input near zero straddle a kink under the probe; redraw.
    do {
        stack = draw();
        prev = draw();
        target = make_target(draw(), 0.99);
        xa = gaussian_matrix(rng, 8, 6, 1.0);
        xb = gaussian_matrix(rng, 8, 6, 1.0);
    } while (std::min(relu_margin(stack, xa), relu_margin(stack, xb)) < 1e-3);
    const Matrix qcur = unit_rows(rng, 5, 4);
    const Matrix qprev = unit_rows(rng, 5, 4);

    const PnrConfig cfg = PnrConfig::defaults_for(method, static_cast<Regime>(k % 3));
    ObjectiveInputs in;
    in.xA = &xa;
    in.xB = &xb;
    in.prev = &prev;
    if (method == Method::BYOL) in.target = &target;
    if (method == Method::MoCo) {
        in.cur_queue = &qcur;
        in.prev_queue = &qprev;
    }

    const ObjectiveResult r = training_objective(stack, in, cfg);
    Matrix params = flatten(stack);
    EncoderStack probe_stack = stack;
    std::vector<Probe> probes{{&params, flatten(r.grads)}};
    return probe_error(
        [&] {
            unflatten(params, probe_stack);
            return training_objective(probe_stack, in, cfg).loss;
        },
        probes, eps);
}

const std::map<std::string, Trial, std::less<>>& trials() {
    static const std::map<std::string, Trial, std::less<>> table{
        {"pnr_l1", trial_pnr_l1},
        {"pnr_l2", trial_pnr_l2},
        {"cssl_total", trial_cssl_total},
        {"byol_loss", trial_byol_loss},
        {"byol_pnr_l2", trial_byol_pnr_l2},
        {"vicreg_loss", trial_vicreg_loss},
        {"vicreg_pnr_l2", trial_vicreg_pnr_l2},
        {"barlow_loss", trial_barlow_loss},
        {"barlow_pnr_l2", trial_barlow_pnr_l2},
        {"noncontrastive_pnr_total", trial_noncontrastive},
        {"stack_simclr", [](Rng& r, std::size_t k, double e) { return trial_stack(Method::SimCLR, r, k, e); }},
        {"stack_moco", [](Rng& r, std::size_t k, double e) { return trial_stack(Method::MoCo, r, k, e); }},
        {"stack_byol", [](Rng& r, std::size_t k, double e) { return trial_stack(Method::BYOL, r, k, e); }},
        {"stack_vicreg", [](Rng& r, std::size_t k, double e) { return trial_stack(Method::VICReg, r, k, e); }},
        {"stack_barlow", [](Rng& r, std::size_t k, double e) { return trial_stack(Method::Barlow, r, k, e); }},
    };
    return table;
}

CheckResult run_closed_form(const GradCheckOptions& opts) {
    CheckResult out;
    out.name = "closed_form";
    out.trials = std::max(opts.closed_form_trials, opts.trials);
    out.tolerance = opts.closed_form_tolerance;
    double worst_mass = 0.0;
    for (std::size_t k = 0; k < out.trials; ++k) {
        Rng rng(derive_seed(opts.seed, "closed_form/" + std::to_string(k)));
        const ContrastiveViews v = random_views(rng, k % 2 == 1);
        const double tau = rng.uniform(0.1, 1.0);
        const ClosedFormGradient cf = closed_form_grad(v, tau);
        out.worst = std::max(out.worst, max_abs_diff(cf.grad, autodiff_anchor_grad(v, tau)));
        for (std::size_t i = 0; i < cf.mass_l1.size(); ++i)
            worst_mass = std::max(worst_mass, std::abs(cf.mass_l1[i] + cf.mass_l2[i] - 1.0));
    }
    out.passed = out.worst < out.tolerance && worst_mass <= opts.mass_tolerance;
    std::ostringstream detail;
    detail << "worst |S1+S2-1| = " << worst_mass;
    out.detail = detail.str();
    return out;
}

}  // namespace

const std::vector<std::string>& gradient_check_names() {
    static const std::vector<std::string> names{
        "pnr_l1",       "pnr_l2",       "cssl_total",   "byol_loss",
        "byol_pnr_l2",  "vicreg_loss",  "vicreg_pnr_l2", "barlow_loss",
        "barlow_pnr_l2", "noncontrastive_pnr_total",    "stack_simclr",
        "stack_moco",   "stack_byol",   "stack_vicreg", "stack_barlow",
        "closed_form"};
    return names;
}

CheckResult run_gradient_check(std::string_view name, const GradCheckOptions& opts) {
    if (name == "closed_form") return run_closed_form(opts);
    const auto it = trials().find(name);
    if (it == trials().end())
        throw Error(ErrorCode::InvalidArgument, "unknown gradient check '" + std::string(name) + "'");
    CheckResult out;
    out.name = std::string(name);
    out.trials = opts.trials;
    out.tolerance = opts.tolerance;
    for (std::size_t k = 0; k < opts.trials; ++k) {
        Rng rng(derive_seed(opts.seed, out.name + "/" + std::to_string(k)));
        out.worst = std::max(out.worst, it->second(rng, k, opts.eps));
    }
    out.passed = opts.trials > 0 && out.worst < out.tolerance;
    return out;
}

std::vector<CheckResult> run_gradient_suite(const GradCheckOptions& opts) {
    std::vector<CheckResult> out;
    for (const auto& name : gradient_check_names()) out.push_back(run_gradient_check(name, opts));
    return out;
}

Matrix autodiff_anchor_grad(const ContrastiveViews& v, double tau) {
    const std::size_t n = v.zA_t.rows();
    const std::size_t d = v.zA_t.cols();
    // Everything that can appear in a denominator, tagged with whether it is the
    // anchor's own slot (excluded) for row i.
    struct Source {
        const Matrix* m;
        bool skip_self;
    };
    std::vector<Source> current{{&v.zA_t, true}, {&v.zB_t, false}};
    if (v.extra_neg_cur) current.push_back({&*v.extra_neg_cur, false});
    std::vector<Source> previous{{&v.zA_prev, true}, {&v.zB_prev, false}};
    if (v.extra_neg_prev) previous.push_back({&*v.extra_neg_prev, false});

    Matrix grad(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        Tape tape;
        std::vector<Var> anchor;
        for (std::size_t k = 0; k < d; ++k) anchor.push_back(tape.variable(v.zA_t(i, k)));

        auto logit = [&](std::span<const double> z) {
            Var s = tape.constant(0.0);
            for (std::size_t k = 0; k < d; ++k) s = s + anchor[k] * tape.constant(z[k]);
            return s * (1.0 / tau);
        };
        // -pos + log sum exp(l_j - c) + c, c a constant shift (no effect on the gradient).
        auto term = [&](std::span<const double> positive, std::vector<Source> pools) {
            std::vector<Var> logits;
            for (const Source& s : pools)
                for (std::size_t r = 0; r < s.m->rows(); ++r)
                    if (!(s.skip_self && r == i)) logits.push_back(logit(s.m->row(r)));
            double c = logits.front().value();
            for (const Var& l : logits) c = std::max(c, l.value());
            Var sum = tape.constant(0.0);
            for (const Var& l : logits) sum = sum + exp(l + (-c));
            return (log(sum) + c) - logit(positive);
        };

        std::vector<Source> set1 = current;
        set1.insert(set1.end(), previous.begin(), previous.end());
        std::vector<Source> set2 = previous;
        set2.insert(set2.end(), current.begin(), current.end());
        const Var l1 = term(v.zB_t.row(i), set1);
        const Var l2 = term(v.zA_prev.row(i), set2);
        const Var half = (l1 + l2) * 0.5;
        tape.backward(half);
        for (std::size_t k = 0; k < d; ++k) grad(i, k) = anchor[k].grad();
    }
    return grad;
}

}  // namespace pnr::verify
