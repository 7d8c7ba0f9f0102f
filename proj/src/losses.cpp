#include "pnr/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

namespace pnr {

std::string_view to_string(Method m) noexcept {
    switch (m) {
        case Method::SimCLR: return "simclr";
        case Method::MoCo: return "moco";
        case Method::BYOL: return "byol";
        case Method::VICReg: return "vicreg";
        case Method::Barlow: return "barlow";
    }
    return "unknown";
}

std::string_view to_string(Regime r) noexcept {
    switch (r) {
        case Regime::FT: return "ft";
        case Regime::CaSSLe: return "cassle";
        case Regime::PNR: return "pnr";
    }
    return "unknown";
}

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

Method parse_method(std::string_view name) {
    const std::string n = lower(name);
    for (Method m : {Method::SimCLR, Method::MoCo, Method::BYOL, Method::VICReg, Method::Barlow})
        if (n == to_string(m)) return m;
    throw Error(ErrorCode::InvalidConfig, "unknown method '" + std::string(name) + "'");
}

Regime parse_regime(std::string_view name) {
    const std::string n = lower(name);
    for (Regime r : {Regime::FT, Regime::CaSSLe, Regime::PNR})
        if (n == to_string(r)) return r;
    throw Error(ErrorCode::InvalidConfig, "unknown regime '" + std::string(name) + "'");
}

bool is_contrastive(Method m) noexcept { return m == Method::SimCLR || m == Method::MoCo; }

PnrConfig PnrConfig::defaults_for(Method method, Regime regime) {
    PnrConfig cfg;
    cfg.method = method;
    cfg.regime = regime;
    switch (method) {
        case Method::BYOL: cfg.lambda = 0.5; break;
        case Method::Barlow: cfg.lambda = 1.0; break;
        case Method::VICReg: cfg.lambda = cfg.lambda_pnr; break;
        default: break;
    }
    return cfg;
}

void validate(const PnrConfig& cfg) {
    if (!(cfg.tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "loss.tau must be > 0");
    if (!(cfg.lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "loss.lambda must be >= 0");
    if (!(cfg.lambda_cassle >= 0.0))
        throw Error(ErrorCode::InvalidConfig, "loss.lambda_cassle must be >= 0");
    if (!(cfg.lambda_pnr >= 0.0))
        throw Error(ErrorCode::InvalidConfig, "loss.lambda_pnr must be >= 0");
    if (!(cfg.barlow_lambda >= 0.0))
        throw Error(ErrorCode::InvalidConfig, "loss.barlow_lambda must be >= 0");
    if (!(cfg.vicreg.eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "loss.vicreg.eps must be > 0");
}

namespace {

// ---------------------------------------------------------------------------
// InfoNCE over an explicit list of embedding pools

struct Pool {
    const Matrix* emb;
    Matrix* grad;          // null when the pool is a constant (frozen model, queue)
    bool skip_anchor_row;  // drop row i from the pool for anchor i
};

// Adds sum_i scale * loss_i gradients into the non-null grad targets and returns the
// mean per-anchor loss. loss_i = (m - pos) + log sum_j exp(l_j - m), m = max_j l_j.
// The mean is accumulated as a running mean so identical per-anchor losses average
// to exactly that value.
double info_nce(const Matrix& anchors, Matrix* grad_anchors, const Matrix& positives,
                Matrix* grad_positives, std::span<const Pool> pools, double tau, double scale) {
    const std::size_t n = anchors.rows();
    const std::size_t d = anchors.cols();
    std::vector<double> logits;
    std::vector<const double*> rows;
    std::vector<double*> grad_rows;
    double mean = 0.0;
    const double g_scale = scale / tau;
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = anchors.row(i);
        logits.clear();
        rows.clear();
        grad_rows.clear();
        for (const Pool& p : pools) {
            for (std::size_t r = 0; r < p.emb->rows(); ++r) {
                if (p.skip_anchor_row && r == i) continue;
                const auto z = p.emb->row(r);
                logits.push_back(dot(a, z) / tau);
                rows.push_back(z.data());
                grad_rows.push_back(p.grad ? p.grad->row(r).data() : nullptr);
            }
        }
        if (logits.empty()) throw Error(ErrorCode::EmptyBatch, "empty InfoNCE denominator");
        const double pos = dot(a, positives.row(i)) / tau;
        const double m = *std::max_element(logits.begin(), logits.end());
        double sumexp = 0.0;
        for (double l : logits) sumexp += std::exp(l - m);
        const double loss_i = (m - pos) + std::log(sumexp);
        mean += (loss_i - mean) / static_cast<double>(i + 1);

        if (grad_anchors == nullptr && grad_positives == nullptr &&
            std::all_of(grad_rows.begin(), grad_rows.end(), [](double* g) { return !g; }))
            continue;
        std::vector<double> ga(d, 0.0);
        const auto p = positives.row(i);
        for (std::size_t k = 0; k < d; ++k) ga[k] = -p[k];
        for (std::size_t j = 0; j < logits.size(); ++j) {
            const double w = std::exp(logits[j] - m) / sumexp;
            for (std::size_t k = 0; k < d; ++k) ga[k] += w * rows[j][k];
            if (grad_rows[j]) {
                for (std::size_t k = 0; k < d; ++k) grad_rows[j][k] += g_scale * w * a[k];
            }
        }
        if (grad_anchors) {
            auto g = grad_anchors->row(i);
            for (std::size_t k = 0; k < d; ++k) g[k] += g_scale * ga[k];
        }
        if (grad_positives) {
            auto g = grad_positives->row(i);
            for (std::size_t k = 0; k < d; ++k) g[k] -= g_scale * a[k];
        }
    }
    return mean;
}

// One augmentation ordering (X plays the anchor view, Y the positive view).
struct Ordering {
    const Matrix& x;
    const Matrix& y;
    const Matrix& x_prev;
    const Matrix& y_prev;
    const Matrix& g_x;
    Matrix* grad_x;
    Matrix* grad_y;
    Matrix* grad_g_x;
    const Matrix* cur_queue;
    const Matrix* prev_queue;
};

std::vector<Pool> current_pools(const Ordering& o) {
    std::vector<Pool> pools{{&o.x, o.grad_x, true}, {&o.y, o.grad_y, false}};
    if (o.cur_queue) pools.push_back({o.cur_queue, nullptr, false});
    return pools;
}

std::vector<Pool> previous_pools(const Ordering& o) {
    std::vector<Pool> pools{{&o.x_prev, nullptr, true}, {&o.y_prev, nullptr, false}};
    if (o.prev_queue) pools.push_back({o.prev_queue, nullptr, false});
    return pools;
}

double ordering_l1(const Ordering& o, double tau, bool pseudo_negatives, double scale) {
    std::vector<Pool> pools = current_pools(o);
    if (pseudo_negatives) {
        const auto pn = previous_pools(o);
        pools.insert(pools.end(), pn.begin(), pn.end());
    }
    return info_nce(o.x, o.grad_x, o.y, o.grad_y, pools, tau, scale);
}

double ordering_l2(const Ordering& o, double tau, bool pseudo_negatives, double scale) {
    std::vector<Pool> pools = previous_pools(o);
    if (pseudo_negatives) {
        const auto pn = current_pools(o);
        pools.insert(pools.end(), pn.begin(), pn.end());
    }
    return info_nce(o.g_x, o.grad_g_x, o.x_prev, nullptr, pools, tau, scale);
}

void require_unit_rows(const Matrix& m, const char* name, NormCheck check) {
    if (check == NormCheck::Skip) return;
    if (!rows_unit_norm(m, kUnitNormTolerance))
        throw Error(ErrorCode::NormViolation, std::string(name) + " rows are not unit norm");
}

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::string(name) + " is " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                        std::to_string(cols));
    }
}

struct ViewNeeds {
    bool prev = false;
    bool g_a = false;
    bool g_b = false;
};

void validate_views(const ContrastiveViews& v, ViewNeeds needs, NormCheck check) {
    const std::size_t n = v.zA_t.rows();
    const std::size_t d = v.zA_t.cols();
    if (n == 0) throw Error(ErrorCode::EmptyBatch, "contrastive batch has no rows");
    require_shape(v.zB_t, n, d, "zB_t");
    require_unit_rows(v.zA_t, "zA_t", check);
    require_unit_rows(v.zB_t, "zB_t", check);
    if (needs.prev) {
        require_shape(v.zA_prev, n, d, "zA_prev");
        require_shape(v.zB_prev, n, d, "zB_prev");
        require_unit_rows(v.zA_prev, "zA_prev", check);
        require_unit_rows(v.zB_prev, "zB_prev", check);
    }
    const auto need_pred = [&](const Matrix& g, const char* name) {
        if (g.empty())
            throw Error(ErrorCode::MissingPredictorOutput, std::string(name) + " is missing");
        require_shape(g, n, d, name);
        require_unit_rows(g, name, check);
    };
    if (needs.g_a) need_pred(v.gA_t, "gA_t");
    if (needs.g_b) need_pred(v.gB_t, "gB_t");
    for (const auto* q : {&v.extra_neg_cur, &v.extra_neg_prev}) {
        if (!q->has_value()) continue;
        if ((*q)->rows() > 0 && (*q)->cols() != d)
            throw Error(ErrorCode::ShapeMismatch, "queue snapshot width differs from embeddings");
        require_unit_rows(**q, "queue snapshot", check);
    }
}

const Matrix* queue_ptr(const std::optional<Matrix>& q) {
    return q && q->rows() > 0 ? &*q : nullptr;
}

}  // namespace

LossResult pnr_l1(const ContrastiveViews& v, double tau, bool pseudo_negatives, NormCheck check) {
    validate_views(v, {pseudo_negatives, false, false}, check);
    LossResult r;
    r.grad_zA_t = Matrix(v.zA_t.rows(), v.zA_t.cols());
    r.grad_zB_t = Matrix(v.zB_t.rows(), v.zB_t.cols());
    const Ordering o{v.zA_t, v.zB_t, v.zA_prev, v.zB_prev, v.gA_t,
                     &r.grad_zA_t, &r.grad_zB_t, nullptr,
                     queue_ptr(v.extra_neg_cur), queue_ptr(v.extra_neg_prev)};
    r.value = ordering_l1(o, tau, pseudo_negatives, 1.0 / static_cast<double>(v.zA_t.rows()));
    return r;
}

LossResult pnr_l2(const ContrastiveViews& v, double tau, bool pseudo_negatives, NormCheck check) {
    validate_views(v, {true, true, false}, check);
    LossResult r;
    r.grad_zA_t = Matrix(v.zA_t.rows(), v.zA_t.cols());
    r.grad_zB_t = Matrix(v.zB_t.rows(), v.zB_t.cols());
    r.grad_gA_t = Matrix(v.gA_t.rows(), v.gA_t.cols());
    const Ordering o{v.zA_t, v.zB_t, v.zA_prev, v.zB_prev, v.gA_t,
                     &r.grad_zA_t, &r.grad_zB_t, &r.grad_gA_t,
                     queue_ptr(v.extra_neg_cur), queue_ptr(v.extra_neg_prev)};
    r.value = ordering_l2(o, tau, pseudo_negatives, 1.0 / static_cast<double>(v.zA_t.rows()));
    return r;
}

LossResult cssl_total(const ContrastiveViews& v, const PnrConfig& cfg, NormCheck check) {
    if (!(cfg.tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau must be > 0");
    const bool distill = cfg.regime != Regime::FT;
    const bool pn = cfg.regime == Regime::PNR;
    validate_views(v, {distill, distill, distill}, check);

    const std::size_t n = v.zA_t.rows();
    const std::size_t d = v.zA_t.cols();
    LossResult r;
    r.grad_zA_t = Matrix(n, d);
    r.grad_zB_t = Matrix(n, d);
    if (distill) {
        r.grad_gA_t = Matrix(n, d);
        r.grad_gB_t = Matrix(n, d);
    }
    const Matrix* cur_q = queue_ptr(v.extra_neg_cur);
    const Matrix* prev_q = queue_ptr(v.extra_neg_prev);
    const Ordering ab{v.zA_t, v.zB_t, v.zA_prev, v.zB_prev, v.gA_t,
                      &r.grad_zA_t, &r.grad_zB_t, distill ? &r.grad_gA_t : nullptr,
                      cur_q, prev_q};
    const Ordering ba{v.zB_t, v.zA_t, v.zB_prev, v.zA_prev, v.gB_t,
                      &r.grad_zB_t, &r.grad_zA_t, distill ? &r.grad_gB_t : nullptr,
                      cur_q, prev_q};
    // Each ordering enters with weight 1/2, each anchor with 1/N.
    const double scale = 0.5 / static_cast<double>(n);
    double l_ab = ordering_l1(ab, cfg.tau, pn, scale);
    if (distill) l_ab += ordering_l2(ab, cfg.tau, pn, scale);
    double l_ba = ordering_l1(ba, cfg.tau, pn, scale);
    if (distill) l_ba += ordering_l2(ba, cfg.tau, pn, scale);
    r.value = 0.5 * (l_ab + l_ba);
    return r;
}

ClosedFormGradient closed_form_grad(const ContrastiveViews& v, double tau, NormCheck check) {
    validate_views(v, {true, false, false}, check);
    const std::size_t n = v.zA_t.rows();
    const std::size_t d = v.zA_t.cols();
    // Identity predictor: the distillation anchor is zA_t itself.
    const Ordering o{v.zA_t, v.zB_t, v.zA_prev, v.zB_prev, v.zA_t, nullptr, nullptr, nullptr,
                     queue_ptr(v.extra_neg_cur), queue_ptr(v.extra_neg_prev)};
    std::vector<Pool> set1 = current_pools(o);
    for (const Pool& p : previous_pools(o)) set1.push_back(p);
    std::vector<Pool> set2 = previous_pools(o);
    for (const Pool& p : current_pools(o)) set2.push_back(p);

    ClosedFormGradient out;
    out.grad = Matrix(n, d);
    out.mass_l1.resize(n);
    out.mass_l2.resize(n);
    std::vector<double> logits;
    std::vector<const double*> rows;
    for (std::size_t i = 0; i < n; ++i) {
        const auto a = v.zA_t.row(i);
        auto g = out.grad.row(i);
        const auto zb = v.zB_t.row(i);
        const auto zp = v.zA_prev.row(i);
        for (std::size_t k = 0; k < d; ++k) g[k] = -(zb[k] + zp[k]) / 2.0;  // part (a)

        double* mass[2] = {&out.mass_l1[i], &out.mass_l2[i]};
        const std::vector<Pool>* sets[2] = {&set1, &set2};
        for (int s = 0; s < 2; ++s) {
            logits.clear();
            rows.clear();
            for (const Pool& p : *sets[s]) {
                for (std::size_t r = 0; r < p.emb->rows(); ++r) {
                    if (p.skip_anchor_row && r == i) continue;
                    logits.push_back(dot(a, p.emb->row(r)) / tau);
                    rows.push_back(p.emb->row(r).data());
                }
            }
            const double m = *std::max_element(logits.begin(), logits.end());
            double sumexp = 0.0;
            for (double l : logits) sumexp += std::exp(l - m);
            double total = 0.0;
            for (std::size_t j = 0; j < logits.size(); ++j) {
                const double w = 0.5 * std::exp(logits[j] - m) / sumexp;
                total += w;
                for (std::size_t k = 0; k < d; ++k) g[k] += w * rows[j][k];  // part (b)
            }
            *mass[s] = total;
        }
        if (std::abs(out.mass_l1[i] + out.mass_l2[i] - 1.0) > 1e-12)
            throw std::logic_error("closed_form_grad: softmax masses do not sum to 1");
        for (std::size_t k = 0; k < d; ++k) g[k] /= tau;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Non-contrastive losses

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b)) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
    }
}

// 2 (a - b) / N
Matrix distance_grad(const Matrix& a, const Matrix& b) {
    Matrix g(a.rows(), a.cols());
    const double s = 2.0 / static_cast<double>(a.rows());
    for (std::size_t i = 0; i < a.size(); ++i) g.data()[i] = s * (a.data()[i] - b.data()[i]);
    return g;
}

// a - lambda * b, elementwise.
Matrix subtract_scaled(const Matrix& a, double lambda, const Matrix& b) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i)
        out.data()[i] = a.data()[i] - lambda * b.data()[i];
    return out;
}

struct ColumnStats {
    std::vector<double> mean;
    std::vector<double> std;
};

Matrix center_columns(const Matrix& z, std::vector<double>& mean) {
    const std::size_t n = z.rows();
    const std::size_t d = z.cols();
    mean.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) mean[k] += z(i, k);
    for (double& m : mean) m /= static_cast<double>(n);
    Matrix c(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) c(i, k) = z(i, k) - mean[k];
    return c;
}

// Removes the per-column mean of a gradient (backward of centering).
void project_out_column_mean(Matrix& g) {
    std::vector<double> mean;
    g = center_columns(g, mean);
}

// Adds d(weight * v(z))/dz into grad (if non-null) and returns v(z).
double variance_term(const Matrix& z, const VicregWeights& w, double weight, Matrix* grad) {
    const std::size_t n = z.rows();
    const std::size_t d = z.cols();
    std::vector<double> mean;
    const Matrix c = center_columns(z, mean);
    double v = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += c(i, k) * c(i, k);
        var /= static_cast<double>(n - 1);
        const double std = std::sqrt(var + w.eps);
        const double hinge = w.gamma - std;
        if (hinge > 0.0) {
            v += hinge;
            if (grad) {
                const double s = -weight / (static_cast<double>(d) *
                                            static_cast<double>(n - 1) * std);
                for (std::size_t i = 0; i < n; ++i) (*grad)(i, k) += s * c(i, k);
            }
        }
    }
    return v / static_cast<double>(d);
}

// Adds d(weight * c(z))/dz into grad (if non-null) and returns c(z).
double covariance_term(const Matrix& z, double weight, Matrix* grad) {
    const std::size_t n = z.rows();
    const std::size_t d = z.cols();
    std::vector<double> mean;
    const Matrix c = center_columns(z, mean);
    Matrix cov = matmul(transpose(c), c);
    cov *= 1.0 / static_cast<double>(n - 1);
    double penalty = 0.0;
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
            if (a != b) penalty += cov(a, b) * cov(a, b);
    if (grad) {
        Matrix off = cov;
        for (std::size_t a = 0; a < d; ++a) off(a, a) = 0.0;
        Matrix g = matmul(c, off);
        g *= weight * 4.0 / (static_cast<double>(d) * static_cast<double>(n - 1));
        project_out_column_mean(g);
        *grad += g;
    }
    return penalty / static_cast<double>(d);
}

// Column standardization with biased std; the statistics are kept for backward.
Matrix standardize(const Matrix& z, ColumnStats& stats) {
    const std::size_t n = z.rows();
    const std::size_t d = z.cols();
    Matrix c = center_columns(z, stats.mean);
    stats.std.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) {
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += c(i, k) * c(i, k);
        const double std = std::sqrt(var / static_cast<double>(n));
        if (!(std > 1e-12))
            throw Error(ErrorCode::ZeroVarianceColumn, "column " + std::to_string(k) +
                                                           " has zero variance");
        stats.std[k] = std;
        for (std::size_t i = 0; i < n; ++i) c(i, k) /= std;
    }
    return c;
}

// dL/dz from dL/dz~ for z~ = (z - mean) / std: (g - mean(g) - z~ mean(g z~)) / std.
Matrix standardize_backward(const Matrix& zt, const ColumnStats& stats, const Matrix& g) {
    const std::size_t n = zt.rows();
    const std::size_t d = zt.cols();
    Matrix out(n, d);
    for (std::size_t k = 0; k < d; ++k) {
        double mg = 0.0;
        double mgz = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mg += g(i, k);
            mgz += g(i, k) * zt(i, k);
        }
        mg /= static_cast<double>(n);
        mgz /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            out(i, k) = (g(i, k) - mg - zt(i, k) * mgz) / stats.std[k];
    }
    return out;
}

void require_batch(const Matrix& z, std::size_t min_rows, const char* what) {
    if (z.rows() < min_rows) {
        throw Error(ErrorCode::BatchTooSmall, std::string(what) + " needs at least " +
                                                  std::to_string(min_rows) + " rows");
    }
}

}  // namespace

double mean_squared_distance(const Matrix& a, const Matrix& b) {
    require_same(a, b, "mean_squared_distance");
    if (a.rows() == 0) throw Error(ErrorCode::EmptyBatch, "mean_squared_distance of empty batch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += squared_distance(a.row(i), b.row(i));
    return s / static_cast<double>(a.rows());
}

LossTerm byol_loss(const Matrix& online_pred, const Matrix& target_proj, NormCheck check) {
    require_same(online_pred, target_proj, "byol_loss");
    require_unit_rows(online_pred, "online_pred", check);
    require_unit_rows(target_proj, "target_proj", check);
    LossTerm t;
    t.value = mean_squared_distance(online_pred, target_proj);
    t.grad_first = distance_grad(online_pred, target_proj);
    return t;
}

LossTerm byol_pnr_l2(const Matrix& gA_t, const Matrix& zA_prev, const Matrix& zB_prev,
                     double lambda_pnr, NormCheck check) {
    require_same(gA_t, zB_prev, "byol_pnr_l2");
    if (lambda_pnr < 0.0) throw Error(ErrorCode::InvalidArgument, "lambda_pnr < 0");
    const LossTerm distill = byol_loss(gA_t, zA_prev, check);
    const LossTerm repel = byol_loss(gA_t, zB_prev, check);
    LossTerm t;
    t.value = distill.value - lambda_pnr * repel.value;
    t.grad_first = subtract_scaled(distill.grad_first, lambda_pnr, repel.grad_first);
    return t;
}

double vicreg_variance(const Matrix& z, const VicregWeights& w) {
    require_batch(z, 2, "vicreg_variance");
    return variance_term(z, w, 0.0, nullptr);
}

double vicreg_covariance(const Matrix& z) {
    require_batch(z, 2, "vicreg_covariance");
    return covariance_term(z, 0.0, nullptr);
}

LossTerm vicreg_loss(const Matrix& zA, const Matrix& zB, const VicregWeights& w) {
    require_same(zA, zB, "vicreg_loss");
    require_batch(zA, 2, "vicreg_loss");
    LossTerm t;
    const double s = mean_squared_distance(zA, zB);
    t.grad_first = distance_grad(zA, zB) * w.invariance;
    t.grad_second = distance_grad(zB, zA) * w.invariance;
    const double v_a = variance_term(zA, w, w.variance, &t.grad_first);
    const double v_b = variance_term(zB, w, w.variance, &t.grad_second);
    const double c_a = covariance_term(zA, w.covariance, &t.grad_first);
    const double c_b = covariance_term(zB, w.covariance, &t.grad_second);
    t.value = w.invariance * s + w.variance * (v_a + v_b) + w.covariance * (c_a + c_b);
    return t;
}

LossTerm vicreg_pnr_l2(const Matrix& gA_t, const Matrix& zA_prev, const Matrix& zB_prev,
                       double lambda_cassle, double lambda_pnr) {
    require_same(gA_t, zA_prev, "vicreg_pnr_l2");
    require_same(gA_t, zB_prev, "vicreg_pnr_l2");
    LossTerm t;
    const double s_distill = mean_squared_distance(gA_t, zA_prev);
    const double s_repel = mean_squared_distance(gA_t, zB_prev);
    t.value = lambda_cassle * (s_distill * 0.5) - lambda_pnr * (s_repel * 0.5);
    const Matrix g_distill = distance_grad(gA_t, zA_prev) * (0.5 * lambda_cassle);
    const Matrix g_repel = distance_grad(gA_t, zB_prev) * 0.5;
    t.grad_first = subtract_scaled(g_distill, lambda_pnr, g_repel);
    return t;
}

LossTerm barlow_loss(const Matrix& zA, const Matrix& zB, double lambda_bt) {
    require_same(zA, zB, "barlow_loss");
    require_batch(zA, 2, "barlow_loss");
    const std::size_t n = zA.rows();
    const std::size_t d = zA.cols();
    ColumnStats sa, sb;
    const Matrix ta = standardize(zA, sa);
    const Matrix tb = standardize(zB, sb);
    Matrix c = matmul(transpose(ta), tb);
    c *= 1.0 / static_cast<double>(n);

    LossTerm t;
    double on_diag = 0.0;
    double off_diag = 0.0;
    Matrix dc(d, d);  // dL/dC
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
            if (a == b) {
                const double r = 1.0 - c(a, a);
                on_diag += r * r;
                dc(a, a) = -2.0 * r;
            } else {
                off_diag += c(a, b) * c(a, b);
                dc(a, b) = 2.0 * lambda_bt * c(a, b);
            }
        }
    }
    t.value = on_diag + lambda_bt * off_diag;
    // C = ta^T tb / N  =>  dL/dta = tb dC^T / N,  dL/dtb = ta dC / N.
    Matrix g_ta = matmul(tb, transpose(dc));
    g_ta *= 1.0 / static_cast<double>(n);
    Matrix g_tb = matmul(ta, dc);
    g_tb *= 1.0 / static_cast<double>(n);
    t.grad_first = standardize_backward(ta, sa, g_ta);
    t.grad_second = standardize_backward(tb, sb, g_tb);
    return t;
}

LossTerm barlow_pnr_l2(const Matrix& gA_t, const Matrix& zA_prev, const Matrix& zB_prev,
                       double lambda_bt, double lambda_pnr) {
    require_same(gA_t, zB_prev, "barlow_pnr_l2");
    if (lambda_pnr < 0.0) throw Error(ErrorCode::InvalidArgument, "lambda_pnr < 0");
    const LossTerm distill = barlow_loss(gA_t, zA_prev, lambda_bt);
    const Matrix g_unit = row_l2_normalize(gA_t);
    const Matrix neg_unit = row_l2_normalize(zB_prev);
    const LossTerm repel = byol_loss(g_unit, neg_unit, NormCheck::Skip);
    LossTerm t;
    t.value = distill.value - lambda_pnr * repel.value;
    const Matrix repel_grad = row_l2_normalize_backward(gA_t, repel.grad_first);
    t.grad_first = subtract_scaled(distill.grad_first, lambda_pnr, repel_grad);
    return t;
}

LossResult noncontrastive_pnr_total(const NonContrastiveViews& v, const PnrConfig& cfg) {
    if (is_contrastive(cfg.method))
        throw Error(ErrorCode::InvalidArgument, "noncontrastive_pnr_total needs BYOL/VICReg/Barlow");
    const bool distill = cfg.regime != Regime::FT;
    const bool pn = cfg.regime == Regime::PNR;
    LossResult r;
    double l_ab = 0.0;
    double l_ba = 0.0;

    switch (cfg.method) {
        case Method::BYOL: {
            const LossTerm ab = byol_loss(v.qA_t, v.targetB);
            const LossTerm ba = byol_loss(v.qB_t, v.targetA);
            l_ab = ab.value;
            l_ba = ba.value;
            r.grad_qA_t = ab.grad_first * 0.5;
            r.grad_qB_t = ba.grad_first * 0.5;
            if (distill) {
                const double lambda = pn ? cfg.lambda : 0.0;
                const LossTerm dab = byol_pnr_l2(v.gA_t, v.zA_prev, v.zB_prev, lambda);
                const LossTerm dba = byol_pnr_l2(v.gB_t, v.zB_prev, v.zA_prev, lambda);
                l_ab += dab.value;
                l_ba += dba.value;
                r.grad_gA_t = dab.grad_first * 0.5;
                r.grad_gB_t = dba.grad_first * 0.5;
            }
            break;
        }
        case Method::VICReg: {
            const LossTerm ab = vicreg_loss(v.zA_t, v.zB_t, cfg.vicreg);
            const LossTerm ba = vicreg_loss(v.zB_t, v.zA_t, cfg.vicreg);
            l_ab = ab.value;
            l_ba = ba.value;
            r.grad_zA_t = (ab.grad_first + ba.grad_second) * 0.5;
            r.grad_zB_t = (ab.grad_second + ba.grad_first) * 0.5;
            if (distill) {
                const double lambda = pn ? cfg.lambda_pnr : 0.0;
                const LossTerm dab =
                    vicreg_pnr_l2(v.gA_t, v.zA_prev, v.zB_prev, cfg.lambda_cassle, lambda);
                const LossTerm dba =
                    vicreg_pnr_l2(v.gB_t, v.zB_prev, v.zA_prev, cfg.lambda_cassle, lambda);
                l_ab += dab.value;
                l_ba += dba.value;
                r.grad_gA_t = dab.grad_first * 0.5;
                r.grad_gB_t = dba.grad_first * 0.5;
            }
            break;
        }
        case Method::Barlow: {
            const LossTerm ab = barlow_loss(v.zA_t, v.zB_t, cfg.barlow_lambda);
            const LossTerm ba = barlow_loss(v.zB_t, v.zA_t, cfg.barlow_lambda);
            l_ab = ab.value;
            l_ba = ba.value;
            r.grad_zA_t = (ab.grad_first + ba.grad_second) * 0.5;
            r.grad_zB_t = (ab.grad_second + ba.grad_first) * 0.5;
            if (distill) {
                const double lambda = pn ? cfg.lambda : 0.0;
                const LossTerm dab =
                    barlow_pnr_l2(v.gA_t, v.zA_prev, v.zB_prev, cfg.barlow_lambda, lambda);
                const LossTerm dba =
                    barlow_pnr_l2(v.gB_t, v.zB_prev, v.zA_prev, cfg.barlow_lambda, lambda);
                l_ab += dab.value;
                l_ba += dba.value;
                r.grad_gA_t = dab.grad_first * 0.5;
                r.grad_gB_t = dba.grad_first * 0.5;
            }
            break;
        }
        default: break;
    }
    r.value = 0.5 * (l_ab + l_ba);
    return r;
}

}  // namespace pnr
