#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pnr/numerics.hpp"

namespace pnr {

enum class Method { SimCLR, MoCo, BYOL, VICReg, Barlow };
enum class Regime { FT, CaSSLe, PNR };

std::string_view to_string(Method m) noexcept;
std::string_view to_string(Regime r) noexcept;
// Case-insensitive; throws InvalidConfig on unknown names.
Method parse_method(std::string_view name);
Regime parse_regime(std::string_view name);

bool is_contrastive(Method m) noexcept;

// VICReg internals: loss = invariance * s + variance * [v(A) + v(B)] + covariance * [c(A) + c(B)].
struct VicregWeights {
    double invariance = 25.0;
    double variance = 25.0;
    double covariance = 1.0;
    double gamma = 1.0;
    double eps = 1e-4;
};

struct PnrConfig {
    Method method = Method::SimCLR;
    Regime regime = Regime::PNR;
    double tau = 0.2;
    // Pseudo-negative weight of the non-contrastive L2 term (BYOL, Barlow).
    double lambda = 0.5;
    // VICReg distillation and pseudo-negative weights.
    double lambda_cassle = 25.0;
    double lambda_pnr = 23.0;
    VicregWeights vicreg;
    double barlow_lambda = 5e-3;

    // Per-method defaults; lambda follows the CIFAR-100 Class-IL 5-task setting.
    static PnrConfig defaults_for(Method method, Regime regime);
};

// Throws InvalidConfig if tau <= 0 or any lambda < 0.
void validate(const PnrConfig& cfg);

// Embeddings for one batch seen through the current (t) and previous (t-1) models.
// Every matrix is row-normalized. gA_t / gB_t are predictor outputs and may be
// left empty when no distillation term needs them. The optional queue snapshots
// supply extra negatives in MoCo mode: extra_neg_cur extends N1 and PN2,
// extra_neg_prev extends PN1 and N2.
struct ContrastiveViews {
    Matrix zA_t, zB_t;
    Matrix zA_prev, zB_prev;
    Matrix gA_t, gB_t;
    std::optional<Matrix> extra_neg_cur;
    std::optional<Matrix> extra_neg_prev;
};

// Gradients are only ever produced for current-model quantities; the previous
// model is frozen. Unused gradients are left as empty matrices.
struct LossResult {
    double value = 0.0;
    Matrix grad_zA_t, grad_zB_t;
    Matrix grad_gA_t, grad_gB_t;
    Matrix grad_qA_t, grad_qB_t;  // BYOL online predictor outputs
};

// Value and gradient of a two-argument loss. grad_second is empty when the
// second argument is a constant (targets, previous-model embeddings).
struct LossTerm {
    double value = 0.0;
    Matrix grad_first;
    Matrix grad_second;
};

// Skip only for finite-difference probing, where perturbations leave the unit sphere.
enum class NormCheck { Enforce, Skip };

inline constexpr double kUnitNormTolerance = 1e-9;

// Plasticity term: mean over anchors i of
//   -log exp(zA_i . zB_i / tau) / sum_{z in N1(i) u PN1(i)} exp(zA_i . z / tau)
// with N1(i) = {zA_t, zB_t} \ {zA_i} and PN1(i) = {zA_prev, zB_prev} \ {zA_prev_i}.
// pseudo_negatives = false empties PN1 (the CaSSLe / fine-tuning form).
LossResult pnr_l1(const ContrastiveViews& v, double tau, bool pseudo_negatives = true,
                  NormCheck check = NormCheck::Enforce);

// Distillation term: mean over i of
//   -log exp(gA_i . zA_prev_i / tau) / sum_{z in N2(i) u PN2(i)} exp(gA_i . z / tau)
// with N2(i) = {zA_prev, zB_prev} \ {zA_prev_i} and PN2(i) = {zA_t, zB_t} \ {zA_i}.
LossResult pnr_l2(const ContrastiveViews& v, double tau, bool pseudo_negatives = true,
                  NormCheck check = NormCheck::Enforce);

// 1/2 [L(A, B) + L(B, A)] with L = L1 + L2, where the (B, A) ordering swaps the
// roles of the two augmentations (anchor zB_t, positive zA_t, distillation target
// zB_prev, predictor output gB_t). Regime CaSSLe empties the PN sets, regime FT
// keeps only L1 without PN1 (previous-model views may then be empty).
LossResult cssl_total(const ContrastiveViews& v, const PnrConfig& cfg,
                      NormCheck check = NormCheck::Enforce);

// Closed-form anchor gradient with an identity predictor (gA_t := zA_t):
//   row i = [ -(zB_i + zA_prev_i)/2 + sum_{N1 u PN1} S1(z) z + sum_{N2 u PN2} S2(z) z ] / tau
// where S1, S2 are half the softmax weights of each denominator
// (sum S1 + sum S2 = 1 for every anchor). This is the derivative of
// 1/2 [l1_i + l2_i] with respect to the anchor slot zA_i, other embeddings held fixed.
struct ClosedFormGradient {
    Matrix grad;
    std::vector<double> mass_l1;  // sum of S1 per anchor (1/2 up to rounding)
    std::vector<double> mass_l2;  // sum of S2 per anchor
};

ClosedFormGradient closed_form_grad(const ContrastiveViews& v, double tau,
                                    NormCheck check = NormCheck::Enforce);

// mean_i |online_i - target_i|^2, gradient w.r.t. online only.
LossTerm byol_loss(const Matrix& online_pred, const Matrix& target_proj,
                   NormCheck check = NormCheck::Enforce);

// mean |g - zA_prev|^2 - lambda_pnr * mean |g - zB_prev|^2, gradient w.r.t. g only.
LossTerm byol_pnr_l2(const Matrix& gA_t, const Matrix& zA_prev, const Matrix& zB_prev,
                     double lambda_pnr, NormCheck check = NormCheck::Enforce);

// Mean squared euclidean distance between paired rows, (1/N) sum_i |a_i - b_i|^2.
double mean_squared_distance(const Matrix& a, const Matrix& b);

// Per-dimension variance hinge v(z) = (1/D) sum_d max(0, gamma - sqrt(Var_d + eps)),
// unbiased variance.
double vicreg_variance(const Matrix& z, const VicregWeights& w);
// Off-diagonal covariance penalty c(z) = (1/D) sum_{d != e} Cov(z)_{de}^2.
double vicreg_covariance(const Matrix& z);

// Throws BatchTooSmall if N < 2.
LossTerm vicreg_loss(const Matrix& zA, const Matrix& zB, const VicregWeights& w);

// 0.5 lambda_cassle s(g, zA_prev) - 0.5 lambda_pnr s(g, zB_prev), gradient w.r.t. g only.
LossTerm vicreg_pnr_l2(const Matrix& gA_t, const Matrix& zA_prev, const Matrix& zB_prev,
                       double lambda_cassle, double lambda_pnr);

// Barlow Twins on column-standardized views (biased std):
//   C = (1/N) zA~^T zB~, loss = sum_d (1 - C_dd)^2 + lambda_bt sum_{d != e} C_de^2.
// Throws ZeroVarianceColumn if a column std <= 1e-12, BatchTooSmall if N < 2.
LossTerm barlow_loss(const Matrix& zA, const Matrix& zB, double lambda_bt);

// Barlow distillation barlow_loss(g, zA_prev) minus lambda_pnr * mean |n(g) - n(zB_prev)|^2,
// where n() row-normalizes. Gradient w.r.t. g only.
LossTerm barlow_pnr_l2(const Matrix& gA_t, const Matrix& zA_prev, const Matrix& zB_prev,
                       double lambda_bt, double lambda_pnr);

// Inputs of the non-contrastive objectives. BYOL reads qA_t / qB_t (online
// predictor, normalized), targetA / targetB (EMA target projections, normalized),
// gA_t / gB_t and zA_prev / zB_prev (normalized). VICReg and Barlow read the raw
// projections zA_t / zB_t, raw predictor outputs g and raw previous projections.
struct NonContrastiveViews {
    Matrix zA_t, zB_t;
    Matrix zA_prev, zB_prev;
    Matrix gA_t, gB_t;
    Matrix qA_t, qB_t;
    Matrix targetA, targetB;
};

// 1/2 [L(A, B) + L(B, A)] with L = L1 + L2: L1 is the native SSL loss on the
// current views and L2 the distillation term minus the pseudo-negative term.
// Regime CaSSLe sets the pseudo-negative weight to zero; regime FT drops L2.
LossResult noncontrastive_pnr_total(const NonContrastiveViews& v, const PnrConfig& cfg);

}  // namespace pnr
