#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pnr/numerics.hpp"

namespace pnr {

// One fully connected layer: y = x W^T + b, weight is out x in.
struct DenseLayer {
    Matrix weight;
    std::vector<double> bias;

    std::size_t in_dim() const noexcept { return weight.cols(); }
    std::size_t out_dim() const noexcept { return weight.rows(); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// ReLU after every layer except the last.
struct MlpParams {
    std::vector<DenseLayer> layers;

    std::size_t in_dim() const noexcept { return layers.empty() ? 0 : layers.front().in_dim(); }
    std::size_t out_dim() const noexcept { return layers.empty() ? 0 : layers.back().out_dim(); }

    friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

// Intermediates kept by mlp_forward for the backward pass.
struct MlpTrace {
    std::vector<Matrix> inputs;          // input to layer k
    std::vector<Matrix> pre_activations; // x W^T + b of layer k
    Matrix output;
};

MlpTrace mlp_forward(const MlpParams& mlp, const Matrix& x);
Matrix mlp_apply(const MlpParams& mlp, const Matrix& x);

// Accumulates parameter gradients into `grads` (same shapes as `mlp`) and returns dL/dx.
// ReLU derivative at exactly zero is taken as 0.
Matrix mlp_backward(const MlpParams& mlp, const MlpTrace& trace, const Matrix& grad_out,
                    MlpParams& grads);

MlpParams zeros_like(const MlpParams& mlp);
// Builds an MLP with the given layer sizes, He-initialized from rng.
// dims = {in, hidden..., out}; needs at least two entries, all >= 1.
MlpParams init_mlp(Rng& rng, std::span<const std::size_t> dims);

// Layer-size lists for each part of the stack. An empty ssl_predictor means the
// stack has no BYOL online predictor.
struct StackDims {
    std::vector<std::size_t> encoder;
    std::vector<std::size_t> projector;
    std::vector<std::size_t> predictor;
    std::vector<std::size_t> ssl_predictor;
};

// h (encoder) -> m (projector) -> g (predictor). g maps the projection space to
// itself and is only used by the distillation terms. ssl_predictor is the BYOL
// online predictor q, separate from g.
struct EncoderStack {
    MlpParams encoder;
    MlpParams projector;
    MlpParams predictor;
    std::optional<MlpParams> ssl_predictor;

    friend bool operator==(const EncoderStack&, const EncoderStack&) = default;
};

// Gradients have exactly the shape of the parameters they belong to.
using StackGradients = EncoderStack;

// Throws BadDims when a list is malformed or the projector/predictor widths do not chain.
EncoderStack init_stack(Rng& rng, const StackDims& dims);
EncoderStack zeros_like(const EncoderStack& stack);

// Every parameter buffer in a fixed order: encoder, projector, predictor, ssl_predictor;
// within an MLP, layer by layer, weight then bias.
std::vector<std::span<double>> parameter_spans(EncoderStack& stack);
std::vector<std::span<const double>> parameter_spans(const EncoderStack& stack);
std::size_t parameter_count(const EncoderStack& stack);

// Little-endian f64 dump of parameter_spans order; used for fingerprints.
std::vector<std::uint8_t> parameter_bytes(const EncoderStack& stack);
std::uint64_t fingerprint(const EncoderStack& stack);

struct ForwardPass {
    Matrix features;                 // h(x)
    Matrix proj;                     // m(h(x)), unnormalized
    std::optional<Matrix> pred;      // g(proj)
    std::optional<Matrix> ssl_pred;  // q(proj), BYOL only
    MlpTrace encoder_trace;
    MlpTrace projector_trace;
    std::optional<MlpTrace> predictor_trace;
    std::optional<MlpTrace> ssl_predictor_trace;
};

ForwardPass forward(const EncoderStack& stack, const Matrix& x, bool want_pred,
                    bool want_ssl_pred = false);

// Encoder output only, for probing.
Matrix encode(const EncoderStack& stack, const Matrix& x);

// Upstream gradients w.r.t. the stack outputs. pred / ssl_pred are only needed if
// the forward pass produced them and a loss consumed them.
struct OutputGradients {
    Matrix proj;
    std::optional<Matrix> pred;
    std::optional<Matrix> ssl_pred;
};

// Accumulates into grads.
void backward(const EncoderStack& stack, const ForwardPass& pass, const OutputGradients& upstream,
              StackGradients& grads);
// Recomputes the forward pass from x and returns fresh gradients.
StackGradients backward(const EncoderStack& stack, const Matrix& x,
                        const OutputGradients& upstream);

struct OptimizerState {
    EncoderStack velocity;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

OptimizerState make_optimizer(const EncoderStack& stack, double lr, double momentum,
                              double weight_decay);

// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.
void sgd_step(EncoderStack& params, const StackGradients& grads, OptimizerState& opt);

// EMA shadow of encoder + projector for BYOL targets.
struct TargetNetwork {
    MlpParams encoder;
    MlpParams projector;
    double ema_momentum = 0.99;

    friend bool operator==(const TargetNetwork&, const TargetNetwork&) = default;
};

TargetNetwork make_target(const EncoderStack& online, double ema_momentum);
// target <- m * target + (1 - m) * online, parameter-wise.
void ema_update(TargetNetwork& target, const EncoderStack& online);
Matrix target_project(const TargetNetwork& target, const Matrix& x);

// Immutable copy of a trained stack (the task t-1 model). Cheap to copy and
// safe to share across threads.
class FrozenStack {
public:
    explicit FrozenStack(const EncoderStack& stack)
        : stack_(std::make_shared<const EncoderStack>(stack)) {}

    const EncoderStack& stack() const noexcept { return *stack_; }

private:
    std::shared_ptr<const EncoderStack> stack_;
};

FrozenStack snapshot_frozen(const EncoderStack& stack);
FrozenStack snapshot_frozen(const FrozenStack& frozen);

}  // namespace pnr
