#include "pnr/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <string>

namespace pnr {

namespace {

Matrix dense_forward(const DenseLayer& layer, const Matrix& x) {
    if (x.cols() != layer.in_dim()) {
        throw Error(ErrorCode::ShapeMismatch, "layer expects " + std::to_string(layer.in_dim()) +
                                                  " inputs, got " + std::to_string(x.cols()));
    }
    Matrix out(x.rows(), layer.out_dim());
    for (std::size_t n = 0; n < x.rows(); ++n) {
        const auto xn = x.row(n);
        auto on = out.row(n);
        for (std::size_t o = 0; o < layer.out_dim(); ++o)
            on[o] = layer.bias[o] + dot(xn, layer.weight.row(o));
    }
    return out;
}

void relu_inplace(Matrix& m) noexcept {
    for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

void check_mlp_dims(std::span<const std::size_t> dims, const char* name) {
    if (dims.size() < 2) {
        throw Error(ErrorCode::BadDims, std::string(name) + " needs at least input and output size");
    }
    for (std::size_t d : dims) {
        if (d < 1) throw Error(ErrorCode::BadDims, std::string(name) + " has a zero-width layer");
    }
}

template <typename Fn>
void for_each_pair(MlpParams& a, const MlpParams& b, Fn&& fn) {
    if (a.layers.size() != b.layers.size())
        throw Error(ErrorCode::ShapeMismatch, "layer count differs");
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        auto& la = a.layers[k];
        const auto& lb = b.layers[k];
        if (!la.weight.same_shape(lb.weight) || la.bias.size() != lb.bias.size())
            throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(k) + " shape differs");
        for (std::size_t i = 0; i < la.weight.size(); ++i)
            fn(la.weight.data()[i], lb.weight.data()[i]);
        for (std::size_t i = 0; i < la.bias.size(); ++i) fn(la.bias[i], lb.bias[i]);
    }
}

void append_spans(MlpParams& mlp, std::vector<std::span<double>>& out) {
    for (auto& layer : mlp.layers) {
        out.emplace_back(layer.weight.data());
        out.emplace_back(layer.bias);
    }
}

void append_spans(const MlpParams& mlp, std::vector<std::span<const double>>& out) {
    for (const auto& layer : mlp.layers) {
        out.emplace_back(layer.weight.data());
        out.emplace_back(layer.bias);
    }
}

}  // namespace

MlpTrace mlp_forward(const MlpParams& mlp, const Matrix& x) {
    MlpTrace trace;
    trace.inputs.reserve(mlp.layers.size());
    trace.pre_activations.reserve(mlp.layers.size());
    Matrix current = x;
    for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
        Matrix pre = dense_forward(mlp.layers[k], current);
        trace.inputs.push_back(std::move(current));
        current = pre;
        if (k + 1 < mlp.layers.size()) relu_inplace(current);
        trace.pre_activations.push_back(std::move(pre));
    }
    trace.output = std::move(current);
    return trace;
}

Matrix mlp_apply(const MlpParams& mlp, const Matrix& x) {
    Matrix current = x;
    for (std::size_t k = 0; k < mlp.layers.size(); ++k) {
        current = dense_forward(mlp.layers[k], current);
        if (k + 1 < mlp.layers.size()) relu_inplace(current);
    }
    return current;
}

Matrix mlp_backward(const MlpParams& mlp, const MlpTrace& trace, const Matrix& grad_out,
                    MlpParams& grads) {
    if (!grad_out.same_shape(trace.output))
        throw Error(ErrorCode::ShapeMismatch, "mlp_backward: upstream gradient shape");
    Matrix grad = grad_out;
    for (std::size_t k = mlp.layers.size(); k-- > 0;) {
        const auto& layer = mlp.layers[k];
        auto& g = grads.layers[k];
        const Matrix& input = trace.inputs[k];
        if (k + 1 < mlp.layers.size()) {
            const Matrix& pre = trace.pre_activations[k];
            for (std::size_t i = 0; i < grad.size(); ++i)
                if (!(pre.data()[i] > 0.0)) grad.data()[i] = 0.0;
        }
        Matrix grad_in(input.rows(), layer.in_dim());
        for (std::size_t n = 0; n < input.rows(); ++n) {
            const auto xn = input.row(n);
            const auto gn = grad.row(n);
            auto gin = grad_in.row(n);
            for (std::size_t o = 0; o < layer.out_dim(); ++o) {
                const double go = gn[o];
                if (go == 0.0) continue;
                g.bias[o] += go;
                auto gw = g.weight.row(o);
                const auto w = layer.weight.row(o);
                for (std::size_t i = 0; i < layer.in_dim(); ++i) {
                    gw[i] += go * xn[i];
                    gin[i] += go * w[i];
                }
            }
        }
        grad = std::move(grad_in);
    }
    return grad;
}

MlpParams zeros_like(const MlpParams& mlp) {
    MlpParams out;
    for (const auto& layer : mlp.layers) {
        out.layers.push_back(DenseLayer{Matrix(layer.out_dim(), layer.in_dim()),
                                        std::vector<double>(layer.out_dim(), 0.0)});
    }
    return out;
}

MlpParams init_mlp(Rng& rng, std::span<const std::size_t> dims) {
    check_mlp_dims(dims, "mlp");
    MlpParams mlp;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        const std::size_t in = dims[k];
        const std::size_t out = dims[k + 1];
        const double std = std::sqrt(2.0 / static_cast<double>(in));
        mlp.layers.push_back(
            DenseLayer{gaussian_matrix(rng, out, in, std), std::vector<double>(out, 0.0)});
    }
    return mlp;
}

EncoderStack init_stack(Rng& rng, const StackDims& dims) {
    check_mlp_dims(dims.encoder, "encoder");
    check_mlp_dims(dims.projector, "projector");
    check_mlp_dims(dims.predictor, "predictor");
    if (dims.projector.front() != dims.encoder.back())
        throw Error(ErrorCode::BadDims, "projector input must equal encoder output");
    const std::size_t proj_dim = dims.projector.back();
    if (dims.predictor.front() != proj_dim || dims.predictor.back() != proj_dim)
        throw Error(ErrorCode::BadDims, "predictor must map the projection space to itself");
    EncoderStack stack;
    stack.encoder = init_mlp(rng, dims.encoder);
    stack.projector = init_mlp(rng, dims.projector);
    stack.predictor = init_mlp(rng, dims.predictor);
    if (!dims.ssl_predictor.empty()) {
        check_mlp_dims(dims.ssl_predictor, "ssl_predictor");
        if (dims.ssl_predictor.front() != proj_dim || dims.ssl_predictor.back() != proj_dim)
            throw Error(ErrorCode::BadDims, "ssl_predictor must map the projection space to itself");
        stack.ssl_predictor = init_mlp(rng, dims.ssl_predictor);
    }
    return stack;
}

EncoderStack zeros_like(const EncoderStack& stack) {
    EncoderStack out;
    out.encoder = zeros_like(stack.encoder);
    out.projector = zeros_like(stack.projector);
    out.predictor = zeros_like(stack.predictor);
    if (stack.ssl_predictor) out.ssl_predictor = zeros_like(*stack.ssl_predictor);
    return out;
}

std::vector<std::span<double>> parameter_spans(EncoderStack& stack) {
    std::vector<std::span<double>> out;
    append_spans(stack.encoder, out);
    append_spans(stack.projector, out);
    append_spans(stack.predictor, out);
    if (stack.ssl_predictor) append_spans(*stack.ssl_predictor, out);
    return out;
}

std::vector<std::span<const double>> parameter_spans(const EncoderStack& stack) {
    std::vector<std::span<const double>> out;
    append_spans(stack.encoder, out);
    append_spans(stack.projector, out);
    append_spans(stack.predictor, out);
    if (stack.ssl_predictor) append_spans(*stack.ssl_predictor, out);
    return out;
}

std::size_t parameter_count(const EncoderStack& stack) {
    std::size_t n = 0;
    for (const auto s : parameter_spans(stack)) n += s.size();
    return n;
}

std::vector<std::uint8_t> parameter_bytes(const EncoderStack& stack) {
    static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
    std::vector<std::uint8_t> bytes;
    bytes.reserve(parameter_count(stack) * sizeof(double));
    for (const auto s : parameter_spans(stack)) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
        bytes.insert(bytes.end(), p, p + s.size_bytes());
    }
    return bytes;
}

std::uint64_t fingerprint(const EncoderStack& stack) { return fnv1a64(parameter_bytes(stack)); }

ForwardPass forward(const EncoderStack& stack, const Matrix& x, bool want_pred,
                    bool want_ssl_pred) {
    if (x.cols() != stack.encoder.in_dim()) {
        throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.cols()) +
                                                  " columns, encoder expects " +
                                                  std::to_string(stack.encoder.in_dim()));
    }
    ForwardPass pass;
    pass.encoder_trace = mlp_forward(stack.encoder, x);
    pass.features = pass.encoder_trace.output;
    pass.projector_trace = mlp_forward(stack.projector, pass.features);
    pass.proj = pass.projector_trace.output;
    if (want_pred) {
        pass.predictor_trace = mlp_forward(stack.predictor, pass.proj);
        pass.pred = pass.predictor_trace->output;
    }
    if (want_ssl_pred) {
        if (!stack.ssl_predictor)
            throw Error(ErrorCode::MissingPredictorOutput, "stack has no ssl predictor");
        pass.ssl_predictor_trace = mlp_forward(*stack.ssl_predictor, pass.proj);
        pass.ssl_pred = pass.ssl_predictor_trace->output;
    }
    return pass;
}

Matrix encode(const EncoderStack& stack, const Matrix& x) {
    if (x.cols() != stack.encoder.in_dim())
        throw Error(ErrorCode::ShapeMismatch, "encode: input width");
    return mlp_apply(stack.encoder, x);
}

void backward(const EncoderStack& stack, const ForwardPass& pass, const OutputGradients& upstream,
              StackGradients& grads) {
    if (!upstream.proj.same_shape(pass.proj))
        throw Error(ErrorCode::ShapeMismatch, "grad_proj shape");
    Matrix grad_proj = upstream.proj;
    if (upstream.pred) {
        if (!pass.predictor_trace)
            throw Error(ErrorCode::MissingPredictorOutput, "grad_pred given without pred");
        if (!upstream.pred->same_shape(*pass.pred))
            throw Error(ErrorCode::ShapeMismatch, "grad_pred shape");
        grad_proj += mlp_backward(stack.predictor, *pass.predictor_trace, *upstream.pred,
                                  grads.predictor);
    }
    if (upstream.ssl_pred) {
        if (!pass.ssl_predictor_trace || !stack.ssl_predictor || !grads.ssl_predictor)
            throw Error(ErrorCode::MissingPredictorOutput, "grad_ssl_pred given without ssl_pred");
        grad_proj += mlp_backward(*stack.ssl_predictor, *pass.ssl_predictor_trace,
                                  *upstream.ssl_pred, *grads.ssl_predictor);
    }
    const Matrix grad_features =
        mlp_backward(stack.projector, pass.projector_trace, grad_proj, grads.projector);
    mlp_backward(stack.encoder, pass.encoder_trace, grad_features, grads.encoder);
}

StackGradients backward(const EncoderStack& stack, const Matrix& x,
                        const OutputGradients& upstream) {
    const ForwardPass pass =
        forward(stack, x, upstream.pred.has_value(), upstream.ssl_pred.has_value());
    StackGradients grads = zeros_like(stack);
    backward(stack, pass, upstream, grads);
    return grads;
}

OptimizerState make_optimizer(const EncoderStack& stack, double lr, double momentum,
                              double weight_decay) {
    return OptimizerState{zeros_like(stack), lr, momentum, weight_decay};
}

void sgd_step(EncoderStack& params, const StackGradients& grads, OptimizerState& opt) {
    auto p = parameter_spans(params);
    const auto g = parameter_spans(grads);
    auto v = parameter_spans(opt.velocity);
    if (p.size() != g.size() || p.size() != v.size())
        throw Error(ErrorCode::ShapeMismatch, "sgd_step: buffer count differs");
    for (std::size_t b = 0; b < p.size(); ++b) {
        if (p[b].size() != g[b].size() || p[b].size() != v[b].size())
            throw Error(ErrorCode::ShapeMismatch, "sgd_step: buffer size differs");
        for (std::size_t i = 0; i < p[b].size(); ++i) {
            v[b][i] = opt.momentum * v[b][i] + g[b][i] + opt.weight_decay * p[b][i];
            p[b][i] -= opt.lr * v[b][i];
        }
    }
}

TargetNetwork make_target(const EncoderStack& online, double ema_momentum) {
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0))
        throw Error(ErrorCode::InvalidArgument, "ema momentum outside [0, 1]");
    return TargetNetwork{online.encoder, online.projector, ema_momentum};
}

void ema_update(TargetNetwork& target, const EncoderStack& online) {
    const double m = target.ema_momentum;
    const auto blend = [m](double& t, double o) { t = m * t + (1.0 - m) * o; };
    for_each_pair(target.encoder, online.encoder, blend);
    for_each_pair(target.projector, online.projector, blend);
}

Matrix target_project(const TargetNetwork& target, const Matrix& x) {
    if (x.cols() != target.encoder.in_dim())
        throw Error(ErrorCode::ShapeMismatch, "target_project: input width");
    return mlp_apply(target.projector, mlp_apply(target.encoder, x));
}

FrozenStack snapshot_frozen(const EncoderStack& stack) { return FrozenStack(stack); }
FrozenStack snapshot_frozen(const FrozenStack& frozen) { return frozen; }

}  // namespace pnr
