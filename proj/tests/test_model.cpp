#include <doctest.h>

#include <cmath>

#include "oracles/naive_forward.hpp"
#include "pnr/model.hpp"
#include "support.hpp"

using pnr::EncoderStack;
using pnr::Matrix;

namespace {

pnr::StackDims small_dims() {
    return {{8, 16, 8}, {8, 8}, {8, 8}, {}};
}

pnr::StackDims deep_dims() {
    return {{6, 12, 10, 7}, {7, 16, 5}, {5, 16, 5}, {5, 16, 5}};
}

pnr::MlpParams scalar_mlp(double w, double b) {
    pnr::MlpParams m;
    m.layers.push_back({Matrix(1, 1, {w}), {b}});
    return m;
}

EncoderStack scalar_stack(double w) {
    return {scalar_mlp(w, w), scalar_mlp(w, w), scalar_mlp(w, w), std::nullopt};
}

void randomize_biases(EncoderStack& s, pnr::Rng& rng) {
    for (pnr::MlpParams* m : {&s.encoder, &s.projector, &s.predictor}) {
        for (auto& layer : m->layers)
            for (double& b : layer.bias) b = 0.1 * rng.gaussian();
    }
    if (s.ssl_predictor)
        for (auto& layer : s.ssl_predictor->layers)
            for (double& b : layer.bias) b = 0.1 * rng.gaussian();
}

double weighted_sum(const Matrix& m, const Matrix& w) {
    double s = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) s += m.data()[k] * w.data()[k];
    return s;
}

}  // namespace

TEST_CASE("init_stack is deterministic and validates dims") {
    pnr::Rng a(1), b(1);
    CHECK(pnr::init_stack(a, small_dims()) == pnr::init_stack(b, small_dims()));

    pnr::Rng c(1);
    pnr::StackDims bad{{8, 16, 8}, {8, 8}, {8, 4}, {}};
    CHECK_THROWS_AS(pnr::init_stack(c, bad), pnr::Error);
    try {
        pnr::init_stack(c, bad);
    } catch (const pnr::Error& e) {
        CHECK(e.code() == pnr::ErrorCode::BadDims);
    }
    pnr::StackDims unchained{{8, 16, 8}, {9, 8}, {8, 8}, {}};
    CHECK_THROWS_AS(pnr::init_stack(c, unchained), pnr::Error);
}

TEST_CASE("He initialization variance") {
    pnr::Rng rng(3);
    const std::vector<std::size_t> dims{4, 4096};
    const pnr::MlpParams m = pnr::init_mlp(rng, dims);
    const auto& w = m.layers[0].weight.data();
    double mean = 0.0;
    for (double x : w) mean += x;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double x : w) var += (x - mean) * (x - mean);
    var /= static_cast<double>(w.size() - 1);
    CHECK(w.size() >= 10000);
    CHECK(std::abs(var - 0.5) <= 0.3 * 0.5);
}

TEST_CASE("forward") {
    pnr::Rng rng(5);
    EncoderStack s = pnr::init_stack(rng, small_dims());
    SUBCASE("zero parameters give zero outputs") {
        for (auto span : pnr::parameter_spans(s)) std::fill(span.begin(), span.end(), 0.0);
        const auto pass = pnr::forward(s, testing::random_matrix(rng, 4, 8), true);
        CHECK(pass.features == Matrix(4, 8));
        CHECK(pass.proj == Matrix(4, 8));
        CHECK(*pass.pred == Matrix(4, 8));
    }
    SUBCASE("identity nets pass inputs through") {
        pnr::MlpParams id;
        id.layers.push_back({Matrix::identity(8), std::vector<double>(8, 0.0)});
        EncoderStack ident{id, id, id, std::nullopt};
        const Matrix x = testing::random_matrix(rng, 5, 8);
        CHECK(pnr::forward(ident, x, false).proj == x);
    }
    SUBCASE("matches scalar-loop oracle") {
        randomize_biases(s, rng);
        const Matrix x = testing::random_matrix(rng, 7, 8);
        const auto pass = pnr::forward(s, x, true);
        const auto h = oracle::mlp(s.encoder, oracle::to_rows(x));
        const auto z = oracle::mlp(s.projector, h);
        const auto g = oracle::mlp(s.predictor, z);
        for (std::size_t i = 0; i < 7; ++i) {
            for (std::size_t k = 0; k < 8; ++k) {
                CHECK(std::abs(pass.features(i, k) - h[i][k]) <= 1e-12);
                CHECK(std::abs(pass.proj(i, k) - z[i][k]) <= 1e-12);
                CHECK(std::abs((*pass.pred)(i, k) - g[i][k]) <= 1e-12);
            }
        }
        CHECK(pnr::forward(s, x, true).proj == pass.proj);
        CHECK_FALSE(pnr::forward(s, x, false).pred.has_value());
    }
}

TEST_CASE("backward") {
    pnr::Rng rng(6);
    EncoderStack s = pnr::init_stack(rng, deep_dims());
    randomize_biases(s, rng);
    const Matrix x = testing::random_matrix(rng, 8, 6);

    SUBCASE("zero upstream gives zero gradients") {
        const pnr::OutputGradients up{Matrix(8, 5), Matrix(8, 5), Matrix(8, 5)};
        const EncoderStack g = pnr::backward(s, x, up);
        for (auto span : pnr::parameter_spans(g))
            for (double v : span) CHECK(v == 0.0);
    }

    SUBCASE("single linear layer") {
        const Matrix w = Matrix::from_rows({{1, 2}, {3, 4}});
        pnr::MlpParams lin;
        lin.layers.push_back({w, {0.5, -0.5}});
        pnr::MlpParams id;
        id.layers.push_back({Matrix::identity(2), {0.0, 0.0}});
        const EncoderStack one{lin, id, id, std::nullopt};
        const Matrix xs = Matrix::from_rows({{1, -1}, {2, 3}});
        const Matrix G = Matrix::from_rows({{0.25, -1}, {2, 0.5}});
        const EncoderStack g = pnr::backward(one, xs, {G, std::nullopt, std::nullopt});
        for (std::size_t o = 0; o < 2; ++o) {
            for (std::size_t i = 0; i < 2; ++i)
                CHECK(g.encoder.layers[0].weight(o, i) == G(0, o) * xs(0, i) + G(1, o) * xs(1, i));
            CHECK(g.encoder.layers[0].bias[o] == G(0, o) + G(1, o));
        }
    }

    SUBCASE("all parameters match finite differences") {
        const Matrix wp = testing::random_matrix(rng, 8, 5);
        const Matrix wg = testing::random_matrix(rng, 8, 5);
        const Matrix wq = testing::random_matrix(rng, 8, 5);
        auto loss = [&](const EncoderStack& st) {
            const auto pass = pnr::forward(st, x, true, true);
            return weighted_sum(pass.proj, wp) + weighted_sum(*pass.pred, wg) +
                   weighted_sum(*pass.ssl_pred, wq);
        };
        const EncoderStack g = pnr::backward(s, x, {wp, wg, wq});
        auto params = pnr::parameter_spans(s);
        auto grads = pnr::parameter_spans(g);
        double num2 = 0.0, diff2 = 0.0, an2 = 0.0;
        const double eps = 1e-5;
        for (std::size_t p = 0; p < params.size(); ++p) {
            for (std::size_t k = 0; k < params[p].size(); ++k) {
                const double keep = params[p][k];
                params[p][k] = keep + eps;
                const double up = loss(s);
                params[p][k] = keep - eps;
                const double down = loss(s);
                params[p][k] = keep;
                const double fd = (up - down) / (2 * eps);
                num2 += fd * fd;
                an2 += grads[p][k] * grads[p][k];
                diff2 += (fd - grads[p][k]) * (fd - grads[p][k]);
            }
        }
        CHECK(std::sqrt(diff2) / std::max(std::sqrt(num2), std::sqrt(an2)) < 1e-6);
    }
}

TEST_CASE("sgd_step") {
    SUBCASE("plain step") {
        EncoderStack p = scalar_stack(0.0);
        const EncoderStack g = scalar_stack(1.0);
        auto opt = pnr::make_optimizer(p, 0.1, 0.0, 0.0);
        pnr::sgd_step(p, g, opt);
        for (auto span : pnr::parameter_spans(p)) CHECK(span[0] == -0.1);
    }
    SUBCASE("zero gradient leaves parameters") {
        pnr::Rng rng(8);
        EncoderStack p = pnr::init_stack(rng, small_dims());
        const EncoderStack before = p;
        auto opt = pnr::make_optimizer(p, 0.1, 0.9, 0.0);
        for (int i = 0; i < 5; ++i) pnr::sgd_step(p, pnr::zeros_like(p), opt);
        CHECK(p == before);
    }
    SUBCASE("momentum and decay recurrence") {
        EncoderStack p = scalar_stack(0.7);
        auto opt = pnr::make_optimizer(p, 0.05, 0.9, 0.01);
        double param = 0.7, vel = 0.0;
        for (double grad : {0.3, -1.2, 0.8}) {
            pnr::sgd_step(p, scalar_stack(grad), opt);
            vel = 0.9 * vel + grad + 0.01 * param;
            param = param - 0.05 * vel;
            for (auto span : pnr::parameter_spans(p)) CHECK(span[0] == param);
        }
    }
}

TEST_CASE("ema_update") {
    pnr::Rng rng(9);
    const EncoderStack online = pnr::init_stack(rng, small_dims());
    EncoderStack other = pnr::init_stack(rng, small_dims());

    SUBCASE("m = 0 copies") {
        pnr::TargetNetwork t = pnr::make_target(other, 0.0);
        pnr::ema_update(t, online);
        CHECK(t.encoder == online.encoder);
        CHECK(t.projector == online.projector);
    }
    SUBCASE("m = 1 freezes") {
        pnr::TargetNetwork t = pnr::make_target(other, 1.0);
        const pnr::TargetNetwork before = t;
        pnr::ema_update(t, online);
        CHECK(t == before);
    }
    SUBCASE("scalar recurrence and contraction") {
        pnr::TargetNetwork t = pnr::make_target(scalar_stack(0.0), 0.99);
        const EncoderStack on = scalar_stack(1.0);
        double x = 0.0;
        for (int k = 0; k < 100; ++k) {
            const double gap_before = std::abs(1.0 - t.encoder.layers[0].weight(0, 0));
            pnr::ema_update(t, on);
            x = 0.99 * x + (1.0 - 0.99) * 1.0;
            CHECK(t.encoder.layers[0].weight(0, 0) == x);
            CHECK(std::abs(1.0 - t.encoder.layers[0].weight(0, 0)) < gap_before);
        }
        CHECK(std::abs((1.0 - x) - std::pow(0.99, 100)) < 1e-12);
    }
}

TEST_CASE("snapshot_frozen isolation") {
    pnr::Rng rng(10);
    EncoderStack live = pnr::init_stack(rng, small_dims());
    const Matrix x = testing::random_matrix(rng, 6, 8);
    const Matrix proj_before = pnr::forward(live, x, false).proj;
    const pnr::FrozenStack snap = pnr::snapshot_frozen(live);
    const std::uint64_t hash = pnr::fingerprint(snap.stack());

    auto opt = pnr::make_optimizer(live, 0.1, 0.9, 1e-4);
    for (int i = 0; i < 10; ++i) {
        const EncoderStack g = pnr::backward(live, x, {testing::random_matrix(rng, 6, 8), std::nullopt, std::nullopt});
        pnr::sgd_step(live, g, opt);
    }
    CHECK(pnr::fingerprint(snap.stack()) == hash);
    CHECK(pnr::fingerprint(live) != hash);
    CHECK(pnr::snapshot_frozen(snap).stack() == snap.stack());
    CHECK(pnr::forward(snap.stack(), x, false).proj == proj_before);
}

TEST_CASE("parameter bookkeeping") {
    pnr::Rng rng(11);
    const EncoderStack s = pnr::init_stack(rng, deep_dims());
    std::size_t expected = 0;
    for (const auto& dims : {deep_dims().encoder, deep_dims().projector, deep_dims().predictor,
                             deep_dims().ssl_predictor})
        for (std::size_t k = 0; k + 1 < dims.size(); ++k) expected += dims[k] * dims[k + 1] + dims[k + 1];
    CHECK(pnr::parameter_count(s) == expected);
    CHECK(pnr::parameter_bytes(s).size() == 8 * expected);
}
