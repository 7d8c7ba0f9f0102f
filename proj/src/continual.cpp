#include "pnr/continual.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <string>

#include "pnr/queue.hpp"

namespace pnr {

void validate(const LabeledDataset& ds) {
    if (ds.y.size() != ds.x.rows())
        throw Error(ErrorCode::InvalidArgument, "label count differs from sample count");
    for (auto label : ds.y) {
        if (label >= ds.num_classes)
            throw Error(ErrorCode::InvalidArgument, "label " + std::to_string(label) +
                                                        " outside [0, " +
                                                        std::to_string(ds.num_classes) + ")");
    }
}

std::vector<std::uint32_t> label_set(const LabeledDataset& ds) {
    std::set<std::uint32_t> s(ds.y.begin(), ds.y.end());
    return {s.begin(), s.end()};
}

std::string_view to_string(Scenario s) noexcept {
    switch (s) {
        case Scenario::ClassIL: return "class_il";
        case Scenario::DataIL: return "data_il";
        case Scenario::DomainIL: return "domain_il";
    }
    return "unknown";
}

Scenario parse_scenario(std::string_view name) {
    std::string n(name);
    for (char& c : n) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::replace(n.begin(), n.end(), '-', '_');
    for (Scenario s : {Scenario::ClassIL, Scenario::DataIL, Scenario::DomainIL})
        if (n == to_string(s)) return s;
    throw Error(ErrorCode::InvalidConfig, "unknown scenario '" + std::string(name) + "'");
}

namespace {

LabeledDataset subset(const LabeledDataset& ds, std::vector<std::size_t> idx) {
    LabeledDataset out;
    out.x = gather_rows(ds.x, idx);
    out.y.reserve(idx.size());
    for (auto i : idx) out.y.push_back(ds.y[i]);
    out.num_classes = ds.num_classes;
    out.domain_id = ds.domain_id;
    out.source_index = std::move(idx);
    return out;
}

void require_tasks(std::size_t num_tasks) {
    if (num_tasks == 0) throw Error(ErrorCode::InvalidArgument, "number of tasks must be >= 1");
}

}  // namespace

TaskStream build_class_il(const LabeledDataset& ds, std::size_t num_tasks) {
    validate(ds);
    require_tasks(num_tasks);
    if (ds.num_classes % num_tasks != 0) {
        throw Error(ErrorCode::IndivisibleClasses, std::to_string(ds.num_classes) +
                                                       " classes cannot be split into " +
                                                       std::to_string(num_tasks) + " tasks");
    }
    const std::size_t per_task = ds.num_classes / num_tasks;
    std::vector<std::vector<std::size_t>> buckets(num_tasks);
    for (std::size_t i = 0; i < ds.size(); ++i) buckets[ds.y[i] / per_task].push_back(i);
    TaskStream stream;
    stream.scenario = Scenario::ClassIL;
    for (auto& b : buckets) stream.tasks.push_back(subset(ds, std::move(b)));
    return stream;
}

TaskStream build_data_il(const LabeledDataset& ds, std::size_t num_tasks, std::uint64_t seed) {
    validate(ds);
    require_tasks(num_tasks);
    const std::size_t m = ds.size();
    if (m < num_tasks) {
        throw Error(ErrorCode::TooFewSamples, std::to_string(m) + " samples for " +
                                                  std::to_string(num_tasks) + " tasks");
    }
    Rng rng(seed);
    const auto order = shuffled_indices(rng, m);
    TaskStream stream;
    stream.scenario = Scenario::DataIL;
    // Chunk k covers [k*m/T, (k+1)*m/T): sizes differ by at most one.
    for (std::size_t k = 0; k < num_tasks; ++k) {
        const std::size_t lo = k * m / num_tasks;
        const std::size_t hi = (k + 1) * m / num_tasks;
        stream.tasks.push_back(subset(ds, {order.begin() + static_cast<std::ptrdiff_t>(lo),
                                           order.begin() + static_cast<std::ptrdiff_t>(hi)}));
    }
    return stream;
}

TaskStream build_domain_il(const LabeledDataset& ds, std::size_t num_tasks, std::uint64_t seed,
                           double shift_std) {
    validate(ds);
    require_tasks(num_tasks);
    const std::size_t dim = ds.x.cols();
    if (dim < 2) throw Error(ErrorCode::BadDims, "Domain-IL needs input dimension >= 2");
    Rng rng(seed);

    std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.y[i]].push_back(i);
    std::vector<std::vector<std::size_t>> buckets(num_tasks);
    for (auto& members : by_class) {
        if (members.empty()) continue;
        if (members.size() < num_tasks)
            throw Error(ErrorCode::TooFewSamples, "a class has fewer samples than tasks");
        rng.shuffle(members);
        for (std::size_t j = 0; j < members.size(); ++j)
            buckets[j % num_tasks].push_back(members[j]);
    }

    TaskStream stream;
    stream.scenario = Scenario::DomainIL;
    for (std::size_t k = 0; k < num_tasks; ++k) {
        std::sort(buckets[k].begin(), buckets[k].end());
        LabeledDataset task = subset(ds, std::move(buckets[k]));
        DomainTransform tf;
        if (k == 0) {
            tf.rotation = Matrix::identity(dim);
            tf.shift.assign(dim, 0.0);
        } else {
            tf.rotation = random_orthogonal(rng, dim);
            tf.shift = rng_gaussian(rng, dim, 0.0, shift_std);
        }
        // x R^T applies R to each row vector.
        Matrix moved = k == 0 ? task.x : matmul(task.x, transpose(tf.rotation));
        for (std::size_t r = 0; r < moved.rows(); ++r)
            for (std::size_t c = 0; c < dim; ++c) moved(r, c) += tf.shift[c];
        task.x = std::move(moved);
        task.domain_id = static_cast<std::uint32_t>(k);
        stream.tasks.push_back(std::move(task));
        stream.transforms.push_back(std::move(tf));
    }
    return stream;
}

void validate(const AugmentConfig& cfg) {
    if (!(cfg.noise_std >= 0.0)) throw Error(ErrorCode::InvalidConfig, "augment.noise_std must be >= 0");
    if (!(cfg.dropout_p >= 0.0 && cfg.dropout_p < 1.0))
        throw Error(ErrorCode::InvalidConfig, "augment.dropout_p must be in [0, 1)");
    if (!(cfg.scale_lo > 0.0 && cfg.scale_lo <= cfg.scale_hi))
        throw Error(ErrorCode::InvalidConfig, "augment scale range must satisfy 0 < lo <= hi");
}

std::pair<Matrix, Matrix> two_views(const Matrix& x, const AugmentConfig& cfg, Rng& rng) {
    const auto view = [&]() {
        Matrix out(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double scale = cfg.scale_lo == cfg.scale_hi
                                     ? cfg.scale_lo
                                     : rng.uniform(cfg.scale_lo, cfg.scale_hi);
            double v = scale * x.data()[i];
            if (cfg.noise_std > 0.0) v += cfg.noise_std * rng.gaussian();
            if (cfg.dropout_p > 0.0 && rng.uniform() < cfg.dropout_p) v = 0.0;
            out.data()[i] = v;
        }
        return out;
    };
    Matrix a = view();
    Matrix b = view();
    return {std::move(a), std::move(b)};
}

void validate(const TrainConfig& cfg) {
    if (cfg.epochs_per_task == 0) throw Error(ErrorCode::InvalidConfig, "train.epochs_per_task must be >= 1");
    if (cfg.batch_size < 2) throw Error(ErrorCode::InvalidConfig, "train.batch_size must be >= 2");
    if (!(cfg.lr >= 0.0)) throw Error(ErrorCode::InvalidConfig, "train.lr must be >= 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
        throw Error(ErrorCode::InvalidConfig, "train.momentum must be in [0, 1)");
    if (!(cfg.weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "train.weight_decay must be >= 0");
    if (!(cfg.ema_momentum >= 0.0 && cfg.ema_momentum < 1.0))
        throw Error(ErrorCode::InvalidConfig, "train.ema_momentum must be in [0, 1)");
    if (cfg.queue_capacity == 0) throw Error(ErrorCode::InvalidConfig, "loss.queue_capacity must be >= 1");
    if (cfg.loss.method == Method::BYOL && cfg.dims.ssl_predictor.empty())
        throw Error(ErrorCode::InvalidConfig, "BYOL needs model.ssl_predictor dims");
    validate(cfg.loss);
    validate(cfg.augment);
}

Learner make_learner(const TrainConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, "init"));
    Learner learner{init_stack(rng, cfg.dims), std::nullopt};
    if (cfg.loss.method == Method::BYOL) learner.target = make_target(learner.stack, cfg.ema_momentum);
    return learner;
}

namespace {

Matrix unit(const Matrix& m) { return row_l2_normalize(m); }

// Gradient w.r.t. a raw output whose normalized version received `grad`.
// Empty grads (term not used) map to an empty optional.
std::optional<Matrix> through_norm(const Matrix& raw, const Matrix& grad) {
    if (grad.empty()) return std::nullopt;
    return row_l2_normalize_backward(raw, grad);
}

std::optional<Matrix> maybe(const Matrix& grad) {
    if (grad.empty()) return std::nullopt;
    return grad;
}

Matrix or_zeros(std::optional<Matrix> m, std::size_t rows, std::size_t cols) {
    return m ? std::move(*m) : Matrix(rows, cols);
}

}  // namespace

ObjectiveResult training_objective(const EncoderStack& stack, const ObjectiveInputs& in,
                                   const PnrConfig& base_cfg) {
    if (!in.xA || !in.xB) throw Error(ErrorCode::InvalidArgument, "objective needs both views");
    PnrConfig cfg = base_cfg;
    if (!in.prev) cfg.regime = Regime::FT;
    const bool distill = cfg.regime != Regime::FT;
    const bool byol = cfg.method == Method::BYOL;
    if (byol && !in.target) throw Error(ErrorCode::InvalidArgument, "BYOL needs a target network");

    const ForwardPass fa = forward(stack, *in.xA, distill, byol);
    const ForwardPass fb = forward(stack, *in.xB, distill, byol);
    Matrix prev_a, prev_b;
    if (distill) {
        prev_a = mlp_apply(in.prev->projector, mlp_apply(in.prev->encoder, *in.xA));
        prev_b = mlp_apply(in.prev->projector, mlp_apply(in.prev->encoder, *in.xB));
    }

    ObjectiveResult out;
    out.grads = zeros_like(stack);
    OutputGradients up_a, up_b;
    const std::size_t n = fa.proj.rows();
    const std::size_t d = fa.proj.cols();

    if (is_contrastive(cfg.method)) {
        ContrastiveViews v;
        v.zA_t = unit(fa.proj);
        v.zB_t = unit(fb.proj);
        if (distill) {
            v.zA_prev = unit(prev_a);
            v.zB_prev = unit(prev_b);
            v.gA_t = unit(*fa.pred);
            v.gB_t = unit(*fb.pred);
        }
        if (cfg.method == Method::MoCo) {
            if (in.cur_queue) v.extra_neg_cur = *in.cur_queue;
            if (in.prev_queue && distill) v.extra_neg_prev = *in.prev_queue;
        }
        const LossResult r = cssl_total(v, cfg);
        out.loss = r.value;
        up_a.proj = row_l2_normalize_backward(fa.proj, r.grad_zA_t);
        up_b.proj = row_l2_normalize_backward(fb.proj, r.grad_zB_t);
        if (distill) {
            up_a.pred = through_norm(*fa.pred, r.grad_gA_t);
            up_b.pred = through_norm(*fb.pred, r.grad_gB_t);
        }
        out.keys_cur = std::move(v.zB_t);
        out.keys_prev = std::move(v.zB_prev);
    } else {
        NonContrastiveViews v;
        if (byol) {
            v.qA_t = unit(*fa.ssl_pred);
            v.qB_t = unit(*fb.ssl_pred);
            v.targetA = unit(target_project(*in.target, *in.xA));
            v.targetB = unit(target_project(*in.target, *in.xB));
            if (distill) {
                v.zA_prev = unit(prev_a);
                v.zB_prev = unit(prev_b);
                v.gA_t = unit(*fa.pred);
                v.gB_t = unit(*fb.pred);
            }
        } else {
            v.zA_t = fa.proj;
            v.zB_t = fb.proj;
            if (distill) {
                v.zA_prev = prev_a;
                v.zB_prev = prev_b;
                v.gA_t = *fa.pred;
                v.gB_t = *fb.pred;
            }
        }
        const LossResult r = noncontrastive_pnr_total(v, cfg);
        out.loss = r.value;
        if (byol) {
            up_a.proj = Matrix(n, d);
            up_b.proj = Matrix(n, d);
            up_a.ssl_pred = through_norm(*fa.ssl_pred, r.grad_qA_t);
            up_b.ssl_pred = through_norm(*fb.ssl_pred, r.grad_qB_t);
            if (distill) {
                up_a.pred = through_norm(*fa.pred, r.grad_gA_t);
                up_b.pred = through_norm(*fb.pred, r.grad_gB_t);
            }
        } else {
            up_a.proj = or_zeros(maybe(r.grad_zA_t), n, d);
            up_b.proj = or_zeros(maybe(r.grad_zB_t), n, d);
            if (distill) {
                up_a.pred = maybe(r.grad_gA_t);
                up_b.pred = maybe(r.grad_gB_t);
            }
        }
    }
    backward(stack, fa, up_a, out.grads);
    backward(stack, fb, up_b, out.grads);
    return out;
}

TrainLog train_task(Learner& learner, const FrozenStack* prev, const LabeledDataset& task,
                    const TrainConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    const std::size_t m = task.size();
    if (m < 2) throw Error(ErrorCode::TooFewSamples, "a task needs at least 2 samples");
    if (task.x.cols() != learner.stack.encoder.in_dim())
        throw Error(ErrorCode::ShapeMismatch, "task input width differs from encoder input");
    if (cfg.loss.method == Method::BYOL && !learner.target)
        learner.target = make_target(learner.stack, cfg.ema_momentum);

    Rng rng(seed);
    OptimizerState opt = make_optimizer(learner.stack, cfg.lr, cfg.momentum, cfg.weight_decay);
    const bool moco = cfg.loss.method == Method::MoCo;
    const std::size_t proj_dim = learner.stack.projector.out_dim();
    // Fresh queues per task.
    EmbeddingQueue cur_queue(cfg.queue_capacity, proj_dim);
    EmbeddingQueue prev_queue(cfg.queue_capacity, proj_dim);

    // Batch boundaries; a trailing batch of a single sample is folded into its predecessor.
    std::vector<std::size_t> bounds;
    for (std::size_t lo = 0; lo < m; lo += cfg.batch_size) bounds.push_back(lo);
    if (m - bounds.back() < 2 && bounds.size() > 1) bounds.pop_back();
    bounds.push_back(m);

    TrainLog log;
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
        const auto order = shuffled_indices(rng, m);
        double epoch_mean = 0.0;
        for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
            const std::span<const std::size_t> idx(order.data() + bounds[b],
                                                   bounds[b + 1] - bounds[b]);
            const Matrix x = gather_rows(task.x, idx);
            const auto [xa, xb] = two_views(x, cfg.augment, rng);

            Matrix cur_snapshot, prev_snapshot;
            ObjectiveInputs in;
            in.xA = &xa;
            in.xB = &xb;
            in.prev = prev ? &prev->stack() : nullptr;
            in.target = learner.target ? &*learner.target : nullptr;
            if (moco) {
                cur_snapshot = cur_queue.snapshot();
                prev_snapshot = prev_queue.snapshot();
                in.cur_queue = &cur_snapshot;
                in.prev_queue = &prev_snapshot;
            }
            ObjectiveResult r = training_objective(learner.stack, in, cfg.loss);
            if (!std::isfinite(r.loss)) {
                throw Error(ErrorCode::DivergenceDetected,
                            "non-finite loss at epoch " + std::to_string(epoch));
            }
            epoch_mean += (r.loss - epoch_mean) / static_cast<double>(b + 1);
            sgd_step(learner.stack, r.grads, opt);
            if (moco) {
                cur_queue.enqueue(r.keys_cur);
                if (!r.keys_prev.empty()) prev_queue.enqueue(r.keys_prev);
            }
            if (learner.target) ema_update(*learner.target, learner.stack);
            ++log.steps;
        }
        log.epoch_loss.push_back(epoch_mean);
    }
    return log;
}

SequenceResult run_sequence(const TaskStream& stream, const TrainConfig& cfg) {
    validate(cfg);
    if (stream.tasks.empty()) throw Error(ErrorCode::InvalidArgument, "empty task stream");
    SequenceResult out;
    const Learner initial = make_learner(cfg);
    Learner learner = initial;
    std::optional<FrozenStack> frozen;
    for (std::size_t t = 0; t < stream.num_tasks(); ++t) {
        const auto seed = derive_seed(cfg.seed, "train/" + std::to_string(t + 1));
        out.logs.push_back(
            train_task(learner, frozen ? &*frozen : nullptr, stream.tasks[t], cfg, seed));
        out.checkpoints.push_back(learner.stack);
        frozen = snapshot_frozen(learner.stack);
    }
    TrainConfig ft_cfg = cfg;
    ft_cfg.loss.regime = Regime::FT;
    for (std::size_t i = 0; i < stream.num_tasks(); ++i) {
        Learner ref = initial;
        const auto seed = derive_seed(cfg.seed, "ft/" + std::to_string(i + 1));
        out.ft_logs.push_back(train_task(ref, nullptr, stream.tasks[i], ft_cfg, seed));
        out.ft_references.push_back(std::move(ref.stack));
    }
    return out;
}

}  // namespace pnr
