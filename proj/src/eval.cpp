#include "pnr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace pnr {

void validate(const ProbeConfig& cfg) {
    if (cfg.epochs == 0) throw Error(ErrorCode::InvalidConfig, "probe.epochs must be >= 1");
    if (!(cfg.lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "probe.lr must be > 0");
    if (!(cfg.l2_penalty >= 0.0)) throw Error(ErrorCode::InvalidConfig, "probe.l2_penalty must be >= 0");
    if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
        throw Error(ErrorCode::InvalidConfig, "probe.train_fraction must be in (0, 1)");
}

ProbeSplit make_split(std::size_t m, double train_fraction, Rng& rng) {
    if (m < 2) throw Error(ErrorCode::TooFewSamples, "probe split needs at least 2 samples");
    auto order = shuffled_indices(rng, m);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(m)));
    n_train = std::clamp<std::size_t>(n_train, 1, m - 1);
    ProbeSplit split;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.holdout.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return split;
}

double linear_probe(const Matrix& features, const std::vector<std::uint32_t>& labels,
                    const ProbeConfig& cfg, Rng& rng) {
    validate(cfg);
    return linear_probe(features, labels, make_split(features.rows(), cfg.train_fraction, rng), cfg);
}

double linear_probe(const Matrix& features, const std::vector<std::uint32_t>& labels,
                    const ProbeSplit& split, const ProbeConfig& cfg) {
    validate(cfg);
    if (labels.size() != features.rows())
        throw Error(ErrorCode::ShapeMismatch, "label count differs from feature rows");
    if (split.train.empty() || split.holdout.empty())
        throw Error(ErrorCode::TooFewSamples, "probe split has an empty side");

    std::map<std::uint32_t, std::size_t> class_index;
    for (auto l : labels) class_index.emplace(l, 0);
    if (class_index.size() < 2) throw Error(ErrorCode::SingleClass, "probe needs >= 2 classes");
    std::size_t next = 0;
    for (auto& [label, idx] : class_index) idx = next++;
    const std::size_t k = class_index.size();
    const std::size_t f = features.cols();

    // Standardize with training statistics; constant columns become zero.
    Matrix xtr = gather_rows(features, split.train);
    Matrix xho = gather_rows(features, split.holdout);
    const std::size_t n = xtr.rows();
    std::size_t informative = 0;
    for (std::size_t c = 0; c < f; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += xtr(i, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (xtr(i, c) - mean) * (xtr(i, c) - mean);
        const double std = std::sqrt(var / static_cast<double>(n));
        const bool live = std > 1e-12;
        informative += live ? 1 : 0;
        for (std::size_t i = 0; i < n; ++i) xtr(i, c) = live ? (xtr(i, c) - mean) / std : 0.0;
        for (std::size_t i = 0; i < xho.rows(); ++i)
            xho(i, c) = live ? (xho(i, c) - mean) / std : 0.0;
    }
    if (informative == 0)
        throw Error(ErrorCode::DegenerateFeatures, "no feature varies across the training split");

    std::vector<std::size_t> ytr(n);
    for (std::size_t i = 0; i < n; ++i) ytr[i] = class_index.at(labels[split.train[i]]);

    Matrix w(k, f);
    std::vector<double> b(k, 0.0);
    Matrix grad_w(k, f);
    std::vector<double> grad_b(k);
    std::vector<double> p(k);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad_w.data().begin(), grad_w.data().end(), 0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto xi = xtr.row(i);
            double mx = -INFINITY;
            for (std::size_t c = 0; c < k; ++c) {
                p[c] = b[c] + dot(xi, w.row(c));
                mx = std::max(mx, p[c]);
            }
            double z = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                p[c] = std::exp(p[c] - mx);
                z += p[c];
            }
            for (std::size_t c = 0; c < k; ++c) {
                const double g = (p[c] / z - (c == ytr[i] ? 1.0 : 0.0)) * inv_n;
                grad_b[c] += g;
                auto gw = grad_w.row(c);
                for (std::size_t q = 0; q < f; ++q) gw[q] += g * xi[q];
            }
        }
        for (std::size_t i = 0; i < w.size(); ++i)
            w.data()[i] -= cfg.lr * (grad_w.data()[i] + cfg.l2_penalty * w.data()[i]);
        for (std::size_t c = 0; c < k; ++c) b[c] -= cfg.lr * grad_b[c];
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < xho.rows(); ++i) {
        const auto xi = xho.row(i);
        std::size_t best = 0;
        double best_score = -INFINITY;
        for (std::size_t c = 0; c < k; ++c) {
            const double s = b[c] + dot(xi, w.row(c));
            if (s > best_score) {
                best_score = s;
                best = c;
            }
        }
        if (best == class_index.at(labels[split.holdout[i]])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(xho.rows());
}

double knn_accuracy(const Matrix& features, const std::vector<std::uint32_t>& labels,
                    const ProbeSplit& split, std::size_t k) {
    if (labels.size() != features.rows())
        throw Error(ErrorCode::ShapeMismatch, "label count differs from feature rows");
    if (k == 0 || split.train.empty() || split.holdout.empty())
        throw Error(ErrorCode::InvalidArgument, "knn needs k >= 1 and a non-empty split");
    const Matrix train = row_l2_normalize(gather_rows(features, split.train));
    const Matrix test = row_l2_normalize(gather_rows(features, split.holdout));
    const Matrix sim = pairwise_dot(test, train);
    const std::size_t kk = std::min(k, train.rows());
    std::size_t correct = 0;
    std::vector<std::size_t> order(train.rows());
    for (std::size_t i = 0; i < test.rows(); ++i) {
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk),
                          order.end(), [&](std::size_t a, std::size_t b) {
                              if (sim(i, a) != sim(i, b)) return sim(i, a) > sim(i, b);
                              return a < b;
                          });
        std::map<std::uint32_t, std::size_t> votes;
        for (std::size_t j = 0; j < kk; ++j) ++votes[labels[split.train[order[j]]]];
        std::uint32_t best = votes.begin()->first;
        std::size_t best_votes = 0;
        for (const auto& [label, count] : votes) {
            if (count > best_votes) {
                best_votes = count;
                best = label;
            }
        }
        if (best == labels[split.holdout[i]]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.rows());
}

AccuracyMatrix fill_accuracy_matrix(const std::vector<EncoderStack>& checkpoints,
                                    const std::vector<EncoderStack>& ft_references,
                                    const TaskStream& stream, const ProbeConfig& cfg,
                                    std::uint64_t seed) {
    validate(cfg);
    const std::size_t t = stream.num_tasks();
    if (checkpoints.size() != t)
        throw Error(ErrorCode::InvalidArgument, "need one checkpoint per task");
    if (!ft_references.empty() && ft_references.size() != t)
        throw Error(ErrorCode::InvalidArgument, "need one FT reference per task");
    AccuracyMatrix am(t);
    if (ft_references.empty()) am.ft.clear();
    for (std::size_t i = 0; i < t; ++i) {
        const auto& task = stream.tasks[i];
        Rng rng(derive_seed(seed, "probe/" + std::to_string(i + 1)));
        const ProbeSplit split = make_split(task.size(), cfg.train_fraction, rng);
        for (std::size_t j = 0; j < t; ++j)
            am.at(i, j) = linear_probe(encode(checkpoints[j], task.x), task.y, split, cfg);
        if (!ft_references.empty())
            am.ft[i] = linear_probe(encode(ft_references[i], task.x), task.y, split, cfg);
    }
    return am;
}

double avg_accuracy(const AccuracyMatrix& am, std::size_t t) {
    if (t < 1 || t > am.num_tasks)
        throw Error(ErrorCode::IndexOutOfRange, "t = " + std::to_string(t) + " outside 1.." +
                                                    std::to_string(am.num_tasks));
    double sum = 0.0;
    for (std::size_t i = 0; i < t; ++i) sum += am.at(i, t - 1);
    return sum / static_cast<double>(t);
}

double stability(const AccuracyMatrix& am) {
    const std::size_t t = am.num_tasks;
    if (t < 2) throw Error(ErrorCode::SingleTask, "stability needs T >= 2");
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < t; ++i) {
        const double last = am.at(i, t - 1);
        double peak = am.at(i, 0) - last;
        for (std::size_t j = 1; j < t; ++j) peak = std::max(peak, am.at(i, j) - last);
        sum += peak;
    }
    return (1.0 / static_cast<double>(t - 1)) * sum;
}

double plasticity(const AccuracyMatrix& am) {
    const std::size_t t = am.num_tasks;
    if (t < 2) throw Error(ErrorCode::SingleTask, "plasticity needs T >= 2");
    if (am.ft.size() != t) throw Error(ErrorCode::MissingFt, "FT reference accuracies missing");
    double sum = 0.0;
    for (std::size_t j = 0; j + 1 < t; ++j) {
        double inner = 0.0;
        for (std::size_t i = j + 1; i < t; ++i) inner += am.at(i, j) - am.ft[i];
        // 1-based column j+1: weight 1/(T - (j+1)).
        sum += (1.0 / static_cast<double>(t - (j + 1))) * inner;
    }
    return (1.0 / static_cast<double>(t - 1)) * sum;
}

}  // namespace pnr
