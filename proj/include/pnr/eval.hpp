#pragma once

#include <cstdint>
#include <vector>

#include "pnr/continual.hpp"
#include "pnr/model.hpp"
#include "pnr/numerics.hpp"

namespace pnr {

struct ProbeConfig {
    std::size_t epochs = 500;  // full-batch gradient steps
    double lr = 0.5;
    double l2_penalty = 1e-4;
    double train_fraction = 0.8;
};

void validate(const ProbeConfig& cfg);

// Seeded holdout split: the first round(train_fraction * M) rows of a shuffled
// order train, the rest are held out. Both parts are non-empty.
struct ProbeSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> holdout;
};

ProbeSplit make_split(std::size_t m, double train_fraction, Rng& rng);

// Multinomial logistic regression on frozen features: features are standardized with
// training-split statistics, weights start at zero and take `epochs` full-batch
// gradient steps on mean cross-entropy + (l2_penalty / 2) |W|^2. Returns top-1
// accuracy on the holdout. Throws SingleClass if fewer than two labels are present
// and DegenerateFeatures if no feature varies across the training split.
double linear_probe(const Matrix& features, const std::vector<std::uint32_t>& labels,
                    const ProbeConfig& cfg, Rng& rng);

// Same probe on an explicit split.
double linear_probe(const Matrix& features, const std::vector<std::uint32_t>& labels,
                    const ProbeSplit& split, const ProbeConfig& cfg);

// Secondary probe: majority vote of the k nearest training rows by cosine similarity
// (ties broken toward the smaller label).
double knn_accuracy(const Matrix& features, const std::vector<std::uint32_t>& labels,
                    const ProbeSplit& split, std::size_t k = 5);

// a(i, j): probe accuracy on task i using the checkpoint after task j (0-based storage).
// ft[i]: accuracy of the single-task reference model for task i.
struct AccuracyMatrix {
    std::size_t num_tasks = 0;
    std::vector<double> a;  // row-major T x T
    std::vector<double> ft;

    explicit AccuracyMatrix(std::size_t t = 0) : num_tasks(t), a(t * t, 0.0), ft(t, 0.0) {}

    double& at(std::size_t i, std::size_t j) { return a[i * num_tasks + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * num_tasks + j]; }
};

// Probes every (task, checkpoint) pair. Probe seeds: derive_seed(seed, "probe/i"),
// shared across checkpoints so every entry of a row uses the same split.
AccuracyMatrix fill_accuracy_matrix(const std::vector<EncoderStack>& checkpoints,
                                    const std::vector<EncoderStack>& ft_references,
                                    const TaskStream& stream, const ProbeConfig& cfg,
                                    std::uint64_t seed);

// A_t = (1/t) sum_{i=1..t} a_{i,t}; t is 1-based. Throws IndexOutOfRange.
double avg_accuracy(const AccuracyMatrix& am, std::size_t t);

// S = 1/(T-1) sum_{i=1}^{T-1} max_{t in 1..T} (a_{i,t} - a_{i,T}). Throws SingleTask.
double stability(const AccuracyMatrix& am);

// P = 1/(T-1) sum_{j=1}^{T-1} 1/(T-j) sum_{i=j+1}^{T} (a_{i,j} - FT_i).
// Throws SingleTask, or MissingFt if ft is not populated.
double plasticity(const AccuracyMatrix& am);

}  // namespace pnr
