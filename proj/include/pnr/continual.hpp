#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "pnr/losses.hpp"
#include "pnr/model.hpp"
#include "pnr/numerics.hpp"

namespace pnr {

// Inputs plus labels; labels are only ever read by evaluation.
struct LabeledDataset {
    Matrix x;
    std::vector<std::uint32_t> y;
    std::uint32_t num_classes = 0;
    std::optional<std::uint32_t> domain_id;
    // Row indices into the dataset this one was carved from (empty for a base dataset).
    std::vector<std::size_t> source_index;

    std::size_t size() const noexcept { return x.rows(); }
};

// Throws InvalidArgument if labels and rows disagree or a label is >= num_classes.
void validate(const LabeledDataset& ds);
// Sorted distinct labels present in ds.
std::vector<std::uint32_t> label_set(const LabeledDataset& ds);

enum class Scenario { ClassIL, DataIL, DomainIL };

std::string_view to_string(Scenario s) noexcept;
Scenario parse_scenario(std::string_view name);

// Rotation and shift applied to the inputs of one Domain-IL task: x -> R x + b.
struct DomainTransform {
    Matrix rotation;
    std::vector<double> shift;
};

struct TaskStream {
    Scenario scenario = Scenario::ClassIL;
    std::vector<LabeledDataset> tasks;
    std::vector<DomainTransform> transforms;  // Domain-IL only

    std::size_t num_tasks() const noexcept { return tasks.size(); }
};

// Classes split into T contiguous groups {0..C/T-1}, ... Throws IndivisibleClasses.
TaskStream build_class_il(const LabeledDataset& ds, std::size_t num_tasks);

// Seeded shuffle of all samples, cut into T near-equal disjoint chunks.
// Throws TooFewSamples if M < T.
TaskStream build_data_il(const LabeledDataset& ds, std::size_t num_tasks, std::uint64_t seed);

// Each task receives a disjoint class-stratified share of the samples, mapped through
// its own orthogonal rotation R_k and shift b_k (R_1 = I, b_1 = 0). Throws BadDims if
// the input dimension is < 2 and TooFewSamples if a class has fewer than T samples.
TaskStream build_domain_il(const LabeledDataset& ds, std::size_t num_tasks, std::uint64_t seed,
                           double shift_std = 0.5);

struct AugmentConfig {
    double noise_std = 0.1;
    double dropout_p = 0.1;
    double scale_lo = 0.8;
    double scale_hi = 1.2;
};

void validate(const AugmentConfig& cfg);

// Two independent views, each (per-coordinate scale) * x + N(0, noise_std^2), then
// every coordinate zeroed with probability dropout_p. View A is drawn first; within a
// view entries are visited row-major, each drawing scale, noise, dropout in that order.
std::pair<Matrix, Matrix> two_views(const Matrix& x, const AugmentConfig& cfg, Rng& rng);

struct TrainConfig {
    std::size_t epochs_per_task = 100;
    std::size_t batch_size = 64;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double ema_momentum = 0.99;
    std::uint64_t seed = 1;
    std::size_t queue_capacity = 1024;
    PnrConfig loss;
    AugmentConfig augment;
    StackDims dims;
};

void validate(const TrainConfig& cfg);

// The live network plus the BYOL target that travels with it across tasks.
struct Learner {
    EncoderStack stack;
    std::optional<TargetNetwork> target;
};

Learner make_learner(const TrainConfig& cfg);

// Everything one optimization step reads besides the parameters being trained.
struct ObjectiveInputs {
    const Matrix* xA = nullptr;
    const Matrix* xB = nullptr;
    const EncoderStack* prev = nullptr;       // frozen t-1 model; null on the first task
    const TargetNetwork* target = nullptr;    // BYOL only
    const Matrix* cur_queue = nullptr;        // MoCo only
    const Matrix* prev_queue = nullptr;       // MoCo only
};

struct ObjectiveResult {
    double loss = 0.0;
    StackGradients grads;
    Matrix keys_cur;   // normalized zB_t, detached; queue material
    Matrix keys_prev;  // normalized zB_prev, detached (empty without a previous model)
};

// Loss and exact parameter gradients of the configured objective for one batch.
// Without a previous model the regime falls back to FT.
ObjectiveResult training_objective(const EncoderStack& stack, const ObjectiveInputs& in,
                                   const PnrConfig& cfg);

struct TrainLog {
    std::vector<double> epoch_loss;  // mean batch loss per epoch
    std::size_t steps = 0;
};

// Trains `learner` on one task. prev is the frozen t-1 model (null on the first task).
// Throws DivergenceDetected on a non-finite loss.
TrainLog train_task(Learner& learner, const FrozenStack* prev, const LabeledDataset& task,
                    const TrainConfig& cfg, std::uint64_t seed);

struct SequenceResult {
    std::vector<EncoderStack> checkpoints;    // after task 1..T
    std::vector<EncoderStack> ft_references;  // single-task models, one per task
    std::vector<TrainLog> logs;
    std::vector<TrainLog> ft_logs;
};

// Sequential training over the stream plus T independent single-task FT references.
// Seeds: init <- derive_seed(seed, "init"), task t <- "train/t", reference i <- "ft/i".
SequenceResult run_sequence(const TaskStream& stream, const TrainConfig& cfg);

}  // namespace pnr
