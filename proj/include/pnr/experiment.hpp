#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pnr/config.hpp"
#include "pnr/continual.hpp"
#include "pnr/eval.hpp"

namespace pnr {

// Component seeds derived from one root seed.
struct RunSeeds {
    std::uint64_t data;    // derive_seed(root, "data")
    std::uint64_t stream;  // derive_seed(root, "stream")
    std::uint64_t train;   // derive_seed(root, "train"), then "init", "train/t", "ft/i"
    std::uint64_t probe;   // derive_seed(root, "probe"), then "probe/i"

    static RunSeeds from_root(std::uint64_t root) noexcept;
};

LabeledDataset make_dataset(const ExperimentConfig& cfg, std::uint64_t root);
TaskStream make_stream(Scenario scenario, std::size_t tasks, double domain_shift,
                       const LabeledDataset& ds, std::uint64_t root);

// What `probe` needs to know about a training run.
struct RunManifest {
    Scenario scenario = Scenario::ClassIL;
    std::size_t tasks = 0;
    std::uint64_t seed = 0;
    Method method = Method::SimCLR;
    Regime regime = Regime::PNR;
    double domain_shift = 0.5;
    ProbeConfig probe;
    std::uint64_t data_checksum = 0;  // fnv1a64 of the encoded dataset file
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

std::string checkpoint_name(std::size_t task);     // checkpoint_01.ckpt
std::string ft_reference_name(std::size_t task);   // ft_01.ckpt

// Trains the sequence described by cfg (method/regime from cfg.train.loss) and
// writes checkpoints, FT references, train_log.json and manifest.json into dir.
SequenceResult train_to_directory(const ExperimentConfig& cfg, const LabeledDataset& ds,
                                  std::uint64_t root, const std::filesystem::path& dir);

struct RunMetrics {
    RunManifest info;
    AccuracyMatrix accuracy;
    std::vector<double> avg_accuracy;  // A_1..A_T
    std::optional<double> stability;   // absent when T = 1
    std::optional<double> plasticity;
};

RunMetrics compute_metrics(const RunManifest& info, const AccuracyMatrix& am);

// Loads manifest and checkpoints from dir, checks that ds is the training dataset
// (InvalidArgument otherwise) and fills the accuracy matrix.
RunMetrics probe_directory(const std::filesystem::path& dir, const LabeledDataset& ds);

// Metrics JSON as documented in docs/FORMATS.md.
nlohmann::json to_json(const RunMetrics& m);
// Rows: one per task (a_{i,1..T}, FT_i), then a final A_t row.
std::string accuracy_csv(const RunMetrics& m);

// Groups metrics documents by (scenario, method, regime, tasks) and reports the
// mean and sample standard deviation of A_T, S and P over seeds.
std::string aggregate_report(const std::vector<nlohmann::json>& metrics);

std::string render_json(const nlohmann::json& j);

// gen-data + train + probe for every seed and regime of cfg under out_dir, plus
// out_dir/report.csv. Progress lines go to log when given.
std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg,
                                       const std::filesystem::path& out_dir, std::ostream* log);

}  // namespace pnr
