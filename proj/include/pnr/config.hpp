#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pnr/continual.hpp"
#include "pnr/eval.hpp"
#include "pnr/losses.hpp"

namespace pnr {

struct DataConfig {
    std::uint32_t classes = 10;
    std::size_t input_dim = 32;
    std::size_t samples_per_class = 200;
    double radius = 1.0;
    double sigma = 0.3;
    double domain_shift = 0.5;  // Domain-IL shift std
};

// One experiment: a dataset recipe, a task split and a training/probing setup,
// repeated for every seed (and every regime when run through `pnr run`).
struct ExperimentConfig {
    Scenario scenario = Scenario::ClassIL;
    std::size_t tasks = 5;
    DataConfig data;
    TrainConfig train;
    ProbeConfig probe;
    std::vector<Regime> regimes{Regime::FT, Regime::CaSSLe, Regime::PNR};
    std::vector<std::uint64_t> seeds{1, 2, 3};

    ExperimentConfig();
};

// Throws InvalidConfig naming the offending key.
void validate(const ExperimentConfig& cfg);

// YAML text -> config. Missing keys keep their defaults; unknown keys, wrong types
// and out-of-range values throw InvalidConfig with the dotted key path.
ExperimentConfig parse_config(std::string_view text);
// IoError if the file cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical YAML rendering; parse_config(dump_config(c)) reproduces c.
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace pnr
