#include "pnr/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <ostream>

#include "pnr/config.hpp"
#include "pnr/datastore.hpp"
#include "pnr/error.hpp"
#include "pnr/experiment.hpp"
#include "pnr/verify/gradcheck.hpp"

namespace pnr {

namespace fs = std::filesystem;

namespace {

std::uint64_t root_seed(const ExperimentConfig& cfg, const std::optional<std::uint64_t>& seed) {
    return seed ? *seed : cfg.seeds.front();
}

int gen_data(const fs::path& config, const fs::path& out_path, std::optional<std::uint64_t> seed,
             std::ostream& out) {
    const ExperimentConfig cfg = load_config(config);
    const LabeledDataset ds = make_dataset(cfg, root_seed(cfg, seed));
    save_dataset(out_path, ds);
    out << "wrote " << ds.size() << " samples x " << ds.x.cols() << " dims to " << out_path.string()
        << "\n";
    return 0;
}

int train(const fs::path& config, const fs::path& data, const fs::path& out_dir,
          std::optional<std::uint64_t> seed, const std::string& regime, std::ostream& out) {
    ExperimentConfig cfg = load_config(config);
    if (!regime.empty()) cfg.train.loss.regime = parse_regime(regime);
    const LabeledDataset ds = load_dataset(data);
    const SequenceResult seq = train_to_directory(cfg, ds, root_seed(cfg, seed), out_dir);
    for (std::size_t t = 0; t < seq.logs.size(); ++t) {
        const auto& loss = seq.logs[t].epoch_loss;
        out << "task " << t + 1 << ": final epoch loss " << (loss.empty() ? 0.0 : loss.back())
            << "\n";
    }
    return 0;
}

int probe(const fs::path& dir, const fs::path& data, const fs::path& out_path, std::ostream& out) {
    const LabeledDataset ds = load_dataset(data);
    const RunMetrics m = probe_directory(dir, ds);
    fs::path stem = out_path;
    if (stem.extension() == ".csv" || stem.extension() == ".json") stem.replace_extension();
    fs::path csv = stem;
    csv += ".csv";
    fs::path js = stem;
    js += ".json";
    write_text_atomic(csv, accuracy_csv(m));
    write_text_atomic(js, render_json(to_json(m)));
    out << "A_" << m.avg_accuracy.size() << " = " << m.avg_accuracy.back();
    if (m.stability) out << ", S = " << *m.stability;
    if (m.plasticity) out << ", P = " << *m.plasticity;
    out << "\nwrote " << csv.string() << " and " << js.string() << "\n";
    return 0;
}

int gradcheck(const std::string& loss, std::size_t trials, std::ostream& out) {
    verify::GradCheckOptions opts;
    opts.trials = trials;
    std::vector<verify::CheckResult> results;
    if (loss.empty()) results = verify::run_gradient_suite(opts);
    else results.push_back(verify::run_gradient_check(loss, opts));
    bool ok = true;
    for (const auto& r : results) {
        char line[256];
        std::snprintf(line, sizeof line, "%-4s %-26s trials=%-4zu worst=%.3e tol=%.0e", r.passed ? "ok" : "FAIL",
                      r.name.c_str(), r.trials, r.worst, r.tolerance);
        out << line;
        if (!r.detail.empty()) out << "  " << r.detail;
        out << "\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

int report(const std::vector<std::string>& metrics, const std::string& out_path, std::ostream& out) {
    std::vector<nlohmann::json> docs;
    for (const auto& path : metrics) {
        const auto bytes = read_file(path);
        try {
            docs.push_back(nlohmann::json::parse(bytes.begin(), bytes.end()));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::IoError, path + ": " + e.what());
        }
    }
    const std::string csv = aggregate_report(docs);
    if (out_path.empty()) out << csv;
    else write_text_atomic(out_path, csv);
    return 0;
}

int run(const fs::path& config, const fs::path& out_dir, const std::vector<std::uint64_t>& seeds,
        std::ostream& out) {
    ExperimentConfig cfg = load_config(config);
    if (!seeds.empty()) cfg.seeds = seeds;
    run_experiment(cfg, out_dir, &out);
    out << "wrote " << (out_dir / "report.csv").string() << "\n";
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Continual self-supervised learning with pseudo-negative regularization"};
    app.require_subcommand(1);

    std::string config, data, out_path, out_dir, checkpoints, loss, regime;
    std::optional<std::uint64_t> seed;
    std::size_t trials = 20;
    std::vector<std::string> metrics;
    std::vector<std::uint64_t> seeds;

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset of a config");
    gen->add_option("--config", config, "Experiment config (YAML)")->required();
    gen->add_option("--out", out_path, "Dataset file to write")->required();
    gen->add_option("--seed", seed, "Root seed (default: first seed of the config)");

    auto* tr = app.add_subcommand("train", "Train one sequence plus its FT references");
    tr->add_option("--config", config, "Experiment config (YAML)")->required();
    tr->add_option("--data", data, "Dataset file")->required();
    tr->add_option("--out-dir", out_dir, "Directory for checkpoints and logs")->required();
    tr->add_option("--seed", seed, "Root seed (default: first seed of the config)");
    tr->add_option("--regime", regime, "Override loss.regime (ft, cassle, pnr)");

    auto* pr = app.add_subcommand("probe", "Fill the accuracy matrix of a trained run");
    pr->add_option("--checkpoints", checkpoints, "Directory written by train")->required();
    pr->add_option("--data", data, "Dataset file used for training")->required();
    pr->add_option("--out", out_path, "Output path; .csv and .json are both written")->required();

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    gc->add_option("--loss", loss, "Run a single check by name");
    gc->add_option("--trials", trials, "Random points per check")->check(CLI::PositiveNumber);

    auto* rp = app.add_subcommand("report", "Aggregate metrics JSON files over seeds");
    rp->add_option("--metrics", metrics, "Metrics JSON files")->required();
    rp->add_option("--out", out_path, "CSV to write (default: standard output)");

    auto* rn = app.add_subcommand("run", "gen-data, train and probe for every seed and regime");
    rn->add_option("--config", config, "Experiment config (YAML)")->required();
    rn->add_option("--out-dir", out_dir, "Output directory")->required();
    rn->add_option("--seeds", seeds, "Override the config seed list")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) return gen_data(config, out_path, seed, out);
        if (*tr) return train(config, data, out_dir, seed, regime, out);
        if (*pr) return probe(checkpoints, data, out_path, out);
        if (*gc) return gradcheck(loss, trials, out);
        if (*rp) return report(metrics, out_path, out);
        if (*rn) return run(config, out_dir, seeds, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.is_io() ? 2 : 1;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace pnr
