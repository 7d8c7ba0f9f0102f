#include "pnr/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <tuple>

#include "pnr/datastore.hpp"
#include "pnr/error.hpp"

namespace pnr {

namespace fs = std::filesystem;
using nlohmann::json;

RunSeeds RunSeeds::from_root(std::uint64_t root) noexcept {
    return {derive_seed(root, "data"), derive_seed(root, "stream"), derive_seed(root, "train"),
            derive_seed(root, "probe")};
}

LabeledDataset make_dataset(const ExperimentConfig& cfg, std::uint64_t root) {
    const DataConfig& d = cfg.data;
    return gen_synthetic(d.classes, d.input_dim, d.samples_per_class, d.radius, d.sigma,
                         RunSeeds::from_root(root).data);
}

TaskStream make_stream(Scenario scenario, std::size_t tasks, double domain_shift,
                       const LabeledDataset& ds, std::uint64_t root) {
    const std::uint64_t seed = RunSeeds::from_root(root).stream;
    switch (scenario) {
        case Scenario::ClassIL: return build_class_il(ds, tasks);
        case Scenario::DataIL: return build_data_il(ds, tasks, seed);
        case Scenario::DomainIL: return build_domain_il(ds, tasks, seed, domain_shift);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown scenario");
}

json to_json(const RunManifest& m) {
    return json{{"scenario", to_string(m.scenario)},
                {"tasks", m.tasks},
                {"seed", m.seed},
                {"method", to_string(m.method)},
                {"regime", to_string(m.regime)},
                {"domain_shift", m.domain_shift},
                {"probe",
                 {{"epochs", m.probe.epochs},
                  {"lr", m.probe.lr},
                  {"l2_penalty", m.probe.l2_penalty},
                  {"train_fraction", m.probe.train_fraction}}},
                {"data_checksum", m.data_checksum}};
}

RunManifest manifest_from_json(const json& j) {
    try {
        RunManifest m;
        m.scenario = parse_scenario(j.at("scenario").get<std::string>());
        m.tasks = j.at("tasks").get<std::size_t>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.method = parse_method(j.at("method").get<std::string>());
        m.regime = parse_regime(j.at("regime").get<std::string>());
        m.domain_shift = j.at("domain_shift").get<double>();
        const json& p = j.at("probe");
        m.probe.epochs = p.at("epochs").get<std::size_t>();
        m.probe.lr = p.at("lr").get<double>();
        m.probe.l2_penalty = p.at("l2_penalty").get<double>();
        m.probe.train_fraction = p.at("train_fraction").get<double>();
        m.data_checksum = j.at("data_checksum").get<std::uint64_t>();
        validate(m.probe);
        return m;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("manifest: ") + e.what());
    }
}

namespace {

std::string numbered(const char* prefix, std::size_t task) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%02zu.ckpt", prefix, task);
    return buf;
}

json log_json(const TrainLog& log, std::size_t task) {
    return json{{"task", task}, {"steps", log.steps}, {"epoch_loss", log.epoch_loss}};
}

json read_json(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
    }
}

void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create directory " + dir.string());
}

std::string fixed(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::string checkpoint_name(std::size_t task) { return numbered("checkpoint", task); }
std::string ft_reference_name(std::size_t task) { return numbered("ft", task); }

std::string render_json(const json& j) { return j.dump(2) + "\n"; }

SequenceResult train_to_directory(const ExperimentConfig& cfg, const LabeledDataset& ds,
                                  std::uint64_t root, const fs::path& dir) {
    validate(cfg);
    if (ds.x.cols() != cfg.data.input_dim)
        throw Error(ErrorCode::InvalidArgument, "dataset width differs from data.input_dim");
    const TaskStream stream = make_stream(cfg.scenario, cfg.tasks, cfg.data.domain_shift, ds, root);
    TrainConfig tc = cfg.train;
    tc.seed = RunSeeds::from_root(root).train;
    SequenceResult seq = run_sequence(stream, tc);

    ensure_directory(dir);
    json log{{"tasks", json::array()}, {"ft_references", json::array()}};
    for (std::size_t t = 0; t < seq.checkpoints.size(); ++t) {
        save_checkpoint(dir / checkpoint_name(t + 1), seq.checkpoints[t]);
        save_checkpoint(dir / ft_reference_name(t + 1), seq.ft_references[t]);
        log["tasks"].push_back(log_json(seq.logs[t], t + 1));
        log["ft_references"].push_back(log_json(seq.ft_logs[t], t + 1));
    }
    write_text_atomic(dir / "train_log.json", render_json(log));

    RunManifest m;
    m.scenario = cfg.scenario;
    m.tasks = cfg.tasks;
    m.seed = root;
    m.method = cfg.train.loss.method;
    m.regime = cfg.train.loss.regime;
    m.domain_shift = cfg.data.domain_shift;
    m.probe = cfg.probe;
    m.data_checksum = fnv1a64(encode_dataset(ds));
    write_text_atomic(dir / "manifest.json", render_json(to_json(m)));
    return seq;
}

RunMetrics compute_metrics(const RunManifest& info, const AccuracyMatrix& am) {
    RunMetrics m{info, am, {}, std::nullopt, std::nullopt};
    for (std::size_t t = 1; t <= am.num_tasks; ++t) m.avg_accuracy.push_back(avg_accuracy(am, t));
    if (am.num_tasks >= 2) {
        m.stability = stability(am);
        if (am.ft.size() == am.num_tasks) m.plasticity = plasticity(am);
    }
    return m;
}

RunMetrics probe_directory(const fs::path& dir, const LabeledDataset& ds) {
    const RunManifest info = manifest_from_json(read_json(dir / "manifest.json"));
    if (fnv1a64(encode_dataset(ds)) != info.data_checksum)
        throw Error(ErrorCode::InvalidArgument, "dataset differs from the one used for training");
    const TaskStream stream = make_stream(info.scenario, info.tasks, info.domain_shift, ds, info.seed);
    std::vector<EncoderStack> checkpoints;
    std::vector<EncoderStack> refs;
    for (std::size_t t = 1; t <= info.tasks; ++t) {
        checkpoints.push_back(load_checkpoint(dir / checkpoint_name(t)));
        refs.push_back(load_checkpoint(dir / ft_reference_name(t)));
    }
    const AccuracyMatrix am =
        fill_accuracy_matrix(checkpoints, refs, stream, info.probe, RunSeeds::from_root(info.seed).probe);
    return compute_metrics(info, am);
}

json to_json(const RunMetrics& m) {
    const std::size_t t = m.accuracy.num_tasks;
    json rows = json::array();
    for (std::size_t i = 0; i < t; ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < t; ++j) row.push_back(m.accuracy.at(i, j));
        rows.push_back(row);
    }
    json out{{"schema", "pnr-metrics/1"},
             {"scenario", to_string(m.info.scenario)},
             {"method", to_string(m.info.method)},
             {"regime", to_string(m.info.regime)},
             {"tasks", t},
             {"seed", m.info.seed},
             {"accuracy", rows},
             {"ft_accuracy", m.accuracy.ft},
             {"avg_accuracy", m.avg_accuracy},
             {"final_avg_accuracy", m.avg_accuracy.empty() ? json(nullptr) : json(m.avg_accuracy.back())},
             {"stability", m.stability ? json(*m.stability) : json(nullptr)},
             {"plasticity", m.plasticity ? json(*m.plasticity) : json(nullptr)}};
    return out;
}

std::string accuracy_csv(const RunMetrics& m) {
    const std::size_t t = m.accuracy.num_tasks;
    std::string out = "task";
    for (std::size_t j = 1; j <= t; ++j) out += ",after_task_" + std::to_string(j);
    out += ",ft\n";
    for (std::size_t i = 0; i < t; ++i) {
        out += std::to_string(i + 1);
        for (std::size_t j = 0; j < t; ++j) out += "," + fixed(m.accuracy.at(i, j));
        out += "," + (m.accuracy.ft.size() == t ? fixed(m.accuracy.ft[i]) : std::string());
        out += "\n";
    }
    out += "A_t";
    for (double a : m.avg_accuracy) out += "," + fixed(a);
    out += ",\n";
    return out;
}

std::string aggregate_report(const std::vector<json>& metrics) {
    using Key = std::tuple<std::string, std::string, std::string, std::size_t>;
    struct Samples {
        std::vector<double> a, s, p;
    };
    std::map<Key, Samples> groups;
    for (const json& m : metrics) {
        try {
            const Key key{m.at("scenario").get<std::string>(), m.at("method").get<std::string>(),
                          m.at("regime").get<std::string>(), m.at("tasks").get<std::size_t>()};
            Samples& g = groups[key];
            g.a.push_back(m.at("final_avg_accuracy").get<double>());
            if (!m.at("stability").is_null()) g.s.push_back(m.at("stability").get<double>());
            if (!m.at("plasticity").is_null()) g.p.push_back(m.at("plasticity").get<double>());
        } catch (const json::exception& e) {
            throw Error(ErrorCode::InvalidArgument, std::string("metrics document: ") + e.what());
        }
    }
    auto stats = [](const std::vector<double>& v) -> std::string {
        if (v.empty()) return ",";
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
        return fixed(mean) + "," + fixed(sd);
    };
    std::string out =
        "scenario,method,regime,tasks,seeds,final_avg_accuracy_mean,final_avg_accuracy_std,"
        "stability_mean,stability_std,plasticity_mean,plasticity_std\n";
    for (const auto& [key, g] : groups) {
        const auto& [scenario, method, regime, tasks] = key;
        out += scenario + "," + method + "," + regime + "," + std::to_string(tasks) + "," +
               std::to_string(g.a.size()) + "," + stats(g.a) + "," + stats(g.s) + "," +
               stats(g.p) + "\n";
    }
    return out;
}

std::vector<RunMetrics> run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                                       std::ostream* log) {
    validate(cfg);
    std::vector<RunMetrics> all;
    std::vector<json> docs;
    for (std::uint64_t seed : cfg.seeds) {
        const fs::path seed_dir = out_dir / ("seed_" + std::to_string(seed));
        ensure_directory(seed_dir);
        const LabeledDataset ds = make_dataset(cfg, seed);
        save_dataset(seed_dir / "data.pnrd", ds);
        for (Regime regime : cfg.regimes) {
            ExperimentConfig run = cfg;
            run.train.loss.regime = regime;
            const fs::path dir = seed_dir / std::string(to_string(regime));
            train_to_directory(run, ds, seed, dir);
            RunMetrics m = probe_directory(dir, ds);
            const json doc = to_json(m);
            write_text_atomic(dir / "accuracy.csv", accuracy_csv(m));
            write_text_atomic(dir / "metrics.json", render_json(doc));
            if (log) {
                *log << "seed " << seed << " " << to_string(cfg.train.loss.method) << "+"
                     << to_string(regime) << ": A_" << cfg.tasks << " = "
                     << fixed(m.avg_accuracy.back()) << "\n";
            }
            docs.push_back(doc);
            all.push_back(std::move(m));
        }
    }
    write_text_atomic(out_dir / "report.csv", aggregate_report(docs));
    return all;
}

}  // namespace pnr
