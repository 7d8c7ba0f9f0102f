#include "pnr/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "pnr/error.hpp"

namespace pnr {

ExperimentConfig::ExperimentConfig() {
    train.epochs_per_task = 100;
    train.dims.encoder = {32, 64, 8};
    train.dims.projector = {8, 32, 16};
    train.dims.predictor = {16, 32, 16};
    train.loss = PnrConfig::defaults_for(Method::SimCLR, Regime::PNR);
}

namespace {

[[noreturn]] void fail(const std::string& key, const std::string& msg) {
    throw Error(ErrorCode::InvalidConfig, key + ": " + msg);
}

std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

std::string scalar_text(const YAML::Node& node, const std::string& key) {
    if (!node.IsScalar()) fail(key, "expected a scalar value");
    return node.Scalar();
}

double parse_double(const YAML::Node& node, const std::string& key) {
    const std::string text = scalar_text(node, key);
    double v = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(v))
        fail(key, "expected a finite number, got '" + text + "'");
    return v;
}

std::uint64_t parse_u64(const YAML::Node& node, const std::string& key) {
    const std::string text = scalar_text(node, key);
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size())
        fail(key, "expected a non-negative integer, got '" + text + "'");
    return v;
}

std::string parse_string(const YAML::Node& node, const std::string& key) {
    return scalar_text(node, key);
}

// Reads the keys of one mapping and rejects anything it did not ask for.
class Section {
public:
    Section(const std::optional<YAML::Node>& node, std::string path)
        : node_(node.value_or(YAML::Node())), path_(std::move(path)) {
        if (node_ && !node_.IsNull() && !node_.IsMap())
            fail(path_.empty() ? "<root>" : path_, "expected a mapping");
    }

    // Empty when the key is absent.
    std::optional<YAML::Node> take(const std::string& key) {
        seen_.insert(key);
        if (!node_ || node_.IsNull()) return std::nullopt;
        const YAML::Node& view = node_;
        const YAML::Node n = view[key];
        if (!n) return std::nullopt;
        return n;
    }

    void number(const std::string& key, double& out) {
        if (const auto n = take(key)) out = parse_double(*n, join(path_, key));
    }
    void count(const std::string& key, std::size_t& out) {
        if (const auto n = take(key)) out = static_cast<std::size_t>(parse_u64(*n, join(path_, key)));
    }
    void count32(const std::string& key, std::uint32_t& out) {
        if (const auto n = take(key)) {
            const std::uint64_t v = parse_u64(*n, join(path_, key));
            if (v > UINT32_MAX) fail(join(path_, key), "value too large");
            out = static_cast<std::uint32_t>(v);
        }
    }
    void sizes(const std::string& key, std::vector<std::size_t>& out) {
        const auto n = take(key);
        if (!n) return;
        const std::string where = join(path_, key);
        if (!n->IsSequence()) fail(where, "expected a list of layer widths");
        out.clear();
        for (std::size_t i = 0; i < n->size(); ++i)
            out.push_back(static_cast<std::size_t>(parse_u64((*n)[i], where + "[" + std::to_string(i) + "]")));
    }

    void finish() const {
        if (!node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const std::string k = kv.first.Scalar();
            if (!seen_.count(k)) fail(join(path_, k), "unknown key");
        }
    }

private:
    YAML::Node node_;
    std::string path_;
    std::set<std::string> seen_;
};

// Re-labels errors from enum parsers with the key they came from.
template <typename Parse>
auto guarded(const std::string& key, Parse parse) {
    try {
        return parse();
    } catch (const Error& e) {
        fail(key, e.what());
    }
}

void check_chain(const std::vector<std::size_t>& dims, const std::string& key) {
    if (dims.size() < 2) fail(key, "needs at least an input and an output width");
    for (std::size_t i = 0; i < dims.size(); ++i)
        if (dims[i] == 0) fail(key + "[" + std::to_string(i) + "]", "width must be >= 1");
}

std::string fmt(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    // Keep floats recognizable as floats when read back by humans.
    if (s.find_first_of(".e") == std::string::npos && s.find("inf") == std::string::npos) s += ".0";
    return s;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s + "]";
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
    if (cfg.tasks < 1) fail("tasks", "must be >= 1");
    if (cfg.seeds.empty()) fail("seeds", "needs at least one seed");
    if (cfg.regimes.empty()) fail("regimes", "needs at least one regime");
    const DataConfig& d = cfg.data;
    if (d.classes < 2) fail("data.classes", "must be >= 2");
    if (d.input_dim < 2) fail("data.input_dim", "must be >= 2");
    if (d.samples_per_class < 1) fail("data.samples_per_class", "must be >= 1");
    if (!(d.radius > 0.0)) fail("data.radius", "must be > 0");
    if (!(d.sigma >= 0.0)) fail("data.sigma", "must be >= 0");
    if (!(d.domain_shift >= 0.0)) fail("data.domain_shift", "must be >= 0");
    if (cfg.scenario == Scenario::ClassIL && d.classes % cfg.tasks != 0)
        fail("tasks", "must divide data.classes for class_il");
    const std::size_t total = static_cast<std::size_t>(d.classes) * d.samples_per_class;
    if (cfg.scenario == Scenario::DataIL && total < 2 * cfg.tasks)
        fail("tasks", "too many tasks for the number of samples");
    if (cfg.scenario == Scenario::DomainIL && d.samples_per_class < cfg.tasks)
        fail("data.samples_per_class", "must be >= tasks for domain_il");

    const StackDims& m = cfg.train.dims;
    check_chain(m.encoder, "model.encoder");
    check_chain(m.projector, "model.projector");
    check_chain(m.predictor, "model.predictor");
    if (m.encoder.front() != d.input_dim) fail("model.encoder[0]", "must equal data.input_dim");
    if (m.projector.front() != m.encoder.back())
        fail("model.projector[0]", "must equal the last encoder width");
    if (m.predictor.front() != m.projector.back() || m.predictor.back() != m.projector.back())
        fail("model.predictor", "must map the projection width to itself");
    if (!m.ssl_predictor.empty()) {
        check_chain(m.ssl_predictor, "model.ssl_predictor");
        if (m.ssl_predictor.front() != m.projector.back() ||
            m.ssl_predictor.back() != m.projector.back())
            fail("model.ssl_predictor", "must map the projection width to itself");
    }
    validate(cfg.train);
    validate(cfg.probe);
}

ExperimentConfig parse_config(std::string_view text) {
    YAML::Node root;
    try {
        root = YAML::Load(std::string(text));
    } catch (const YAML::Exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("malformed YAML: ") + e.what());
    }

    ExperimentConfig cfg;
    Section top(std::optional<YAML::Node>(root), "");
    if (const auto n = top.take("scenario"))
        cfg.scenario = guarded("scenario", [&] { return parse_scenario(parse_string(*n, "scenario")); });
    top.count("tasks", cfg.tasks);
    if (const auto n = top.take("seeds")) {
        if (!n->IsSequence()) fail("seeds", "expected a list of integers");
        cfg.seeds.clear();
        for (std::size_t i = 0; i < n->size(); ++i)
            cfg.seeds.push_back(parse_u64((*n)[i], "seeds[" + std::to_string(i) + "]"));
    }
    if (const auto n = top.take("regimes")) {
        if (!n->IsSequence()) fail("regimes", "expected a list of regime names");
        cfg.regimes.clear();
        for (std::size_t i = 0; i < n->size(); ++i) {
            const std::string key = "regimes[" + std::to_string(i) + "]";
            cfg.regimes.push_back(guarded(key, [&] { return parse_regime(parse_string((*n)[i], key)); }));
        }
    }

    Section data(top.take("data"), "data");
    data.count32("classes", cfg.data.classes);
    data.count("input_dim", cfg.data.input_dim);
    data.count("samples_per_class", cfg.data.samples_per_class);
    data.number("radius", cfg.data.radius);
    data.number("sigma", cfg.data.sigma);
    data.number("domain_shift", cfg.data.domain_shift);
    data.finish();

    Section aug(top.take("augment"), "augment");
    aug.number("noise_std", cfg.train.augment.noise_std);
    aug.number("dropout_p", cfg.train.augment.dropout_p);
    aug.number("scale_lo", cfg.train.augment.scale_lo);
    aug.number("scale_hi", cfg.train.augment.scale_hi);
    aug.finish();

    Section model(top.take("model"), "model");
    model.sizes("encoder", cfg.train.dims.encoder);
    model.sizes("projector", cfg.train.dims.projector);
    model.sizes("predictor", cfg.train.dims.predictor);
    model.sizes("ssl_predictor", cfg.train.dims.ssl_predictor);
    model.finish();

    Section train(top.take("train"), "train");
    train.count("epochs_per_task", cfg.train.epochs_per_task);
    train.count("batch_size", cfg.train.batch_size);
    train.number("lr", cfg.train.lr);
    train.number("momentum", cfg.train.momentum);
    train.number("weight_decay", cfg.train.weight_decay);
    train.number("ema_momentum", cfg.train.ema_momentum);
    train.finish();

    // Method first: its defaults (lambda) apply before explicit overrides.
    Section loss(top.take("loss"), "loss");
    Method method = cfg.train.loss.method;
    Regime regime = cfg.train.loss.regime;
    if (const auto n = loss.take("method"))
        method = guarded("loss.method", [&] { return parse_method(parse_string(*n, "loss.method")); });
    if (const auto n = loss.take("regime"))
        regime = guarded("loss.regime", [&] { return parse_regime(parse_string(*n, "loss.regime")); });
    PnrConfig& pc = cfg.train.loss;
    pc = PnrConfig::defaults_for(method, regime);
    loss.number("tau", pc.tau);
    loss.number("lambda", pc.lambda);
    loss.number("lambda_cassle", pc.lambda_cassle);
    loss.number("lambda_pnr", pc.lambda_pnr);
    loss.number("barlow_lambda", pc.barlow_lambda);
    loss.count("queue_capacity", cfg.train.queue_capacity);
    Section vic(loss.take("vicreg"), "loss.vicreg");
    vic.number("invariance", pc.vicreg.invariance);
    vic.number("variance", pc.vicreg.variance);
    vic.number("covariance", pc.vicreg.covariance);
    vic.number("gamma", pc.vicreg.gamma);
    vic.number("eps", pc.vicreg.eps);
    vic.finish();
    loss.finish();

    Section probe(top.take("probe"), "probe");
    probe.count("epochs", cfg.probe.epochs);
    probe.number("lr", cfg.probe.lr);
    probe.number("l2_penalty", cfg.probe.l2_penalty);
    probe.number("train_fraction", cfg.probe.train_fraction);
    probe.finish();
    top.finish();

    // The BYOL online predictor defaults to the shape of g; other methods carry none.
    StackDims& dims = cfg.train.dims;
    if (method != Method::BYOL) dims.ssl_predictor.clear();
    else if (dims.ssl_predictor.empty()) dims.ssl_predictor = dims.predictor;

    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string dump_config(const ExperimentConfig& cfg) {
    std::ostringstream o;
    o << "scenario: " << to_string(cfg.scenario) << "\n";
    o << "tasks: " << cfg.tasks << "\n";
    o << "seeds: [";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) o << (i ? ", " : "") << cfg.seeds[i];
    o << "]\n";
    o << "regimes: [";
    for (std::size_t i = 0; i < cfg.regimes.size(); ++i) o << (i ? ", " : "") << to_string(cfg.regimes[i]);
    o << "]\n";
    o << "data:\n"
      << "  classes: " << cfg.data.classes << "\n"
      << "  input_dim: " << cfg.data.input_dim << "\n"
      << "  samples_per_class: " << cfg.data.samples_per_class << "\n"
      << "  radius: " << fmt(cfg.data.radius) << "\n"
      << "  sigma: " << fmt(cfg.data.sigma) << "\n"
      << "  domain_shift: " << fmt(cfg.data.domain_shift) << "\n";
    const AugmentConfig& a = cfg.train.augment;
    o << "augment:\n"
      << "  noise_std: " << fmt(a.noise_std) << "\n"
      << "  dropout_p: " << fmt(a.dropout_p) << "\n"
      << "  scale_lo: " << fmt(a.scale_lo) << "\n"
      << "  scale_hi: " << fmt(a.scale_hi) << "\n";
    const StackDims& m = cfg.train.dims;
    o << "model:\n"
      << "  encoder: " << fmt_list(m.encoder) << "\n"
      << "  projector: " << fmt_list(m.projector) << "\n"
      << "  predictor: " << fmt_list(m.predictor) << "\n";
    if (!m.ssl_predictor.empty()) o << "  ssl_predictor: " << fmt_list(m.ssl_predictor) << "\n";
    const TrainConfig& t = cfg.train;
    o << "train:\n"
      << "  epochs_per_task: " << t.epochs_per_task << "\n"
      << "  batch_size: " << t.batch_size << "\n"
      << "  lr: " << fmt(t.lr) << "\n"
      << "  momentum: " << fmt(t.momentum) << "\n"
      << "  weight_decay: " << fmt(t.weight_decay) << "\n"
      << "  ema_momentum: " << fmt(t.ema_momentum) << "\n";
    const PnrConfig& l = t.loss;
    o << "loss:\n"
      << "  method: " << to_string(l.method) << "\n"
      << "  regime: " << to_string(l.regime) << "\n"
      << "  tau: " << fmt(l.tau) << "\n"
      << "  lambda: " << fmt(l.lambda) << "\n"
      << "  lambda_cassle: " << fmt(l.lambda_cassle) << "\n"
      << "  lambda_pnr: " << fmt(l.lambda_pnr) << "\n"
      << "  barlow_lambda: " << fmt(l.barlow_lambda) << "\n"
      << "  queue_capacity: " << t.queue_capacity << "\n"
      << "  vicreg:\n"
      << "    invariance: " << fmt(l.vicreg.invariance) << "\n"
      << "    variance: " << fmt(l.vicreg.variance) << "\n"
      << "    covariance: " << fmt(l.vicreg.covariance) << "\n"
      << "    gamma: " << fmt(l.vicreg.gamma) << "\n"
      << "    eps: " << fmt(l.vicreg.eps) << "\n";
    o << "probe:\n"
      << "  epochs: " << cfg.probe.epochs << "\n"
      << "  lr: " << fmt(cfg.probe.lr) << "\n"
      << "  l2_penalty: " << fmt(cfg.probe.l2_penalty) << "\n"
      << "  train_fraction: " << fmt(cfg.probe.train_fraction) << "\n";
    return o.str();
}

}  // namespace pnr
