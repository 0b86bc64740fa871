#include "hypergrad/config.hpp"

#include "hypergrad/errors.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include "json.hpp"
#include <set>
#include <sstream>

namespace hypergrad {

using nlohmann::ordered_json;

namespace {

const std::map<std::string, std::string, std::less<>>& presets() {
    static const std::map<std::string, std::string, std::less<>> table{
        {"quadratic-hyperdistill", R"({
  "schema_version": 1,
  "task": {
    "family": "quadratic",
    "batch_size": 4,
    "T": 10,
    "quadratic": {"dim": 5, "k": 1.0, "inner_lr": 0.5, "noise_scale": 0.1, "dataset_size": 32,
                  "target_spread": 1.0, "backend": "analytic"}
  },
  "strategy": {"name": "HyperDistill", "N": 5, "K": 10},
  "M": 30,
  "gamma": 0.5,
  "estimation_period": 10,
  "eta_hyper": 0.1,
  "hyper_momentum": 0.9,
  "meta_batch": 4,
  "seed": 0,
  "meta_test_tasks": 100,
  "diagnostics": {"gammas": [0.0, 0.5, 0.9], "bench_seeds": [0, 1, 2, 3, 4]}
}
)"},
        {"sinusoid-hyperdistill", R"({
  "schema_version": 1,
  "task": {
    "family": "sinusoid",
    "batch_size": 10,
    "T": 30,
    "sinusoid": {"hidden": 100, "shots": 10, "val_points": 100, "inner_lr": 0.01, "backend": "analytic"}
  },
  "strategy": {"name": "HyperDistill", "N": 5, "K": 10},
  "M": 30,
  "gamma": 0.99,
  "estimation_period": 10,
  "eta_hyper": 0.0001,
  "hyper_optimizer": "adam",
  "meta_batch": 10,
  "seed": 0,
  "meta_test_tasks": 100,
  "diagnostics": {"gammas": [0.0, 0.9, 0.99], "bench_seeds": [0, 1, 2, 3, 4]}
}
)"},
        {"reweight-hyperdistill", R"({
  "schema_version": 1,
  "task": {
    "family": "reweight",
    "batch_size": 20,
    "T": 20,
    "val_batch_size": 50,
    "reweight": {"train_size": 200, "val_size": 100, "classifier_hidden": 16, "weight_hidden": 200,
                 "corruption_prob": 0.4, "separation": 2.0, "weight_floor": 0.1, "inner_lr": 0.5,
                 "backend": "finite_difference"}
  },
  "strategy": {"name": "HyperDistill", "N": 5, "K": 10},
  "M": 30,
  "gamma": 0.9,
  "estimation_period": 10,
  "eta_hyper": 0.1,
  "hyper_momentum": 0.9,
  "meta_batch": 4,
  "seed": 0,
  "meta_test_tasks": 50,
  "diagnostics": {"gammas": [0.0, 0.5, 0.9], "bench_seeds": [0, 1, 2]}
}
)"},
    };
    return table;
}

std::size_t line_at(std::string_view text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Maps dotted key paths back to source lines by scanning for each quoted
// segment in turn.
class Locator {
public:
    Locator(std::string_view text, std::string_view origin) : text_(text), origin_(origin) {}

    [[noreturn]] void fail(const std::vector<std::string>& path, const std::string& message) const {
        std::size_t pos = 0;
        bool found = !path.empty();
        for (const auto& seg : path) {
            const std::size_t at = text_.find("\"" + seg + "\"", pos);
            if (at == std::string_view::npos) {
                found = false;
                break;
            }
            pos = at + 1;
        }
        const std::size_t line = found ? line_at(text_, pos) : 1;
        throw ConfigError(fmt::format("{}:{}: {}", origin_, line, message));
    }

    [[noreturn]] void fail_at_offset(std::size_t offset, const std::string& message) const {
        throw ConfigError(fmt::format("{}:{}: {}", origin_, line_at(text_, offset), message));
    }

private:
    std::string_view text_;
    std::string origin_;
};

std::string join(const std::vector<std::string>& path) {
    std::string out;
    for (const auto& p : path) out += (out.empty() ? "" : ".") + p;
    return out;
}

class Reader {
public:
    Reader(const ordered_json& node, std::vector<std::string> path, const Locator& loc)
        : node_(node), path_(std::move(path)), loc_(loc) {
        if (!node_.is_object()) loc_.fail(path_, fmt::format("'{}' must be an object", join(path_)));
    }

    bool has(const char* key) const { return node_.contains(key); }

    void get(const char* key, double& out) {
        if (const auto* v = find(key)) {
            if (!v->is_number()) fail(key, "must be a number");
            out = v->get<double>();
        }
    }
    void get(const char* key, std::size_t& out) {
        if (const auto* v = find(key)) {
            if (!v->is_number_unsigned()) fail(key, "must be a nonnegative integer");
            out = v->get<std::size_t>();
        }
    }
    void get(const char* key, std::uint64_t& out, int) {
        if (const auto* v = find(key)) {
            if (!v->is_number_unsigned()) fail(key, "must be a nonnegative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void get(const char* key, bool& out) {
        if (const auto* v = find(key)) {
            if (!v->is_boolean()) fail(key, "must be a boolean");
            out = v->get<bool>();
        }
    }
    void get(const char* key, std::optional<double>& out) {
        if (const auto* v = find(key)) {
            if (v->is_null()) {
                out.reset();
            } else if (v->is_number()) {
                out = v->get<double>();
            } else {
                fail(key, "must be a number or null");
            }
        }
    }
    void get(const char* key, std::vector<double>& out) {
        if (const auto* v = find(key)) {
            if (!v->is_array()) fail(key, "must be an array of numbers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number()) fail(key, "must be an array of numbers");
                out.push_back(e.get<double>());
            }
        }
    }
    void get(const char* key, std::vector<std::uint64_t>& out) {
        if (const auto* v = find(key)) {
            if (!v->is_array()) fail(key, "must be an array of nonnegative integers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number_unsigned()) fail(key, "must be an array of nonnegative integers");
                out.push_back(e.get<std::uint64_t>());
            }
        }
    }
    template <class Parse, class T>
    void get_enum(const char* key, T& out, Parse parse) {
        if (const auto* v = find(key)) {
            if (!v->is_string()) fail(key, "must be a string");
            try {
                out = parse(v->get<std::string>());
            } catch (const ConfigError& e) {
                fail(key, e.what());
            }
        }
    }

    const ordered_json* raw(const char* key) { return find(key); }

    Reader child(const char* key) {
        const auto* v = find(key);
        static const ordered_json empty = ordered_json::object();
        auto path = path_;
        path.emplace_back(key);
        return Reader(v ? *v : empty, std::move(path), loc_);
    }

    [[noreturn]] void fail(const char* key, const std::string& message) const {
        auto path = path_;
        path.emplace_back(key);
        loc_.fail(path, fmt::format("'{}' {}", join(path), message));
    }

    void finish() const {
        for (const auto& [key, value] : node_.items()) {
            if (!seen_.count(key)) fail(key.c_str(), "is not a recognised key");
        }
    }

private:
    const ordered_json* find(const char* key) {
        seen_.insert(key);
        auto it = node_.find(key);
        return it == node_.end() ? nullptr : &*it;
    }

    const ordered_json& node_;
    std::vector<std::string> path_;
    const Locator& loc_;
    std::set<std::string> seen_;
};

Backend parse_backend(const std::string& name) {
    if (name == "analytic") return Backend::Analytic;
    if (name == "finite_difference") return Backend::FiniteDifference;
    throw ConfigError(fmt::format("unknown backend '{}' (expected analytic or finite_difference)", name));
}

std::string backend_name(Backend b) { return b == Backend::Analytic ? "analytic" : "finite_difference"; }

std::string family_name(TaskFamily f) { return std::string(to_string(f)); }

void read_task(Reader r, TaskSpec& task, std::optional<double>& eta_inner) {
    r.get_enum("family", task.family, parse_task_family);
    r.get("seed", task.seed, 0);
    r.get("batch_size", task.batch_size);
    r.get("T", task.T);
    r.get("val_batch_size", task.val_batch_size);
    {
        Reader q = r.child("quadratic");
        q.get("dim", task.quadratic.dim);
        q.get("k", task.quadratic.k);
        q.get("inner_lr", task.quadratic.inner_lr);
        q.get("noise_scale", task.quadratic.noise_scale);
        q.get("dataset_size", task.quadratic.dataset_size);
        q.get("target_spread", task.quadratic_target_spread);
        q.get_enum("backend", task.quadratic.backend, parse_backend);
        q.finish();
    }
    {
        Reader s = r.child("sinusoid");
        s.get("hidden", task.sinusoid.hidden);
        s.get("shots", task.sinusoid.shots);
        s.get("val_points", task.sinusoid.val_points);
        s.get("inner_lr", task.sinusoid.inner_lr);
        s.get_enum("backend", task.sinusoid.backend, parse_backend);
        s.finish();
    }
    {
        Reader w = r.child("reweight");
        auto& p = task.reweight;
        w.get("train_size", p.train_size);
        w.get("val_size", p.val_size);
        w.get("classifier_hidden", p.classifier_hidden);
        w.get("weight_hidden", p.weight_hidden);
        w.get("corruption_prob", p.corruption_prob);
        w.get("separation", p.separation);
        w.get("weight_floor", p.weight_floor);
        w.get("inner_lr", p.inner_lr);
        w.get_enum("backend", p.backend, parse_backend);
        w.finish();
    }
    r.get("eta_inner", eta_inner);
    r.finish();
}

void apply_eta_inner(TaskSpec& task, double eta) {
    switch (task.family) {
    case TaskFamily::Quadratic: task.quadratic.inner_lr = eta; break;
    case TaskFamily::Sinusoid: task.sinusoid.inner_lr = eta; break;
    case TaskFamily::Reweight: task.reweight.inner_lr = eta; break;
    }
}

// Maps validate()'s field names to their JSON paths.
std::vector<std::string> field_path(const std::string& field) {
    static const std::set<std::string> task_fields{"T", "batch_size", "val_batch_size"};
    if (task_fields.count(field)) return {"task", field};
    if (field == "neumann.K") return {"strategy", "K"};
    return {field};
}

ExperimentConfig parse_checked(std::string_view text, std::string_view origin) {
    const Locator loc(text, origin);
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const ordered_json::parse_error& e) {
        loc.fail_at_offset(e.byte == 0 ? 0 : e.byte - 1, fmt::format("invalid JSON: {}", e.what()));
    }

    ExperimentConfig out;
    out.origin = std::string(origin);
    MetaConfig& c = out.meta;
    Reader r(doc, {}, loc);

    if (!r.has("schema_version")) loc.fail({}, "missing 'schema_version'");
    std::size_t version = 0;
    r.get("schema_version", version);
    if (version != kConfigSchemaVersion) {
        r.fail("schema_version", fmt::format("{} is not supported (expected {})", version, kConfigSchemaVersion));
    }

    std::optional<double> eta_inner;
    if (r.has("task")) read_task(r.child("task"), c.task, eta_inner);

    if (const auto* s = r.raw("strategy")) {
        if (s->is_string()) {
            r.get_enum("strategy", c.strategy.kind, parse_strategy_kind);
        } else {
            Reader sr = r.child("strategy");
            sr.get_enum("name", c.strategy.kind, parse_strategy_kind);
            sr.get("N", c.strategy.neumann_N);
            sr.get("K", c.strategy.neumann_K);
            sr.finish();
        }
    }
    r.get("M", c.M);
    r.get("gamma", c.gamma);
    r.get("estimation_period", c.estimation_period);
    r.get("eta_inner", eta_inner);
    r.get("eta_hyper", c.eta_hyper);
    r.get("eta_reptile", c.eta_reptile);
    r.get("hyper_momentum", c.hyper_momentum);
    r.get_enum("hyper_optimizer", c.hyper_optimizer, parse_hyper_optimizer);
    if (r.has("adam")) {
        Reader a = r.child("adam");
        a.get("beta1", c.adam_beta1);
        a.get("beta2", c.adam_beta2);
        a.get("eps", c.adam_eps);
        a.finish();
    }
    r.get("lr_decay", c.lr_decay);
    r.get("meta_batch", c.meta_batch);
    r.get("seed", c.seed, 0);
    if (!doc.contains("task") || !doc.at("task").contains("seed")) c.task.seed = c.seed;
    r.get("fixed_pi", c.fixed_pi);
    r.get("fixed_theta", c.fixed_theta);
    r.get("theta_ema", c.theta_ema);
    r.get("meta_test_tasks", c.meta_test_tasks);
    r.get("workers", c.workers);
    if (r.has("diagnostics")) {
        Reader d = r.child("diagnostics");
        d.get("gammas", out.diagnostics.gammas);
        d.get("bench_seeds", out.diagnostics.bench_seeds);
        d.get("probe_index", out.diagnostics.probe_index);
        d.finish();
    }
    r.finish();

    if (eta_inner) {
        if (!(*eta_inner > 0.0)) loc.fail({"eta_inner"}, "'eta_inner' must be positive");
        apply_eta_inner(c.task, *eta_inner);
    }
    if (c.hyper_optimizer == HyperOptimizerKind::Adam && c.task.family != TaskFamily::Sinusoid) {
        loc.fail({"hyper_optimizer"}, "'hyper_optimizer' adam is only available for the sinusoid family");
    }
    try {
        validate(c);
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        const auto colon = msg.find(':');
        loc.fail(field_path(msg.substr(0, colon)), msg);
    }
    for (double g : out.diagnostics.gammas) {
        if (!(g >= 0.0 && g < 1.0)) loc.fail({"diagnostics", "gammas"}, "'diagnostics.gammas' entries must lie in [0, 1)");
    }
    return out;
}

} // namespace

ExperimentConfig parse_config(std::string_view text, std::string_view origin) { return parse_checked(text, origin); }

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& [name, text] : presets()) names.push_back(name);
    return names;
}

std::string_view preset_text(std::string_view name) {
    const auto it = presets().find(name);
    if (it == presets().end()) {
        throw ConfigError(fmt::format("unknown preset '{}' (available: {})", name, fmt::join(preset_names(), ", ")));
    }
    return it->second;
}

ExperimentConfig load_config(const std::string& path_or_preset) {
    std::ifstream in(path_or_preset);
    if (in) {
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_config(buf.str(), path_or_preset);
    }
    if (presets().count(path_or_preset)) return parse_config(preset_text(path_or_preset), path_or_preset);
    throw ConfigError(fmt::format("{}: no such file or preset", path_or_preset));
}

std::string to_json(const ExperimentConfig& config) {
    const MetaConfig& c = config.meta;
    const TaskSpec& t = c.task;
    ordered_json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["task"] = {
        {"family", family_name(t.family)},
        {"seed", t.seed},
        {"batch_size", t.batch_size},
        {"T", t.T},
        {"val_batch_size", t.val_batch_size},
        {"quadratic",
         {{"dim", t.quadratic.dim},
          {"k", t.quadratic.k},
          {"inner_lr", t.quadratic.inner_lr},
          {"noise_scale", t.quadratic.noise_scale},
          {"dataset_size", t.quadratic.dataset_size},
          {"target_spread", t.quadratic_target_spread},
          {"backend", backend_name(t.quadratic.backend)}}},
        {"sinusoid",
         {{"hidden", t.sinusoid.hidden},
          {"shots", t.sinusoid.shots},
          {"val_points", t.sinusoid.val_points},
          {"inner_lr", t.sinusoid.inner_lr},
          {"backend", backend_name(t.sinusoid.backend)}}},
        {"reweight",
         {{"train_size", t.reweight.train_size},
          {"val_size", t.reweight.val_size},
          {"classifier_hidden", t.reweight.classifier_hidden},
          {"weight_hidden", t.reweight.weight_hidden},
          {"corruption_prob", t.reweight.corruption_prob},
          {"separation", t.reweight.separation},
          {"weight_floor", t.reweight.weight_floor},
          {"inner_lr", t.reweight.inner_lr},
          {"backend", backend_name(t.reweight.backend)}}},
    };
    j["strategy"] = {{"name", std::string(to_string(c.strategy.kind))},
                     {"N", c.strategy.neumann_N},
                     {"K", c.strategy.neumann_K}};
    j["M"] = c.M;
    j["gamma"] = c.gamma;
    j["estimation_period"] = c.estimation_period;
    j["eta_hyper"] = c.eta_hyper;
    j["eta_reptile"] = c.eta_reptile;
    j["hyper_momentum"] = c.hyper_momentum;
    j["hyper_optimizer"] = std::string(to_string(c.hyper_optimizer));
    j["adam"] = {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}};
    j["lr_decay"] = c.lr_decay;
    j["meta_batch"] = c.meta_batch;
    j["seed"] = c.seed;
    j["fixed_pi"] = c.fixed_pi ? ordered_json(*c.fixed_pi) : ordered_json(nullptr);
    j["fixed_theta"] = c.fixed_theta ? ordered_json(*c.fixed_theta) : ordered_json(nullptr);
    j["theta_ema"] = c.theta_ema;
    j["meta_test_tasks"] = c.meta_test_tasks;
    j["workers"] = c.workers;
    j["diagnostics"] = {{"gammas", config.diagnostics.gammas},
                        {"bench_seeds", config.diagnostics.bench_seeds},
                        {"probe_index", config.diagnostics.probe_index}};
    return j.dump(2) + "\n";
}

} // namespace hypergrad
