#include "hypergrad/records.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "json.hpp"

namespace hypergrad {

using nlohmann::ordered_json;

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

// CSV field quoting for free text.
std::string text(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

ordered_json number_or_null(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

} // namespace

void write_run_csv(std::ostream& out, const RunRecord& record) {
    out << kRunCsvHeader << '\n';
    for (const auto& r : record.series) {
        fmt::print(out, "{},{},{},{},{},{},{},{}\n", r.m, num(r.val_loss), num(r.hypergrad_norm), r.jvp_online,
                   r.jvp_estimation, r.lambda_updates, num(r.theta), num(r.gamma));
    }
}

std::string summary_json(const ExperimentConfig& config, const RunRecord& record,
                         const std::optional<MetaTestResult>& meta_test) {
    ordered_json j;
    j["strategy"] = record.config.strategy.label();
    j["seed"] = record.config.seed;
    j["inner_optimizations"] = record.series.size();
    j["diverged"] = record.diverged;
    if (record.diverged) j["failure"] = record.failure;
    if (!record.series.empty()) {
        const auto& last = record.series.back();
        j["final_val_loss"] = number_or_null(last.val_loss);
        j["final_theta"] = number_or_null(last.theta);
    }
    std::size_t jvps = 0, est_jvps = 0;
    for (const auto& r : record.series) {
        jvps += r.jvp_online;
        est_jvps += r.jvp_estimation;
    }
    j["jvp_online_total"] = jvps;
    j["jvp_estimation_total"] = est_jvps;
    j["jvps_per_inner_opt"] = record.series.empty()
                                  ? 0.0
                                  : static_cast<double>(jvps + est_jvps) / static_cast<double>(record.series.size());
    j["estimation_events"] = record.estimations.size();
    if (meta_test) {
        j["meta_test_tasks"] = meta_test->task_losses.size();
        j["meta_test_loss"] = number_or_null(meta_test->mean_loss);
    }
    j["lambda_norm"] = number_or_null(record.lambda.size() ? norm(record.lambda) : 0.0);
    j["phi_norm"] = number_or_null(record.phi.size() ? norm(record.phi) : 0.0);
    j["wall_seconds"] = record.wall_seconds;
    j["config"] = ordered_json::parse(to_json(config));
    return j.dump(2) + "\n";
}

void write_cossim_csv(std::ostream& out, const std::vector<CossimRow>& rows) {
    out << kCossimCsvHeader << '\n';
    for (const auto& r : rows) {
        fmt::print(out, "{},{},{},{},{}\n", r.t, text(r.strategy), num(r.cos_total), num(r.cos_so), r.jvp_count);
    }
}

void write_estimator_scatter_csv(std::ostream& out, const EstimatorTables& tables) {
    out << kEstimatorScatterCsvHeader << '\n';
    for (const auto& r : tables.scatter) {
        fmt::print(out, "{},{},{},{},{},{}\n", r.m, r.s, num(r.x), num(r.y), num(r.theta_fit), num(r.residual));
    }
}

void write_estimator_history_csv(std::ostream& out, const EstimatorTables& tables) {
    out << kEstimatorHistoryCsvHeader << '\n';
    for (const auto& r : tables.history) {
        fmt::print(out, "{},{},{},{},{}\n", r.m, num(r.theta_fit), num(r.theta_after), r.samples, text(r.error));
    }
}

void write_gamma_sweep_csv(std::ostream& out, const std::vector<GammaSweepRow>& rows) {
    out << kGammaSweepCsvHeader << '\n';
    for (const auto& r : rows) fmt::print(out, "{},{},{}\n", num(r.gamma), r.m, num(r.val_loss));
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
    out << kBenchCsvHeader << '\n';
    for (const auto& r : rows) {
        fmt::print(out, "{},{},{},{},{},{},{}\n", text(r.strategy), r.seeds, r.diverged, num(r.metric_mean),
                   num(r.metric_ci), num(r.jvps_per_inner_opt), num(r.wall_seconds));
    }
}

} // namespace hypergrad
