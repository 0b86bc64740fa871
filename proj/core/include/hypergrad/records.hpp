#pragma once

#include "hypergrad/config.hpp"
#include "hypergrad/diagnostics.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace hypergrad {

// Column schemas (header rows) of every table written below.
inline constexpr const char* kRunCsvHeader =
    "m,val_loss,hypergrad_norm,jvp_online,jvp_estimation,lambda_updates,theta,gamma";
inline constexpr const char* kCossimCsvHeader = "t,strategy,cosine_total,cosine_so,jvp_count";
inline constexpr const char* kEstimatorScatterCsvHeader = "m,s,x,y,theta_fit,residual";
inline constexpr const char* kEstimatorHistoryCsvHeader = "m,theta_fit,theta_after,samples,error";
inline constexpr const char* kGammaSweepCsvHeader = "gamma,m,val_loss";
inline constexpr const char* kBenchCsvHeader =
    "strategy,seeds,diverged,metric_mean,metric_ci95,jvps_per_inner_opt,wall_seconds";

// One row per inner-optimization. Wall time is left out so reruns are
// byte-identical; it goes to the summary.
void write_run_csv(std::ostream& out, const RunRecord& record);

// Terminal metrics, config echo, seed and timings.
std::string summary_json(const ExperimentConfig& config, const RunRecord& record,
                         const std::optional<MetaTestResult>& meta_test);

void write_cossim_csv(std::ostream& out, const std::vector<CossimRow>& rows);
void write_estimator_scatter_csv(std::ostream& out, const EstimatorTables& tables);
void write_estimator_history_csv(std::ostream& out, const EstimatorTables& tables);
void write_gamma_sweep_csv(std::ostream& out, const std::vector<GammaSweepRow>& rows);
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

} // namespace hypergrad
