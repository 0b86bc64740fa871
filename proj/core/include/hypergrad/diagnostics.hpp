#pragma once

#include "hypergrad/metaloop.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace hypergrad {

// One (step, strategy) comparison against reverse-mode over the true prefix.
// cos_so is NaN when either second-order term vanishes.
struct CossimRow {
    std::size_t t = 0;
    std::string strategy;
    double cos_total = 0.0;
    double cos_so = 0.0;
    std::size_t jvp_count = 0;
};

// Probe inner-optimization with lambda frozen. HyperDistill uses
// config.gamma and a theta fitted on a separate estimation task unless
// config.fixed_theta / fixed_pi is set; "RMD" compares the oracle to itself.
std::vector<CossimRow> cossim_series(const InnerProblem& problem, const MetaConfig& config,
                                     const std::vector<Strategy>& strategies, const ParamVector& lambda,
                                     const ParamVector& w0);

// Same, on probe task `probe_index` with lambda and phi at their initial values.
std::vector<CossimRow> cossim_series(const MetaConfig& config, const std::vector<Strategy>& strategies,
                                     std::size_t probe_index = 0);

// "RMD" self-comparison label accepted by cossim_series in addition to
// the meta-training strategies.
inline const std::string kRmdLabel = "RMD";

struct EstimatorSampleRow {
    std::size_t m = 0;
    std::size_t s = 0;
    double x = 0.0;
    double y = 0.0;
    double theta_fit = 0.0;
    double residual = 0.0;
};

struct EstimatorEventRow {
    std::size_t m = 0;
    double theta_fit = 0.0; // NaN on failure
    double theta_after = 0.0;
    std::size_t samples = 0;
    std::string error;
};

struct EstimatorTables {
    std::vector<EstimatorSampleRow> scatter;
    std::vector<EstimatorEventRow> history;
};

EstimatorTables estimator_diagnostics(const RunRecord& record);

// Runs HyperDistill meta-training and tabulates every estimation event.
EstimatorTables estimator_diagnostics(const MetaConfig& config);

struct GammaSweepRow {
    double gamma = 0.0;
    std::size_t m = 0;
    double val_loss = 0.0;
};

// HyperDistill with theta pinned to 1 for each gamma, so gamma = 0 is the
// one-step hypergradient.
std::vector<GammaSweepRow> gamma_sweep(const MetaConfig& config, const std::vector<double>& gammas);

struct BenchRow {
    std::string strategy;
    std::size_t seeds = 0;
    std::size_t diverged = 0;
    double metric_mean = 0.0;
    double metric_ci = 0.0;   // 1.96 * sample sd / sqrt(n)
    double jvps_per_inner_opt = 0.0;
    double wall_seconds = 0.0; // mean per seed
    std::vector<double> per_seed;
};

// Mean meta-test loss of every strategy over `seeds`, each seed setting both
// the task distribution and the initialisation.
std::vector<BenchRow> bench(const MetaConfig& config, const std::vector<Strategy>& strategies,
                            const std::vector<std::uint64_t>& seeds);

std::vector<Strategy> all_strategies(const MetaConfig& config);

// Mean and 1.96 * sample standard error.
std::pair<double, double> mean_ci95(const std::vector<double>& xs);

} // namespace hypergrad
