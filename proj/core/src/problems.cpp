#include "hypergrad/problems.hpp"

#include "hypergrad/errors.hpp"

#include <algorithm>
#include <deque>
#include <fmt/format.h>
#include <numbers>

namespace hypergrad {

std::string_view to_string(TaskFamily f) {
    switch (f) {
    case TaskFamily::Quadratic: return "quadratic";
    case TaskFamily::Sinusoid: return "sinusoid";
    case TaskFamily::Reweight: return "reweight";
    }
    return "unknown";
}

TaskFamily parse_task_family(std::string_view name) {
    if (name == "quadratic") return TaskFamily::Quadratic;
    if (name == "sinusoid") return TaskFamily::Sinusoid;
    if (name == "reweight") return TaskFamily::Reweight;
    throw ConfigError(fmt::format("unknown task family '{}'", name));
}

TaskSampler::TaskSampler(TaskSpec spec) : spec_(std::move(spec)) {
    if (spec_.batch_size == 0) throw ConfigError("batch_size must be positive");
}

TaskSampler TaskSampler::stream(std::uint64_t stream_id) const {
    TaskSampler s = *this;
    s.stream_ = stream_id;
    return s;
}

namespace {

enum : std::uint64_t { kTaskTag = 1, kFamilyTag = 2, kBatchTag = 3, kValTag = 4 };

} // namespace

std::shared_ptr<const InnerProblem> TaskSampler::sample_task(std::uint64_t task_index) const {
    const std::uint64_t task_seed = derive_seed(spec_.seed, {kTaskTag, stream_, task_index});
    Rng rng(task_seed);
    switch (spec_.family) {
    case TaskFamily::Quadratic: {
        const auto& qp = spec_.quadratic;
        // The family centre is shared by every stream so meta-train and
        // meta-test tasks come from one distribution.
        Rng centre_rng = make_rng(spec_.seed, {kFamilyTag});
        std::normal_distribution<double> normal(0.0, 1.0);
        ParamVector target(qp.dim);
        for (std::size_t i = 0; i < qp.dim; ++i) target[i] = 2.0 * normal(centre_rng);
        for (std::size_t i = 0; i < qp.dim; ++i) target[i] += spec_.quadratic_target_spread * normal(rng);
        return std::make_shared<QuadraticTask>(qp, std::move(target), task_seed);
    }
    case TaskFamily::Sinusoid: {
        std::uniform_real_distribution<double> amp(0.1, 5.0);
        std::uniform_real_distribution<double> phase(0.0, std::numbers::pi);
        const double a = amp(rng);
        const double p = phase(rng);
        return std::make_shared<SinusoidTask>(spec_.sinusoid, a, p, task_seed);
    }
    case TaskFamily::Reweight:
        return std::make_shared<ReweightTask>(spec_.reweight, task_seed);
    }
    throw ConfigError("unknown task family");
}

std::vector<Batch> batch_stream(const TaskSampler& sampler, const InnerProblem& task) {
    const std::size_t bs = sampler.spec().batch_size;
    const std::size_t n = task.dataset_size();
    if (bs > n) {
        throw ConfigError(fmt::format("batch_size {} exceeds dataset size {}", bs, n));
    }
    Rng rng = make_rng(task.task_seed(), {kBatchTag});

    std::deque<std::size_t> queue;
    auto refill = [&] {
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        queue.insert(queue.end(), perm.begin(), perm.end());
    };

    std::vector<Batch> out;
    out.reserve(sampler.spec().T);
    for (std::size_t t = 0; t < sampler.spec().T; ++t) {
        std::vector<std::size_t> idx;
        std::vector<std::size_t> deferred;
        idx.reserve(bs);
        while (idx.size() < bs) {
            if (queue.empty()) refill();
            const std::size_t i = queue.front();
            queue.pop_front();
            if (std::find(idx.begin(), idx.end(), i) != idx.end()) {
                deferred.push_back(i);
            } else {
                idx.push_back(i);
            }
        }
        // Indices that collided at an epoch boundary lead the next batch.
        queue.insert(queue.begin(), deferred.begin(), deferred.end());
        out.emplace_back(std::move(idx));
    }
    return out;
}

Batch val_batch(const TaskSampler& sampler, const InnerProblem& task) {
    const std::size_t n = task.val_size();
    const std::size_t want = sampler.spec().val_batch_size;
    if (want == 0 || want >= n) return Batch::range(n);
    Rng rng = make_rng(task.task_seed(), {kValTag});
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    perm.resize(want);
    return Batch(std::move(perm));
}

const ParamVector& Trajectory::weight_at(std::size_t t) const {
    if (t == 0) return w0;
    if (t == T()) return wT;
    if (t > T()) throw TrajectoryError(fmt::format("weight_at: step {} beyond horizon {}", t, T()));
    if (!recorded) throw TrajectoryError("weight_at: intermediates were not recorded");
    return intermediates[t - 1];
}

Trajectory Trajectory::prefix(std::size_t t) const {
    if (t > T()) throw TrajectoryError(fmt::format("prefix: step {} beyond horizon {}", t, T()));
    Trajectory p;
    p.w0 = w0;
    p.wT = weight_at(t);
    p.recorded = true;
    p.intermediates.assign(intermediates.begin(), intermediates.begin() + (t > 0 ? static_cast<std::ptrdiff_t>(t - 1) : 0));
    p.batches.assign(batches.begin(), batches.begin() + static_cast<std::ptrdiff_t>(t));
    return p;
}

Trajectory run_inner(const InnerProblem& task, const ParamVector& lambda, const ParamVector& w0,
                     std::vector<Batch> batches, bool record) {
    Trajectory traj;
    traj.w0 = w0;
    traj.recorded = record;
    ParamVector w = w0;
    const std::size_t T = batches.size();
    if (record && T > 1) traj.intermediates.reserve(T - 1);
    for (std::size_t t = 1; t <= T; ++t) {
        try {
            w = sgd_step(task, w, lambda, batches[t - 1]);
        } catch (const NonFiniteError& e) {
            throw DivergenceError(e.what(), t);
        }
        if (record && t < T) traj.intermediates.push_back(w);
    }
    traj.wT = std::move(w);
    traj.batches = std::move(batches);
    return traj;
}

} // namespace hypergrad
