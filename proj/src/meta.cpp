#include "mcinr/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mcinr/adam.hpp"
#include "mcinr/rng.hpp"

namespace mcinr {

namespace {
constexpr std::uint64_t kMetaSampleSalt = 0x6d657461'73616d70ULL;

// Records (all timesteps) of the given local points.
std::vector<std::uint32_t> records_of_points(const ClusterData& data,
                                             std::span<const std::uint32_t> points) {
    std::vector<std::uint32_t> records;
    records.reserve(points.size() * data.timestep_count());
    const std::uint32_t pc = static_cast<std::uint32_t>(data.point_count());
    for (std::uint32_t t = 0; t < data.timestep_count(); ++t) {
        for (std::uint32_t p : points) records.push_back(t * pc + p);
    }
    return records;
}
}  // namespace

std::uint32_t MetaConfig::effective_sample_count(std::size_t cluster_points) const {
    std::uint64_t n = sample_count;
    if (n == 0) {
        n = std::min<std::uint64_t>(10000, cluster_points / 10);
    }
    n = std::max<std::uint64_t>(n, 2);
    n = std::min<std::uint64_t>(n, cluster_points);
    return static_cast<std::uint32_t>(n);
}

MetaTask sample_task(std::size_t cluster_points, std::uint32_t sample_count, std::uint64_t seed,
                     LeafKey leaf, int iteration) {
    if (cluster_points < 2) throw std::runtime_error("sample_task: cluster must have >= 2 points");
    if (sample_count < 2 || sample_count > cluster_points) {
        throw std::runtime_error("sample_task: sample_count out of range");
    }
    std::mt19937 rng =
        make_rng(derive_seed(seed, kMetaSampleSalt, leaf.packed(), static_cast<std::uint64_t>(iteration)));
    std::vector<std::uint32_t> pool(cluster_points);
    std::iota(pool.begin(), pool.end(), 0u);
    // Partial Fisher-Yates: the first sample_count entries are the draw.
    for (std::uint32_t i = 0; i < sample_count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, cluster_points - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    MetaTask task;
    const std::uint32_t support_n = (sample_count + 1) / 2;
    task.support_points.assign(pool.begin(), pool.begin() + support_n);
    task.query_points.assign(pool.begin() + support_n, pool.begin() + sample_count);
    return task;
}

MetaInit meta_train(const ClusterData& data, const NetworkParamsF& initial, const MetaConfig& cfg,
                    LeafKey leaf, std::size_t chunk_size) {
    if (data.point_count() == 0) throw std::runtime_error("meta_train: empty cluster");
    if (!(cfg.inner_lr > 0.0) || cfg.outer_lr < 0.0) {
        throw std::runtime_error("meta_train: learning rates must be positive");
    }
    MetaInit out;
    out.params = initial;
    out.source_leaf = leaf;
    out.meta_loss_trace.reserve(cfg.meta_iterations);
    if (cfg.meta_iterations == 0) return out;

    const std::uint32_t sample_count = cfg.effective_sample_count(data.point_count());
    auto outer_params = param_spans(out.params);
    AdamState<float> outer_state = AdamState<float>::like(outer_params);

    for (int it = 0; it < cfg.meta_iterations; ++it) {
        MetaTask task = sample_task(data.point_count(), sample_count, cfg.seed, leaf, it);
        const auto support = records_of_points(data, task.support_points);
        const auto query = records_of_points(data, task.query_points);

        // Inner loop: plain gradient descent on a copy of the init.
        NetworkParamsF adapted = out.params;
        for (int step = 0; step < cfg.inner_steps; ++step) {
            NetworkParamsF grads = zeros_like(adapted);
            const double loss = batch_loss_and_grads(adapted, data, support, chunk_size, &grads);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("meta_train: non-finite support loss at iteration " +
                                         std::to_string(it) + ", inner step " + std::to_string(step) +
                                         " (leaf " + leaf.str() + ")");
            }
            auto p = param_spans(adapted);
            auto g = param_spans_const(grads);
            const float lr = static_cast<float>(cfg.inner_lr);
            for (std::size_t k = 0; k < p.size(); ++k) {
                for (std::size_t i = 0; i < p[k].size(); ++i) p[k][i] -= lr * g[k][i];
            }
        }

        // First-order update: query gradient at the adapted parameters,
        // applied to the init.
        NetworkParamsF qgrads = zeros_like(adapted);
        const double qloss = batch_loss_and_grads(adapted, data, query, chunk_size, &qgrads);
        if (!std::isfinite(qloss)) {
            throw std::runtime_error("meta_train: non-finite query loss at iteration " +
                                     std::to_string(it) + " (leaf " + leaf.str() + ")");
        }
        out.meta_loss_trace.push_back(qloss);
        adam_step<float>(outer_params, param_spans_const(qgrads), outer_state,
                         static_cast<float>(cfg.outer_lr));
    }
    return out;
}

}  // namespace mcinr
