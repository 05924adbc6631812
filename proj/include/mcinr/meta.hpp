#pragma once

#include <cstdint>
#include <vector>

#include "mcinr/cluster_data.hpp"
#include "mcinr/network.hpp"

namespace mcinr {

struct MetaConfig {
    std::uint32_t sample_count = 0;  // 0 = auto: min(10000, 10% of cluster points)
    int inner_steps = 4;
    double inner_lr = 1e-4;
    double outer_lr = 5e-5;
    int meta_iterations = 500;
    std::uint64_t seed = 0;

    std::uint32_t effective_sample_count(std::size_t cluster_points) const;
};

struct MetaInit {
    NetworkParamsF params;
    LeafKey source_leaf;
    std::vector<double> meta_loss_trace;  // query-set MSE, one entry per iteration
};

struct MetaTask {
    std::vector<std::uint32_t> support_points;  // local point indices
    std::vector<std::uint32_t> query_points;
};

// Fresh uniform draw of sample_count points without replacement, split 50/50
// into support and query; deterministic in (seed, leaf, iteration).
MetaTask sample_task(std::size_t cluster_points, std::uint32_t sample_count, std::uint64_t seed,
                     LeafKey leaf, int iteration);

// First-order MAML: per iteration, adapt a copy of the init with plain
// gradient descent on the support set, then apply the query-set gradient at
// the adapted parameters to the init via Adam.
MetaInit meta_train(const ClusterData& data, const NetworkParamsF& initial, const MetaConfig& cfg,
                    LeafKey leaf, std::size_t chunk_size);

}  // namespace mcinr
