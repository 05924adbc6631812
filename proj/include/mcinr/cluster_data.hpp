#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mcinr/clustering.hpp"
#include "mcinr/matrix.hpp"
#include "mcinr/network.hpp"

namespace mcinr {

// One cluster's training view, everything already in normalized space.
// A record is one (point, timestep) pair carrying all M variables; record
// index r = t * point_count + n.
struct ClusterData {
    std::vector<Point3> coords;          // local point index -> normalized xyz
    std::vector<float> times;            // T normalized times
    std::vector<float> values;           // (t * point_count + n) * M + m
    std::vector<std::uint32_t> global_index;  // local point index -> dataset index
    std::size_t var_count = 0;

    std::size_t point_count() const { return coords.size(); }
    std::size_t timestep_count() const { return times.size(); }
    std::size_t record_count() const { return coords.size() * times.size(); }

    // Subset view for split children: keeps coords/global_index for the
    // selected local points, gathers their values across all timesteps.
    ClusterData subset(std::span<const std::uint32_t> local_points) const;
};

// Fills coords (B,4) and targets (B,M) for the given records.
void gather_records(const ClusterData& data, std::span<const std::uint32_t> records,
                    Mat<float>& coords, Mat<float>& targets);

// Mean-squared error over the given records, all variables; optionally
// accumulates full-batch gradients of that mean into *grads. Work is chunked
// by chunk_size; chunking does not change the result scaling.
double batch_loss_and_grads(const NetworkParamsF& net, const ClusterData& data,
                            std::span<const std::uint32_t> records, std::size_t chunk_size,
                            NetworkParamsF* grads);

// MSE of `net` over every record of the cluster, aggregate and per variable.
struct ResidualReport {
    double aggregate = 0.0;
    std::vector<double> per_variable;
};
ResidualReport full_residual(const NetworkParamsF& net, const ClusterData& data,
                             std::size_t chunk_size);

}  // namespace mcinr
