#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcinr/clustering.hpp"
#include "mcinr/dataset.hpp"
#include "mcinr/network.hpp"

namespace mcinr {

struct ClusterStats {
    LeafKey leaf;
    std::uint64_t point_count = 0;
    double aggregate_mse = 0.0;            // mean over variables and timesteps, normalized space
    std::vector<double> per_variable_mse;  // M entries
};

// The serializable compression artifact: partition + one network per
// terminal leaf + normalization metadata.
struct EncodedModel {
    std::uint32_t version = 1;
    std::uint32_t point_count = 0;
    std::uint32_t timestep_count = 0;
    std::uint32_t variable_count = 0;
    std::vector<std::string> variable_names;
    std::uint64_t bounds_hash = 0;
    Normalizer norm;
    NetworkShape shape;
    ClusterPartition partition;
    std::vector<std::pair<LeafKey, NetworkParamsF>> networks;  // sorted by leaf key
    std::vector<ClusterStats> stats;                           // sorted by leaf key

    const NetworkParamsF* find_network(LeafKey key) const;
    void validate() const;  // exactly one network per terminal leaf
};

// Writes the MCINRM1 file; returns total bytes written (the CR denominator).
std::uint64_t save_model(const EncodedModel& model, const std::string& path);
EncodedModel load_model(const std::string& path);

std::uint64_t file_size_bytes(const std::string& path);

// raw value bytes / model file bytes.
double compression_ratio(const Dataset& ds, const std::string& model_path);

bool fingerprint_matches(const EncodedModel& model, const Dataset& ds, std::string* why = nullptr);

std::uint32_t crc32_ieee(const unsigned char* data, std::size_t len);

}  // namespace mcinr
