#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mcinr/dataset.hpp"
#include "mcinr/matrix.hpp"
#include "mcinr/model_store.hpp"

namespace mcinr {

using Query4 = std::array<float, 4>;  // x, y, z, t in original units

struct DecodeResult {
    Mat<float> values;                   // (queries, M), original units
    std::vector<std::uint8_t> out_of_bounds;  // per query
    std::uint64_t out_of_bounds_count = 0;
};

// normalize -> route to a leaf -> forward -> denormalize. Pure and
// thread-safe against a loaded model.
DecodeResult decode(const EncodedModel& model, std::span<const Query4> queries,
                    int thread_count = 1);

// PSNR = 10 log10(range^2 / MSE). Zero MSE reports the capped sentinel
// 99.99 dB with *capped set.
double psnr(std::span<const float> gt, std::span<const float> pred, double range,
            bool* capped = nullptr);
double nrmse(std::span<const float> gt, std::span<const float> pred, double range);
// R^2 = 1 - SS_res / SS_tot; undefined (flagged) for constant ground truth.
double r_squared(std::span<const float> gt, std::span<const float> pred, bool* defined = nullptr);

constexpr double kPsnrCap = 99.99;

struct MetricCell {
    double psnr = 0.0;
    double nrmse = 0.0;
    double r2 = 0.0;
    bool psnr_capped = false;
    bool r2_defined = true;
};

struct MetricReport {
    std::vector<MetricCell> cells;  // index m * T + t
    std::uint32_t variable_count = 0;
    std::uint32_t timestep_count = 0;
    std::vector<double> variable_range;  // per-variable GT max - min
    double mean_psnr = 0.0;   // unweighted mean across all (variable, timestep) cells
    double mean_nrmse = 0.0;
    double mean_r2 = 0.0;     // over cells where R^2 is defined
    std::uint32_t r2_undefined_cells = 0;
    std::uint32_t psnr_capped_cells = 0;
    double normalized_mse = 0.0;  // mean over all records in normalized space
    std::uint64_t evaluated_records = 0;

    const MetricCell& cell(std::uint32_t m, std::uint32_t t) const {
        return cells[std::size_t(m) * timestep_count + t];
    }
    std::string table() const;      // human-readable
    std::string key_values() const;  // machine-readable
};

// Decode every (point, timestep) record of the dataset and compare against
// ground truth in original units, per-variable range as the PSNR peak.
MetricReport evaluate_model(const EncodedModel& model, const Dataset& ds, int thread_count = 1);

enum class ErrorMapFormat { Csv, McdsDelta };

// Per-record absolute errors |gt - decode|, as CSV rows
// x,y,z,t,variable,abs_error or as an MCDS file of deltas.
void export_error_map(const Dataset& ds, const EncodedModel& model, const std::string& path,
                      ErrorMapFormat format, int thread_count = 1);

}  // namespace mcinr
