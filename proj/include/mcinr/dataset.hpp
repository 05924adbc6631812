#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mcinr/clustering.hpp"

namespace mcinr {

// Multivariate time-varying point data: N spatial points, T timesteps,
// M variables, values indexed [t][n][m].
struct Dataset {
    std::uint32_t point_count = 0;     // N
    std::uint32_t timestep_count = 0;  // T
    std::uint32_t variable_count = 0;  // M
    std::vector<std::string> variable_names;
    std::vector<Point3> coords;                       // N, original units
    std::vector<float> times;                         // T
    std::vector<float> values;                        // T*N*M
    std::array<std::array<double, 2>, 3> coord_bounds{};  // per-axis {min, max}
    std::vector<std::array<double, 2>> value_bounds;      // per-variable {min, max}

    std::size_t value_index(std::size_t t, std::size_t n, std::size_t m) const {
        return (t * point_count + n) * variable_count + m;
    }
    float value(std::size_t t, std::size_t n, std::size_t m) const {
        return values[value_index(t, n, m)];
    }
    void recompute_bounds();
    void recompute_value_bounds();
    void validate() const;
};

enum class DataFormat { Native, Csv };

Dataset read_dataset(const std::string& path, DataFormat format);
void write_dataset(const Dataset& ds, const std::string& path);

// Affine map between an original-unit interval and [-1, 1]. Degenerate
// intervals (hi == lo) map to 0 and back to the constant.
struct AffineMap {
    double lo = 0.0;
    double hi = 0.0;

    bool degenerate() const { return !(hi > lo); }
    float to_unit(double v) const {
        if (degenerate()) return 0.0f;
        return static_cast<float>((v - lo) / (hi - lo) * 2.0 - 1.0);
    }
    double from_unit(double u) const {
        if (degenerate()) return lo;
        return lo + (u + 1.0) / 2.0 * (hi - lo);
    }
};

struct Normalizer {
    std::array<AffineMap, 3> axes;
    AffineMap time;
    std::vector<AffineMap> variables;  // M
};

struct NormalizedData {
    std::vector<Point3> coords;  // N, in [-1,1]^3
    std::vector<float> times;    // T, in [-1,1]
    std::vector<float> values;   // T*N*M, in [-1,1]
};

std::pair<NormalizedData, Normalizer> normalize(const Dataset& ds);

enum class FieldKind { Trig, Bump, Discontinuity, Contrast };

FieldKind parse_field_kind(const std::string& name);
std::string field_kind_name(FieldKind kind);
int field_variable_count(FieldKind kind);  // Contrast emits two variables

// Closed-form value of one field variable at (x,y,z,t) in the unit box.
// `component` selects the variable within a multi-variable kind.
double field_value(FieldKind kind, int component, double x, double y, double z, double t);

struct SynthSpec {
    std::uint32_t point_count = 1000;
    std::uint32_t timesteps = 1;
    std::vector<FieldKind> fields{FieldKind::Trig};
    double noise = 0.0;
    std::uint64_t seed = 0;
};

// Points uniform in the unit box, analytic fields evaluated exactly,
// deterministic in the seed.
Dataset synthesize(const SynthSpec& spec);

// Value payload only (N*T*M 32-bit floats): the compression-ratio numerator.
std::uint64_t raw_size_bytes(const Dataset& ds);

// Hash over N, T, M, names and bounds; used to pair models with datasets.
std::uint64_t dataset_fingerprint_hash(const Dataset& ds);

}  // namespace mcinr
