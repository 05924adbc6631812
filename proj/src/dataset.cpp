#include "mcinr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mcinr/rng.hpp"

namespace mcinr {

namespace {

constexpr char kMagic[8] = {'M', 'C', 'I', 'N', 'R', 'D', 'S', '1'};
constexpr double kPi = std::numbers::pi;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error(std::string("truncated dataset file while reading ") + what);
    }
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    write_u32(os, u);
}

float read_f32(std::istream& is, const char* what) {
    const std::uint32_t u = read_u32(is, what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    write_u32(os, static_cast<std::uint32_t>(u));
    write_u32(os, static_cast<std::uint32_t>(u >> 32));
}

double read_f64(std::istream& is, const char* what) {
    const std::uint64_t lo = read_u32(is, what);
    const std::uint64_t hi = read_u32(is, what);
    const std::uint64_t u = lo | (hi << 32);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

double parse_number(const std::string& field, std::size_t line_no) {
    double v = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end) {
        throw std::runtime_error("csv: line " + std::to_string(line_no) + ": bad number '" + field + "'");
    }
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        std::string field = line.substr(start, pos == std::string::npos ? pos : pos - start);
        // Trim surrounding whitespace/CR.
        while (!field.empty() && (field.back() == '\r' || field.back() == ' ' || field.back() == '\t'))
            field.pop_back();
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.erase(0, 1);
        out.push_back(std::move(field));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

Dataset read_native(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open dataset file: " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
        throw std::runtime_error("not an MCDS dataset (bad magic): " + path);
    }
    Dataset ds;
    ds.point_count = read_u32(is, "point count");
    ds.timestep_count = read_u32(is, "timestep count");
    ds.variable_count = read_u32(is, "variable count");
    if (ds.point_count == 0 || ds.timestep_count == 0 || ds.variable_count == 0) {
        throw std::runtime_error("dataset dimensions must all be >= 1: " + path);
    }
    ds.variable_names.resize(ds.variable_count);
    for (auto& name : ds.variable_names) {
        const std::uint32_t len = read_u32(is, "variable name length");
        name.resize(len);
        if (len && !is.read(name.data(), len)) {
            throw std::runtime_error("truncated dataset file while reading variable name");
        }
    }
    for (auto& axis : ds.coord_bounds) {
        axis[0] = read_f64(is, "coordinate bounds");
        axis[1] = read_f64(is, "coordinate bounds");
    }
    ds.times.resize(ds.timestep_count);
    for (auto& t : ds.times) t = read_f32(is, "timestep values");
    ds.coords.resize(ds.point_count);
    for (auto& p : ds.coords) {
        p[0] = read_f32(is, "coordinates");
        p[1] = read_f32(is, "coordinates");
        p[2] = read_f32(is, "coordinates");
    }
    const std::size_t total = std::size_t(ds.point_count) * ds.timestep_count * ds.variable_count;
    ds.values.resize(total);
    for (auto& v : ds.values) v = read_f32(is, "values");
    char extra;
    if (is.read(&extra, 1)) {
        throw std::runtime_error("trailing bytes after MCDS payload: " + path);
    }
    ds.recompute_value_bounds();  // coordinate bounds come from the file
    ds.validate();
    return ds;
}

Dataset read_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open dataset file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("csv: empty file: " + path);
    auto header = split_csv_line(line);
    const std::vector<std::string> expected{"x", "y", "z", "t"};
    if (header.size() < 5) {
        throw std::runtime_error("csv: header must be x,y,z,t,<var...>, got '" + line + "'");
    }
    for (int i = 0; i < 4; ++i) {
        if (header[i] != expected[i]) {
            throw std::runtime_error("csv: header column " + std::to_string(i + 1) + " must be '" +
                                     expected[i] + "', got '" + header[i] + "'");
        }
    }
    const std::size_t m = header.size() - 4;

    struct Row {
        Point3 p;
        float t;
        std::vector<float> vals;
        std::size_t line_no;
    };
    std::vector<Row> rows;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != header.size()) {
            throw std::runtime_error("csv: line " + std::to_string(line_no) + " has " +
                                     std::to_string(fields.size()) + " columns, expected " +
                                     std::to_string(header.size()));
        }
        Row r;
        r.p = {static_cast<float>(parse_number(fields[0], line_no)),
               static_cast<float>(parse_number(fields[1], line_no)),
               static_cast<float>(parse_number(fields[2], line_no))};
        r.t = static_cast<float>(parse_number(fields[3], line_no));
        r.vals.resize(m);
        for (std::size_t j = 0; j < m; ++j) {
            r.vals[j] = static_cast<float>(parse_number(fields[4 + j], line_no));
        }
        r.line_no = line_no;
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw std::runtime_error("csv: no data rows: " + path);

    // Point identity by exact coordinate match, in first-appearance order;
    // timesteps sorted ascending.
    std::map<std::array<float, 3>, std::uint32_t> point_ids;
    std::vector<Point3> coords;
    std::vector<float> times;
    for (const auto& r : rows) {
        if (point_ids.emplace(r.p, static_cast<std::uint32_t>(coords.size())).second) {
            coords.push_back(r.p);
        }
        times.push_back(r.t);
    }
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    std::map<float, std::uint32_t> time_ids;
    for (std::uint32_t i = 0; i < times.size(); ++i) time_ids[times[i]] = i;

    Dataset ds;
    ds.point_count = static_cast<std::uint32_t>(coords.size());
    ds.timestep_count = static_cast<std::uint32_t>(times.size());
    ds.variable_count = static_cast<std::uint32_t>(m);
    ds.variable_names.assign(header.begin() + 4, header.end());
    ds.coords = std::move(coords);
    ds.times = std::move(times);
    ds.values.assign(std::size_t(ds.point_count) * ds.timestep_count * ds.variable_count,
                     std::numeric_limits<float>::quiet_NaN());
    std::vector<bool> seen(std::size_t(ds.point_count) * ds.timestep_count, false);
    for (const auto& r : rows) {
        const std::uint32_t n = point_ids.at(r.p);
        const std::uint32_t t = time_ids.at(r.t);
        const std::size_t cell = std::size_t(t) * ds.point_count + n;
        if (seen[cell]) {
            throw std::runtime_error("csv: line " + std::to_string(r.line_no) +
                                     ": duplicate (point, timestep) record");
        }
        seen[cell] = true;
        for (std::size_t j = 0; j < m; ++j) ds.values[cell * m + j] = r.vals[j];
    }
    for (std::uint32_t t = 0; t < ds.timestep_count; ++t) {
        for (std::uint32_t n = 0; n < ds.point_count; ++n) {
            if (!seen[std::size_t(t) * ds.point_count + n]) {
                std::ostringstream msg;
                msg << "csv: missing record for point (" << ds.coords[n][0] << ", "
                    << ds.coords[n][1] << ", " << ds.coords[n][2] << ") at t = " << ds.times[t];
                throw std::runtime_error(msg.str());
            }
        }
    }
    ds.recompute_bounds();
    ds.validate();
    return ds;
}

}  // namespace

void Dataset::recompute_value_bounds() {
    value_bounds.assign(variable_count, {std::numeric_limits<double>::infinity(),
                                         -std::numeric_limits<double>::infinity()});
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::size_t m = i % variable_count;
        value_bounds[m][0] = std::min(value_bounds[m][0], double(values[i]));
        value_bounds[m][1] = std::max(value_bounds[m][1], double(values[i]));
    }
}

void Dataset::recompute_bounds() {
    for (int a = 0; a < 3; ++a) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (const auto& p : coords) {
            lo = std::min(lo, double(p[a]));
            hi = std::max(hi, double(p[a]));
        }
        coord_bounds[a] = {lo, hi};
    }
    recompute_value_bounds();
}

void Dataset::validate() const {
    if (point_count == 0 || timestep_count == 0 || variable_count == 0) {
        throw std::runtime_error("dataset dimensions must all be >= 1");
    }
    if (coords.size() != point_count || times.size() != timestep_count ||
        variable_names.size() != variable_count ||
        values.size() != std::size_t(point_count) * timestep_count * variable_count) {
        throw std::runtime_error("dataset arrays inconsistent with declared dimensions");
    }
    for (const auto& p : coords) {
        for (float c : p) {
            if (!std::isfinite(c)) throw std::runtime_error("non-finite coordinate in dataset");
        }
    }
    for (float t : times) {
        if (!std::isfinite(t)) throw std::runtime_error("non-finite timestep in dataset");
    }
    for (float v : values) {
        if (!std::isfinite(v)) throw std::runtime_error("non-finite value in dataset");
    }
}

Dataset read_dataset(const std::string& path, DataFormat format) {
    return format == DataFormat::Native ? read_native(path) : read_csv(path);
}

void write_dataset(const Dataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot create dataset file: " + path);
    os.write(kMagic, 8);
    write_u32(os, ds.point_count);
    write_u32(os, ds.timestep_count);
    write_u32(os, ds.variable_count);
    for (const auto& name : ds.variable_names) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
    }
    for (const auto& axis : ds.coord_bounds) {
        write_f64(os, axis[0]);
        write_f64(os, axis[1]);
    }
    for (float t : ds.times) write_f32(os, t);
    for (const auto& p : ds.coords) {
        write_f32(os, p[0]);
        write_f32(os, p[1]);
        write_f32(os, p[2]);
    }
    for (float v : ds.values) write_f32(os, v);
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::pair<NormalizedData, Normalizer> normalize(const Dataset& ds) {
    Normalizer norm;
    for (int a = 0; a < 3; ++a) norm.axes[a] = {ds.coord_bounds[a][0], ds.coord_bounds[a][1]};
    const auto [tmin, tmax] = std::minmax_element(ds.times.begin(), ds.times.end());
    norm.time = {double(*tmin), double(*tmax)};
    norm.variables.resize(ds.variable_count);
    for (std::uint32_t m = 0; m < ds.variable_count; ++m) {
        norm.variables[m] = {ds.value_bounds[m][0], ds.value_bounds[m][1]};
    }
    NormalizedData out;
    out.coords.resize(ds.point_count);
    for (std::uint32_t n = 0; n < ds.point_count; ++n) {
        for (int a = 0; a < 3; ++a) out.coords[n][a] = norm.axes[a].to_unit(ds.coords[n][a]);
    }
    out.times.resize(ds.timestep_count);
    for (std::uint32_t t = 0; t < ds.timestep_count; ++t) out.times[t] = norm.time.to_unit(ds.times[t]);
    out.values.resize(ds.values.size());
    for (std::size_t i = 0; i < ds.values.size(); ++i) {
        out.values[i] = norm.variables[i % ds.variable_count].to_unit(ds.values[i]);
    }
    return {std::move(out), std::move(norm)};
}

FieldKind parse_field_kind(const std::string& name) {
    if (name == "trig") return FieldKind::Trig;
    if (name == "bump") return FieldKind::Bump;
    if (name == "discontinuity") return FieldKind::Discontinuity;
    if (name == "contrast") return FieldKind::Contrast;
    throw std::runtime_error("unknown field kind: '" + name +
                             "' (expected trig, bump, discontinuity or contrast)");
}

std::string field_kind_name(FieldKind kind) {
    switch (kind) {
        case FieldKind::Trig: return "trig";
        case FieldKind::Bump: return "bump";
        case FieldKind::Discontinuity: return "discontinuity";
        case FieldKind::Contrast: return "contrast";
    }
    return "?";
}

int field_variable_count(FieldKind kind) { return kind == FieldKind::Contrast ? 2 : 1; }

double field_value(FieldKind kind, int component, double x, double y, double z, double t) {
    switch (kind) {
        case FieldKind::Trig:
            return std::sin(kPi * x) * std::sin(kPi * y) * std::sin(kPi * z) *
                   (0.6 + 0.4 * std::cos(kPi * t));
        case FieldKind::Bump: {
            const double cx = 0.3 + 0.4 * t;
            const double dx = x - cx, dy = y - 0.5, dz = z - 0.5;
            const double sigma = 0.3;
            return std::exp(-(dx * dx + dy * dy + dz * dz) / (2.0 * sigma * sigma));
        }
        case FieldKind::Discontinuity:
            // Two materials separated by the plane x = 0.45.
            if (x < 0.45) return 2.0 + 0.3 * std::sin(kPi * y) * std::cos(kPi * t);
            return -2.0 + 0.3 * std::cos(kPi * z) * std::cos(kPi * t);
        case FieldKind::Contrast:
            // Variable pair with contrasting frequency and scale.
            if (component == 0) return std::sin(kPi * x) * std::sin(kPi * y) * std::sin(kPi * z);
            return 0.04 * std::sin(6.0 * kPi * x) * std::sin(6.0 * kPi * y) * std::cos(kPi * t);
    }
    throw std::runtime_error("field_value: bad kind");
}

Dataset synthesize(const SynthSpec& spec) {
    if (spec.fields.empty()) throw std::runtime_error("synthesize: at least one field kind required");
    if (spec.point_count == 0 || spec.timesteps == 0) {
        throw std::runtime_error("synthesize: point_count and timesteps must be >= 1");
    }
    Dataset ds;
    ds.point_count = spec.point_count;
    ds.timestep_count = spec.timesteps;
    std::uint32_t m = 0;
    for (FieldKind k : spec.fields) m += field_variable_count(k);
    ds.variable_count = m;
    for (std::size_t f = 0; f < spec.fields.size(); ++f) {
        const FieldKind k = spec.fields[f];
        for (int c = 0; c < field_variable_count(k); ++c) {
            std::string name = field_kind_name(k) + std::to_string(f);
            if (field_variable_count(k) > 1) name += (c == 0 ? "_low" : "_high");
            ds.variable_names.push_back(std::move(name));
        }
    }

    std::mt19937 rng = make_rng(derive_seed(spec.seed, 0x706f696e74ULL));  // point stream
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    ds.coords.resize(spec.point_count);
    for (auto& p : ds.coords) {
        p = {static_cast<float>(unit(rng)), static_cast<float>(unit(rng)),
             static_cast<float>(unit(rng))};
    }
    ds.times.resize(spec.timesteps);
    for (std::uint32_t t = 0; t < spec.timesteps; ++t) {
        ds.times[t] = spec.timesteps == 1 ? 0.0f : static_cast<float>(double(t) / (spec.timesteps - 1));
    }

    std::mt19937 noise_rng = make_rng(derive_seed(spec.seed, 0x6e6f697365ULL));  // noise stream
    std::normal_distribution<double> gauss(0.0, 1.0);
    ds.values.resize(std::size_t(ds.point_count) * ds.timestep_count * ds.variable_count);
    for (std::uint32_t t = 0; t < ds.timestep_count; ++t) {
        for (std::uint32_t n = 0; n < ds.point_count; ++n) {
            const Point3& p = ds.coords[n];
            std::size_t col = 0;
            for (FieldKind k : spec.fields) {
                for (int c = 0; c < field_variable_count(k); ++c) {
                    double v = field_value(k, c, p[0], p[1], p[2], ds.times[t]);
                    if (spec.noise > 0.0) v += spec.noise * gauss(noise_rng);
                    ds.values[ds.value_index(t, n, col++)] = static_cast<float>(v);
                }
            }
        }
    }
    ds.recompute_bounds();
    ds.validate();
    return ds;
}

std::uint64_t raw_size_bytes(const Dataset& ds) {
    return std::uint64_t(ds.point_count) * ds.timestep_count * ds.variable_count * 4;
}

std::uint64_t dataset_fingerprint_hash(const Dataset& ds) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    auto mix = [&h](const void* data, std::size_t len) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    const std::uint32_t dims[3] = {ds.point_count, ds.timestep_count, ds.variable_count};
    mix(dims, sizeof(dims));
    for (const auto& name : ds.variable_names) {
        const std::uint32_t len = static_cast<std::uint32_t>(name.size());
        mix(&len, 4);
        mix(name.data(), name.size());
    }
    for (const auto& axis : ds.coord_bounds) mix(axis.data(), sizeof(double) * 2);
    for (const auto& vb : ds.value_bounds) mix(vb.data(), sizeof(double) * 2);
    return h;
}

}  // namespace mcinr
