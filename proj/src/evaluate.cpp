#include "mcinr/evaluate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mcinr {

namespace {

double mse_of(std::span<const float> gt, std::span<const float> pred) {
    if (gt.size() != pred.size()) {
        throw std::runtime_error("metric: array sizes differ (" + std::to_string(gt.size()) +
                                 " vs " + std::to_string(pred.size()) + ")");
    }
    if (gt.empty()) throw std::runtime_error("metric: empty arrays");
    double s = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double d = double(gt[i]) - double(pred[i]);
        s += d * d;
    }
    return s / double(gt.size());
}

// Decodes queries [begin, end) into rows of `out`.
void decode_range(const EncodedModel& model, std::span<const Query4> queries, std::size_t begin,
                  std::size_t end, Mat<float>& out, std::vector<std::uint8_t>& oob,
                  std::map<LeafKey, const NetworkParamsF*>& networks) {
    const Normalizer& norm = model.norm;
    const std::size_t m = model.variable_count;
    // Bucket by leaf so each network runs one batch.
    std::map<LeafKey, std::vector<std::size_t>> buckets;
    std::vector<Point3> npos(end - begin);
    std::vector<float> ntime(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        const Query4& q = queries[i];
        bool outside = false;
        Point3 p;
        for (int a = 0; a < 3; ++a) {
            p[a] = norm.axes[a].to_unit(q[a]);
            if (p[a] < -1.0f || p[a] > 1.0f) outside = true;
        }
        float t = norm.time.to_unit(q[3]);
        if (t < -1.0f || t > 1.0f) outside = true;
        // Clamp into the encoding domain; flagged as extrapolation.
        for (int a = 0; a < 3; ++a) p[a] = std::clamp(p[a], -1.0f, 1.0f);
        t = std::clamp(t, -1.0f, 1.0f);
        oob[i] = outside ? 1 : 0;
        npos[i - begin] = p;
        ntime[i - begin] = t;
        buckets[model.partition.assign(p)].push_back(i);
    }
    for (const auto& [leaf, rows] : buckets) {
        const NetworkParamsF* net = networks.at(leaf);
        Mat<float> coords(rows.size(), 4);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::size_t local = rows[r] - begin;
            coords.at(r, 0) = npos[local][0];
            coords.at(r, 1) = npos[local][1];
            coords.at(r, 2) = npos[local][2];
            coords.at(r, 3) = ntime[local];
        }
        Mat<float> pred = forward(*net, coords);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t j = 0; j < m; ++j) {
                out.at(rows[r], j) =
                    static_cast<float>(norm.variables[j].from_unit(pred.at(r, j)));
            }
        }
    }
}

}  // namespace

DecodeResult decode(const EncodedModel& model, std::span<const Query4> queries, int thread_count) {
    model.validate();
    DecodeResult res;
    res.values = Mat<float>(queries.size(), model.variable_count);
    res.out_of_bounds.assign(queries.size(), 0);
    if (queries.empty()) return res;

    std::map<LeafKey, const NetworkParamsF*> networks;
    for (const auto& [key, net] : model.networks) networks[key] = &net;

    const std::size_t chunk = 8192;  // fixed so results do not depend on thread count
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (std::size_t begin = 0; begin < queries.size(); begin += chunk) {
        ranges.emplace_back(begin, std::min(begin + chunk, queries.size()));
    }
    const int workers =
        std::max(1, std::min<int>(thread_count, static_cast<int>(ranges.size())));
    if (workers == 1) {
        for (const auto& [b, e] : ranges) {
            decode_range(model, queries, b, e, res.values, res.out_of_bounds, networks);
        }
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            while (true) {
                const std::size_t idx = next.fetch_add(1);
                if (idx >= ranges.size()) break;
                decode_range(model, queries, ranges[idx].first, ranges[idx].second, res.values,
                             res.out_of_bounds, networks);
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (std::uint8_t f : res.out_of_bounds) res.out_of_bounds_count += f;
    return res;
}

double psnr(std::span<const float> gt, std::span<const float> pred, double range, bool* capped) {
    if (capped) *capped = false;
    const double mse = mse_of(gt, pred);
    if (!(range > 0.0) || mse <= 0.0) {
        if (capped) *capped = true;
        return kPsnrCap;
    }
    return 10.0 * std::log10(range * range / mse);
}

double nrmse(std::span<const float> gt, std::span<const float> pred, double range) {
    const double mse = mse_of(gt, pred);
    if (!(range > 0.0)) return 0.0;
    return std::sqrt(mse) / range;
}

double r_squared(std::span<const float> gt, std::span<const float> pred, bool* defined) {
    if (gt.size() != pred.size() || gt.empty()) {
        throw std::runtime_error("r_squared: array sizes differ or empty");
    }
    double mean = 0.0;
    for (float v : gt) mean += v;
    mean /= double(gt.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const double r = double(gt[i]) - double(pred[i]);
        const double t = double(gt[i]) - mean;
        ss_res += r * r;
        ss_tot += t * t;
    }
    if (ss_tot <= 0.0) {
        if (defined) *defined = false;
        return 0.0;
    }
    if (defined) *defined = true;
    return 1.0 - ss_res / ss_tot;
}

MetricReport evaluate_model(const EncodedModel& model, const Dataset& ds, int thread_count) {
    std::string why;
    if (!fingerprint_matches(model, ds, &why)) {
        throw std::runtime_error("model does not match dataset: " + why);
    }
    const std::uint32_t n = ds.point_count, t_count = ds.timestep_count, m = ds.variable_count;

    std::vector<Query4> queries;
    queries.reserve(std::size_t(n) * t_count);
    for (std::uint32_t t = 0; t < t_count; ++t) {
        for (std::uint32_t p = 0; p < n; ++p) {
            queries.push_back({ds.coords[p][0], ds.coords[p][1], ds.coords[p][2], ds.times[t]});
        }
    }
    DecodeResult dec = decode(model, queries, thread_count);

    MetricReport rep;
    rep.variable_count = m;
    rep.timestep_count = t_count;
    rep.evaluated_records = std::size_t(n) * t_count;
    rep.variable_range.resize(m);
    for (std::uint32_t j = 0; j < m; ++j) {
        rep.variable_range[j] = ds.value_bounds[j][1] - ds.value_bounds[j][0];
    }
    rep.cells.resize(std::size_t(m) * t_count);

    std::vector<float> gt_col(n), pred_col(n);
    double norm_sq_sum = 0.0;
    for (std::uint32_t j = 0; j < m; ++j) {
        const AffineMap& vmap = model.norm.variables[j];
        for (std::uint32_t t = 0; t < t_count; ++t) {
            for (std::uint32_t p = 0; p < n; ++p) {
                gt_col[p] = ds.value(t, p, j);
                pred_col[p] = dec.values.at(std::size_t(t) * n + p, j);
                const double dn = double(vmap.to_unit(pred_col[p])) - double(vmap.to_unit(gt_col[p]));
                norm_sq_sum += dn * dn;
            }
            MetricCell& cell = rep.cells[std::size_t(j) * t_count + t];
            cell.psnr = psnr(gt_col, pred_col, rep.variable_range[j], &cell.psnr_capped);
            cell.nrmse = nrmse(gt_col, pred_col, rep.variable_range[j]);
            cell.r2 = r_squared(gt_col, pred_col, &cell.r2_defined);
        }
    }
    rep.normalized_mse = norm_sq_sum / (double(rep.evaluated_records) * double(m));

    double psnr_sum = 0.0, nrmse_sum = 0.0, r2_sum = 0.0;
    std::uint32_t r2_cells = 0;
    for (const MetricCell& c : rep.cells) {
        psnr_sum += c.psnr;
        nrmse_sum += c.nrmse;
        if (c.psnr_capped) ++rep.psnr_capped_cells;
        if (c.r2_defined) {
            r2_sum += c.r2;
            ++r2_cells;
        } else {
            ++rep.r2_undefined_cells;
        }
    }
    const double cells_d = double(rep.cells.size());
    rep.mean_psnr = psnr_sum / cells_d;
    rep.mean_nrmse = nrmse_sum / cells_d;
    rep.mean_r2 = r2_cells ? r2_sum / double(r2_cells) : 0.0;
    return rep;
}

std::string MetricReport::table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "variable  timestep      PSNR     NRMSE        R2\n";
    for (std::uint32_t j = 0; j < variable_count; ++j) {
        for (std::uint32_t t = 0; t < timestep_count; ++t) {
            const MetricCell& c = cell(j, t);
            os << std::setw(8) << j << "  " << std::setw(8) << t << "  " << std::setw(8) << c.psnr
               << (c.psnr_capped ? "*" : " ") << std::setw(9) << c.nrmse << "  ";
            if (c.r2_defined) {
                os << std::setw(8) << c.r2;
            } else {
                os << "   undef";
            }
            os << "\n";
        }
    }
    os << "mean      (all)     " << std::setw(8) << mean_psnr << " " << std::setw(9) << mean_nrmse
       << "  " << std::setw(8) << mean_r2 << "\n";
    if (psnr_capped_cells) os << "* PSNR capped at " << kPsnrCap << " dB (zero MSE)\n";
    return os.str();
}

std::string MetricReport::key_values() const {
    std::ostringstream os;
    os.precision(10);
    os << "mean_psnr=" << mean_psnr << "\n"
       << "mean_nrmse=" << mean_nrmse << "\n"
       << "mean_r2=" << mean_r2 << "\n"
       << "normalized_mse=" << normalized_mse << "\n"
       << "evaluated_records=" << evaluated_records << "\n"
       << "psnr_capped_cells=" << psnr_capped_cells << "\n"
       << "r2_undefined_cells=" << r2_undefined_cells << "\n";
    for (std::uint32_t j = 0; j < variable_count; ++j) {
        for (std::uint32_t t = 0; t < timestep_count; ++t) {
            const MetricCell& c = cell(j, t);
            const std::string p = "var" + std::to_string(j) + ".t" + std::to_string(t) + ".";
            os << p << "psnr=" << c.psnr << "\n"
               << p << "nrmse=" << c.nrmse << "\n"
               << p << "r2=" << (c.r2_defined ? std::to_string(c.r2) : std::string("undef")) << "\n";
        }
    }
    return os.str();
}

void export_error_map(const Dataset& ds, const EncodedModel& model, const std::string& path,
                      ErrorMapFormat format, int thread_count) {
    std::string why;
    if (!fingerprint_matches(model, ds, &why)) {
        throw std::runtime_error("error map refused, model does not match dataset: " + why);
    }
    const std::uint32_t n = ds.point_count, t_count = ds.timestep_count, m = ds.variable_count;
    std::vector<Query4> queries;
    queries.reserve(std::size_t(n) * t_count);
    for (std::uint32_t t = 0; t < t_count; ++t) {
        for (std::uint32_t p = 0; p < n; ++p) {
            queries.push_back({ds.coords[p][0], ds.coords[p][1], ds.coords[p][2], ds.times[t]});
        }
    }
    DecodeResult dec = decode(model, queries, thread_count);

    if (format == ErrorMapFormat::Csv) {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("cannot create error map: " + path);
        os << "x,y,z,t,variable,abs_error\n";
        os.precision(9);
        for (std::uint32_t t = 0; t < t_count; ++t) {
            for (std::uint32_t p = 0; p < n; ++p) {
                for (std::uint32_t j = 0; j < m; ++j) {
                    const double err = std::abs(double(ds.value(t, p, j)) -
                                                double(dec.values.at(std::size_t(t) * n + p, j)));
                    os << ds.coords[p][0] << ',' << ds.coords[p][1] << ',' << ds.coords[p][2] << ','
                       << ds.times[t] << ',' << ds.variable_names[j] << ',' << err << "\n";
                }
            }
        }
        if (!os) throw std::runtime_error("write failed: " + path);
    } else {
        Dataset delta = ds;
        for (std::uint32_t t = 0; t < t_count; ++t) {
            for (std::uint32_t p = 0; p < n; ++p) {
                for (std::uint32_t j = 0; j < m; ++j) {
                    const float err = std::abs(ds.value(t, p, j) -
                                               dec.values.at(std::size_t(t) * n + p, j));
                    delta.values[delta.value_index(t, p, j)] = err;
                }
            }
        }
        delta.recompute_value_bounds();
        write_dataset(delta, path);
    }
}

}  // namespace mcinr
