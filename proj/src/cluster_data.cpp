#include "mcinr/cluster_data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mcinr {

ClusterData ClusterData::subset(std::span<const std::uint32_t> local_points) const {
    ClusterData out;
    out.times = times;
    out.var_count = var_count;
    out.coords.reserve(local_points.size());
    out.global_index.reserve(local_points.size());
    for (std::uint32_t p : local_points) {
        out.coords.push_back(coords[p]);
        out.global_index.push_back(global_index[p]);
    }
    const std::size_t pc = point_count();
    out.values.resize(local_points.size() * times.size() * var_count);
    std::size_t dst = 0;
    for (std::size_t t = 0; t < times.size(); ++t) {
        for (std::uint32_t p : local_points) {
            const float* src = values.data() + (t * pc + p) * var_count;
            std::copy(src, src + var_count, out.values.data() + dst);
            dst += var_count;
        }
    }
    return out;
}

void gather_records(const ClusterData& data, std::span<const std::uint32_t> records,
                    Mat<float>& coords, Mat<float>& targets) {
    const std::size_t b = records.size();
    const std::size_t m = data.var_count;
    const std::size_t pc = data.point_count();
    coords = Mat<float>(b, 4);
    targets = Mat<float>(b, m);
    for (std::size_t i = 0; i < b; ++i) {
        const std::uint32_t r = records[i];
        const std::uint32_t t = r / pc;
        const std::uint32_t n = r % pc;
        float* crow = coords.row(i);
        crow[0] = data.coords[n][0];
        crow[1] = data.coords[n][1];
        crow[2] = data.coords[n][2];
        crow[3] = data.times[t];
        const float* src = data.values.data() + (std::size_t(t) * pc + n) * m;
        std::copy(src, src + m, targets.row(i));
    }
}

double batch_loss_and_grads(const NetworkParamsF& net, const ClusterData& data,
                            std::span<const std::uint32_t> records, std::size_t chunk_size,
                            NetworkParamsF* grads) {
    if (records.empty()) throw std::runtime_error("batch_loss_and_grads: empty record set");
    const std::size_t m = data.var_count;
    const double denom = static_cast<double>(records.size()) * static_cast<double>(m);
    double sq_sum = 0.0;
    Mat<float> coords, targets;
    for (std::size_t start = 0; start < records.size(); start += chunk_size) {
        const std::size_t count = std::min(chunk_size, records.size() - start);
        gather_records(data, records.subspan(start, count), coords, targets);
        ForwardTapes<float> tapes;
        Mat<float> pred = forward(net, coords, grads ? &tapes : nullptr);
        Mat<float> err(count, m);
        for (std::size_t i = 0; i < err.size(); ++i) {
            const double d = double(pred.data[i]) - double(targets.data[i]);
            sq_sum += d * d;
            err.data[i] = static_cast<float>(2.0 * d / denom);
        }
        if (grads) {
            NetworkParamsF g = backward(net, tapes, err);
            auto acc = param_spans(*grads);
            auto inc = param_spans_const(g);
            for (std::size_t k = 0; k < acc.size(); ++k) {
                for (std::size_t i = 0; i < acc[k].size(); ++i) acc[k][i] += inc[k][i];
            }
        }
    }
    return sq_sum / denom;
}

ResidualReport full_residual(const NetworkParamsF& net, const ClusterData& data,
                             std::size_t chunk_size) {
    const std::size_t m = data.var_count;
    const std::size_t total = data.record_count();
    std::vector<std::uint32_t> records(total);
    std::iota(records.begin(), records.end(), 0u);
    ResidualReport rep;
    rep.per_variable.assign(m, 0.0);
    Mat<float> coords, targets;
    for (std::size_t start = 0; start < total; start += chunk_size) {
        const std::size_t count = std::min(chunk_size, total - start);
        gather_records(data, std::span<const std::uint32_t>(records).subspan(start, count), coords,
                       targets);
        Mat<float> pred = forward(net, coords);
        for (std::size_t i = 0; i < count; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                const double d = double(pred.at(i, j)) - double(targets.at(i, j));
                rep.per_variable[j] += d * d;
            }
        }
    }
    const double records_d = static_cast<double>(total);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        rep.per_variable[j] /= records_d;
        sum += rep.per_variable[j];
    }
    rep.aggregate = sum / static_cast<double>(m);
    return rep;
}

}  // namespace mcinr
