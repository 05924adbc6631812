#include "mcinr/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mcinr/adam.hpp"
#include "mcinr/rng.hpp"

namespace mcinr {

namespace {
constexpr std::uint64_t kKMeansSalt = 0x6b6d65616e73ULL;
constexpr std::uint64_t kInitSalt = 0x696e6974ULL;
constexpr std::uint64_t kFineTuneSalt = 0x66696e65ULL;
constexpr std::uint64_t kSplitSalt = 0x73706c6974ULL;

std::mutex g_log_mutex;

void log_line(const std::string& msg) {
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << msg << "\n";
}
}  // namespace

void TrainConfig::validate() const {
    if (!(initial_lr > 0.0)) throw std::runtime_error("config: initial_lr must be > 0");
    if (!(lr_decay_factor > 0.0)) throw std::runtime_error("config: lr_decay_factor must be > 0");
    if (lr_decay_interval < 1) throw std::runtime_error("config: lr_decay_interval must be >= 1");
    if (convergence_patience < 1) throw std::runtime_error("config: patience must be >= 1");
    if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) {
        throw std::runtime_error("config: sample_fraction must be in (0, 1]");
    }
    if (!(residual_threshold > 0.0)) throw std::runtime_error("config: tau must be > 0");
    if (max_split_depth < 0) throw std::runtime_error("config: max_split_depth must be >= 0");
    if (batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
    if (k < 1) throw std::runtime_error("config: K must be >= 1");
    if (max_epochs < 1) throw std::runtime_error("config: max_epochs must be >= 1");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    if (epoch < 0) throw std::runtime_error("lr_at_epoch: epoch must be >= 0");
    return cfg.initial_lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_interval);
}

bool should_split(double residual, double tau, int depth, int max_split_depth, bool splittable) {
    return residual > tau && depth < max_split_depth && splittable;
}

int ClusterJobResult::first_epoch_below(double threshold) const {
    for (std::size_t e = 0; e < loss_trace.size(); ++e) {
        if (loss_trace[e] <= threshold) return static_cast<int>(e);
    }
    return -1;
}

ClusterJobResult fine_tune_cluster(const ClusterData& data, const NetworkParamsF& init,
                                   const TrainConfig& cfg, LeafKey leaf) {
    cfg.validate();
    if (data.point_count() == 0) throw std::runtime_error("fine_tune_cluster: empty cluster");
    const std::size_t total_records = data.record_count();
    const std::size_t sample_n =
        std::max<std::size_t>(1, static_cast<std::size_t>(
                                     std::ceil(cfg.sample_fraction * double(total_records))));

    ClusterJobResult res;
    res.leaf = leaf;
    res.params = init;
    res.point_count = data.point_count();

    NetworkParamsF net = init;
    auto params = param_spans(net);
    AdamState<float> opt = AdamState<float>::like(params);
    std::mt19937 rng = make_rng(derive_seed(cfg.seed, kFineTuneSalt, leaf.packed()));

    std::vector<std::uint32_t> record_pool(total_records);
    std::iota(record_pool.begin(), record_pool.end(), 0u);
    ConvergenceTracker tracker(cfg.convergence_patience);
    const std::size_t m = data.var_count;

    Mat<float> coords, targets;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const float lr = static_cast<float>(lr_at_epoch(cfg, epoch));
        // Draw this epoch's 30% sample without replacement.
        for (std::size_t i = 0; i < sample_n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, total_records - 1);
            std::swap(record_pool[i], record_pool[pick(rng)]);
        }
        double sq_sum = 0.0;
        for (std::size_t start = 0; start < sample_n; start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, sample_n - start);
            gather_records(data, std::span<const std::uint32_t>(record_pool).subspan(start, count),
                           coords, targets);
            ForwardTapes<float> tapes;
            Mat<float> pred = forward(net, coords, &tapes);
            Mat<float> err(count, m);
            const double denom = static_cast<double>(count) * static_cast<double>(m);
            for (std::size_t i = 0; i < err.size(); ++i) {
                const double d = double(pred.data[i]) - double(targets.data[i]);
                sq_sum += d * d;
                err.data[i] = static_cast<float>(2.0 * d / denom);
            }
            NetworkParamsF grads = backward(net, tapes, err);
            adam_step<float>(params, param_spans_const(grads), opt, lr);
        }
        const double epoch_loss = sq_sum / (static_cast<double>(sample_n) * double(m));
        if (!std::isfinite(epoch_loss)) {
            throw std::runtime_error("fine_tune_cluster: non-finite loss at epoch " +
                                     std::to_string(epoch) + " (leaf " + leaf.str() +
                                     "), best so far " + std::to_string(res.best_loss));
        }
        res.loss_trace.push_back(epoch_loss);
        res.epochs_run = epoch + 1;
        const bool improved = epoch_loss < tracker.best_loss;
        const bool stop = tracker.record(epoch_loss);
        if (improved) {
            res.best_loss = epoch_loss;
            res.params = net;
        }
        if (cfg.verbose && (epoch % cfg.log_every == 0 || stop)) {
            std::ostringstream os;
            os << "[leaf " << leaf.str() << "] epoch " << epoch << " loss " << epoch_loss
               << " lr " << lr;
            log_line(os.str());
        }
        if (stop) break;
    }

    // Split decisions use a separate full-cluster residual pass on 100% of
    // the records, with the best-epoch parameters.
    ResidualReport rep = full_residual(res.params, data, cfg.batch_size);
    res.residual = rep.aggregate;
    res.per_variable_residual = std::move(rep.per_variable);
    return res;
}

namespace {

void recluster_recursive(const ClusterData& data, const NetworkParamsF& init,
                         ClusterPartition& partition, LeafKey leaf, const TrainConfig& cfg,
                         const TrainHooks* hooks, std::vector<ClusterJobResult>& out) {
    ClusterJobResult res = fine_tune_cluster(data, init, cfg, leaf);
    const bool depth_ok = partition.depth_of(leaf) < cfg.max_split_depth;
    const bool splittable = count_distinct(data.coords) >= 2;
    if (!should_split(res.residual, cfg.residual_threshold, partition.depth_of(leaf),
                      cfg.max_split_depth, splittable)) {
        if (res.residual > cfg.residual_threshold) {
            res.split_refused = true;
            res.split_refusal = !depth_ok ? "depth cap reached" : "fewer than 2 distinct points";
            if (cfg.verbose) {
                log_line("[leaf " + leaf.str() + "] residual " + std::to_string(res.residual) +
                         " above tau but split refused: " + res.split_refusal);
            }
        }
        out.push_back(std::move(res));
        return;
    }
    SplitOutcome split = split_cluster(partition, leaf, data.coords, cfg.max_split_depth,
                                       derive_seed(cfg.seed, kSplitSalt, leaf.packed()));
    if (!split.performed) {
        res.split_refused = true;
        res.split_refusal = split.refusal;
        out.push_back(std::move(res));
        return;
    }
    res.split_performed = true;
    if (cfg.verbose) {
        log_line("[leaf " + leaf.str() + "] residual " + std::to_string(res.residual) +
                 " > tau; split into " + split.left.str() + " and " + split.right.str());
    }

    // Route the parent's points through the updated tree; each child inherits
    // a copy of the parent's fine-tuned parameters.
    std::vector<std::uint32_t> left_points, right_points;
    for (std::uint32_t p = 0; p < data.point_count(); ++p) {
        const LeafKey target = partition.assign(data.coords[p]);
        if (target == split.left) {
            left_points.push_back(p);
        } else {
            right_points.push_back(p);
        }
    }
    if (left_points.empty() || right_points.empty()) {
        throw std::runtime_error("split produced an empty child at leaf " + leaf.str());
    }
    NetworkParamsF left_init = res.params;
    NetworkParamsF right_init = res.params;
    if (hooks && hooks->on_split) hooks->on_split(res.params, left_init, right_init);
    out.push_back(std::move(res));  // parent result retained for reporting; not a terminal leaf

    recluster_recursive(data.subset(left_points), left_init, partition, split.left, cfg, hooks, out);
    recluster_recursive(data.subset(right_points), right_init, partition, split.right, cfg, hooks,
                        out);
}

}  // namespace

std::vector<ClusterJobResult> train_with_reclustering(const ClusterData& data,
                                                      const NetworkParamsF& init,
                                                      ClusterPartition& partition, LeafKey leaf,
                                                      const TrainConfig& cfg,
                                                      const TrainHooks* hooks) {
    std::vector<ClusterJobResult> all;
    recluster_recursive(data, init, partition, leaf, cfg, hooks, all);
    // Keep only terminal leaves: parents that split are reported separately.
    std::vector<ClusterJobResult> terminal;
    for (auto& r : all) {
        if (!r.split_performed) terminal.push_back(std::move(r));
    }
    return terminal;
}

PipelineResult run_pipeline(const Dataset& ds, const PipelineConfig& cfg) {
    cfg.train.validate();
    ds.validate();
    auto norm_pair = normalize(ds);
    NormalizedData& norm_data = norm_pair.first;
    Normalizer& normalizer = norm_pair.second;

    PipelineResult out;
    out.model.partition = kmeans_partition(norm_data.coords, cfg.train.k, cfg.train.kmeans_max_iters,
                                           derive_seed(cfg.train.seed, kKMeansSalt));
    ClusterPartition& partition = out.model.partition;

    // Group points by top-level cluster using the same routing rule decoding
    // will use.
    std::vector<std::vector<std::uint32_t>> members(cfg.train.k);
    for (std::uint32_t n = 0; n < ds.point_count; ++n) {
        members[partition.assign(norm_data.coords[n]).tree].push_back(n);
    }
    for (int c = 0; c < cfg.train.k; ++c) {
        if (members[c].empty()) {
            throw std::runtime_error("top-level cluster " + std::to_string(c) +
                                     " is empty after k-means");
        }
    }

    NetworkShape shape = cfg.shape;
    shape.var_count = static_cast<int>(ds.variable_count);

    struct Job {
        int tree;
        std::vector<ClusterJobResult> results;
        std::vector<double> meta_trace;
        std::string error;
    };
    std::vector<Job> jobs(cfg.train.k);
    for (int c = 0; c < cfg.train.k; ++c) jobs[c].tree = c;

    auto run_job = [&](Job& job) {
        const int c = job.tree;
        const LeafKey root{c, 0};
        ClusterData data;
        data.var_count = ds.variable_count;
        data.times = norm_data.times;
        data.global_index = members[c];
        data.coords.reserve(members[c].size());
        for (std::uint32_t n : members[c]) data.coords.push_back(norm_data.coords[n]);
        data.values.resize(members[c].size() * ds.timestep_count * ds.variable_count);
        std::size_t dst = 0;
        for (std::uint32_t t = 0; t < ds.timestep_count; ++t) {
            for (std::uint32_t n : members[c]) {
                const float* src =
                    norm_data.values.data() + (std::size_t(t) * ds.point_count + n) * ds.variable_count;
                std::copy(src, src + ds.variable_count, data.values.data() + dst);
                dst += ds.variable_count;
            }
        }

        NetworkParamsF init =
            init_params<float>(shape, derive_seed(cfg.train.seed, kInitSalt, root.packed()));
        if (cfg.use_meta) {
            MetaConfig meta = cfg.meta;
            meta.seed = cfg.train.seed;
            MetaInit mi = meta_train(data, init, meta, root, cfg.train.batch_size);
            init = std::move(mi.params);
            job.meta_trace = std::move(mi.meta_loss_trace);
        }
        job.results = train_with_reclustering(data, init, partition, root, cfg.train, nullptr);
    };

    int workers = cfg.train.worker_count;
    if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min(workers, cfg.train.k));

    std::atomic<int> next{0};
    auto worker_main = [&]() {
        while (true) {
            const int idx = next.fetch_add(1);
            if (idx >= cfg.train.k) break;
            try {
                run_job(jobs[idx]);
            } catch (const std::exception& e) {
                jobs[idx].error = e.what();
            }
        }
    };
    if (workers == 1) {
        worker_main();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker_main);
        for (auto& th : pool) th.join();
    }

    std::string failures;
    for (const Job& job : jobs) {
        if (!job.error.empty()) {
            failures += "cluster " + std::to_string(job.tree) + ": " + job.error + "\n";
        }
    }
    if (!failures.empty()) {
        throw std::runtime_error("pipeline failed:\n" + failures);
    }

    // Assemble the model; everything ordered by leaf key for determinism.
    EncodedModel& model = out.model;
    model.point_count = ds.point_count;
    model.timestep_count = ds.timestep_count;
    model.variable_count = ds.variable_count;
    model.variable_names = ds.variable_names;
    model.bounds_hash = dataset_fingerprint_hash(ds);
    model.norm = normalizer;
    model.shape = shape;
    for (Job& job : jobs) {
        out.meta_traces.push_back(std::move(job.meta_trace));
        for (ClusterJobResult& r : job.results) out.results.push_back(std::move(r));
    }
    std::sort(out.results.begin(), out.results.end(),
              [](const ClusterJobResult& a, const ClusterJobResult& b) { return a.leaf < b.leaf; });
    for (ClusterJobResult& r : out.results) {
        model.networks.emplace_back(r.leaf, r.params);
        ClusterStats st;
        st.leaf = r.leaf;
        st.point_count = r.point_count;
        st.aggregate_mse = r.residual;
        st.per_variable_mse = r.per_variable_residual;
        model.stats.push_back(std::move(st));
    }
    model.validate();

    out.point_leaf.resize(ds.point_count);
    for (std::uint32_t n = 0; n < ds.point_count; ++n) {
        out.point_leaf[n] = partition.assign(norm_data.coords[n]);
    }
    return out;
}

std::string run_report(const PipelineResult& result, const Dataset& ds) {
    std::ostringstream os;
    os.precision(10);
    os << "leaves=" << result.results.size() << "\n";
    os << "raw_bytes=" << raw_size_bytes(ds) << "\n";
    std::uint64_t total_params = 0;
    for (const auto& r : result.results) {
        total_params += param_count(r.params);
    }
    os << "total_parameters=" << total_params << "\n";
    for (const auto& r : result.results) {
        const std::string p = "leaf." + std::to_string(r.leaf.tree) + "." +
                              std::to_string(r.leaf.node) + ".";
        os << p << "points=" << r.point_count << "\n";
        os << p << "epochs=" << r.epochs_run << "\n";
        os << p << "best_loss=" << r.best_loss << "\n";
        os << p << "residual=" << r.residual << "\n";
        os << p << "split_refused=" << (r.split_refused ? 1 : 0) << "\n";
        if (r.split_refused) os << p << "split_refusal=" << r.split_refusal << "\n";
    }
    return os.str();
}

}  // namespace mcinr
