#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mcinr/cluster_data.hpp"
#include "mcinr/clustering.hpp"
#include "mcinr/dataset.hpp"
#include "mcinr/meta.hpp"
#include "mcinr/model_store.hpp"
#include "mcinr/network.hpp"

namespace mcinr {

struct TrainConfig {
    double initial_lr = 5e-5;
    double lr_decay_factor = 0.92;
    int lr_decay_interval = 30;        // epochs
    int convergence_patience = 30;     // epochs without improvement
    double sample_fraction = 0.30;     // of (point, timestep) records per epoch
    double residual_threshold = 5e-4;  // tau, normalized-space MSE
    int max_split_depth = 3;
    std::size_t batch_size = 16384;
    int k = 20;
    std::uint64_t seed = 0;
    int worker_count = 0;  // 0 = hardware concurrency
    int max_epochs = 100000;
    int kmeans_max_iters = 100;
    bool verbose = false;
    int log_every = 25;

    void validate() const;
};

double lr_at_epoch(const TrainConfig& cfg, int epoch);

// The paper-style stop rule: stop once the best loss has not improved for
// `patience` consecutive epochs.
struct ConvergenceTracker {
    int patience;
    double best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int last_epoch = -1;

    explicit ConvergenceTracker(int patience_epochs) : patience(patience_epochs) {}

    // Records one epoch loss; returns true when training should stop.
    bool record(double loss) {
        ++last_epoch;
        if (loss < best_loss) {
            best_loss = loss;
            best_epoch = last_epoch;
        }
        return last_epoch - best_epoch >= patience;
    }
};

// Split fires iff the residual exceeds tau, depth is below the cap, and the
// leaf has enough distinct geometry to split.
bool should_split(double residual, double tau, int depth, int max_split_depth, bool splittable);

struct ClusterJobResult {
    LeafKey leaf;
    NetworkParamsF params;  // parameters from the best-loss epoch
    int epochs_run = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<double> loss_trace;  // per-epoch training loss (30% sample)
    double residual = 0.0;           // full-cluster MSE, normalized space
    std::vector<double> per_variable_residual;
    bool split_performed = false;
    bool split_refused = false;
    std::string split_refusal;
    std::uint64_t point_count = 0;

    // First epoch whose loss reached `threshold`, or -1.
    int first_epoch_below(double threshold) const;
};

struct TrainHooks {
    // Called right after a split with the parent's fine-tuned parameters and
    // both children's initial parameters.
    std::function<void(const NetworkParamsF&, const NetworkParamsF&, const NetworkParamsF&)>
        on_split;
};

ClusterJobResult fine_tune_cluster(const ClusterData& data, const NetworkParamsF& init,
                                   const TrainConfig& cfg, LeafKey leaf);

// Fine-tune, then recursively split while the residual stays above tau;
// children inherit the parent's fine-tuned parameters. Returns one result
// per resulting terminal leaf.
std::vector<ClusterJobResult> train_with_reclustering(const ClusterData& data,
                                                      const NetworkParamsF& init,
                                                      ClusterPartition& partition, LeafKey leaf,
                                                      const TrainConfig& cfg,
                                                      const TrainHooks* hooks = nullptr);

struct PipelineConfig {
    NetworkShape shape;  // var_count is overwritten from the dataset
    TrainConfig train;
    MetaConfig meta;
    bool use_meta = true;
};

struct PipelineResult {
    EncodedModel model;
    std::vector<ClusterJobResult> results;  // sorted by leaf key
    std::vector<LeafKey> point_leaf;        // dataset point index -> terminal leaf
    std::vector<std::vector<double>> meta_traces;  // per top-level cluster
};

// normalize -> k-means -> per-cluster (meta-init, fine-tune, re-cluster) on a
// worker pool -> assemble the encoded model. Deterministic in (dataset,
// config, seed) regardless of worker_count.
PipelineResult run_pipeline(const Dataset& ds, const PipelineConfig& cfg);

// Plain-text key=value run report (per-leaf results + totals).
std::string run_report(const PipelineResult& result, const Dataset& ds);

}  // namespace mcinr
