#include "mcinr/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>

#include "mcinr/rng.hpp"

namespace mcinr {

namespace {

double sq_dist(const Point3& a, const Point3& b) {
    const double dx = double(a[0]) - b[0];
    const double dy = double(a[1]) - b[1];
    const double dz = double(a[2]) - b[2];
    return dx * dx + dy * dy + dz * dz;
}

int nearest_centroid(std::span<const Point3> centroids, const Point3& p) {
    int best = 0;
    double best_d = sq_dist(centroids[0], p);
    for (int i = 1; i < static_cast<int>(centroids.size()); ++i) {
        const double d = sq_dist(centroids[i], p);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

std::vector<Point3> kmeanspp_seed(std::span<const Point3> points, int k, std::mt19937& rng) {
    std::vector<Point3> centroids;
    centroids.reserve(k);
    std::uniform_int_distribution<std::size_t> first(0, points.size() - 1);
    centroids.push_back(points[first(rng)]);
    std::vector<double> d2(points.size());
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            double best = sq_dist(points[i], centroids[0]);
            for (std::size_t c = 1; c < centroids.size(); ++c) {
                best = std::min(best, sq_dist(points[i], centroids[c]));
            }
            d2[i] = best;
            total += best;
        }
        std::size_t chosen;
        if (total <= 0.0) {
            // All remaining mass at existing centroids: pick any point not
            // already a centroid (distinct-count precondition guarantees one).
            chosen = first(rng);
        } else {
            std::uniform_real_distribution<double> u(0.0, total);
            double target = u(rng);
            chosen = points.size() - 1;
            for (std::size_t i = 0; i < points.size(); ++i) {
                target -= d2[i];
                if (target <= 0.0) {
                    chosen = i;
                    break;
                }
            }
        }
        centroids.push_back(points[chosen]);
    }
    return centroids;
}

}  // namespace

std::size_t count_distinct(std::span<const Point3> points) {
    std::set<std::array<float, 3>> uniq(points.begin(), points.end());
    return uniq.size();
}

KMeansResult lloyd_kmeans(std::span<const Point3> points, int k, int max_iters, std::uint64_t seed) {
    if (k < 1) throw std::runtime_error("kmeans: K must be >= 1");
    if (points.empty()) throw std::runtime_error("kmeans: empty point set");
    if (static_cast<std::size_t>(k) > count_distinct(points)) {
        throw std::runtime_error("kmeans: K = " + std::to_string(k) +
                                 " exceeds distinct point count " +
                                 std::to_string(count_distinct(points)));
    }
    std::mt19937 rng = make_rng(seed);
    KMeansResult res;
    res.centroids = kmeanspp_seed(points, k, rng);
    res.assignment.assign(points.size(), 0);

    double prev_objective = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iters; ++iter) {
        // Assignment step, tracking the Eq-style objective.
        bool changed = false;
        double objective = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const int c = nearest_centroid(res.centroids, points[i]);
            objective += sq_dist(points[i], res.centroids[c]);
            if (c != res.assignment[i]) {
                res.assignment[i] = c;
                changed = true;
            }
        }
        res.objective_trace.push_back(objective);
        if (objective > prev_objective * (1.0 + 1e-9) + 1e-12) {
            throw std::runtime_error("kmeans: objective increased between iterations");
        }
        prev_objective = objective;
        if (!changed && iter > 0) break;

        // Update step.
        std::vector<std::array<double, 3>> sums(k, {0.0, 0.0, 0.0});
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            const int c = res.assignment[i];
            sums[c][0] += points[i][0];
            sums[c][1] += points[i][1];
            sums[c][2] += points[i][2];
            counts[c] += 1;
        }
        std::vector<bool> reseeded(points.size(), false);
        for (int c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Reseed to the point farthest from its current centroid.
                double best = -1.0;
                std::size_t pick = 0;
                for (std::size_t i = 0; i < points.size(); ++i) {
                    if (reseeded[i]) continue;
                    const double d = sq_dist(points[i], res.centroids[res.assignment[i]]);
                    if (d > best) {
                        best = d;
                        pick = i;
                    }
                }
                res.centroids[c] = points[pick];
                reseeded[pick] = true;
                prev_objective = std::numeric_limits<double>::infinity();
            } else {
                res.centroids[c] = {static_cast<float>(sums[c][0] / counts[c]),
                                    static_cast<float>(sums[c][1] / counts[c]),
                                    static_cast<float>(sums[c][2] / counts[c])};
            }
        }
    }
    // Final assignment pass so assignments match the returned centroids under
    // the same nearest-centroid rule that ClusterPartition::assign uses.
    for (std::size_t i = 0; i < points.size(); ++i) {
        res.assignment[i] = nearest_centroid(res.centroids, points[i]);
    }
    return res;
}

std::vector<LeafKey> ClusterPartition::leaves() const {
    std::vector<LeafKey> out;
    for (std::int32_t t = 0; t < tree_count(); ++t) {
        std::vector<std::int32_t> stack{0};
        while (!stack.empty()) {
            const std::int32_t n = stack.back();
            stack.pop_back();
            const SplitNode& nd = trees[t][n];
            if (nd.is_leaf()) {
                out.push_back({t, n});
            } else {
                stack.push_back(nd.right);
                stack.push_back(nd.left);
            }
        }
    }
    return out;
}

LeafKey ClusterPartition::assign(const Point3& query) const {
    if (trees.empty()) throw std::runtime_error("assign: empty partition");
    std::int32_t best_tree = 0;
    double best_d = sq_dist(trees[0][0].centroid, query);
    for (std::int32_t t = 1; t < tree_count(); ++t) {
        const double d = sq_dist(trees[t][0].centroid, query);
        if (d < best_d) {
            best_d = d;
            best_tree = t;
        }
    }
    std::int32_t n = 0;
    const auto& tree = trees[best_tree];
    while (!tree[n].is_leaf()) {
        const double dl = sq_dist(tree[tree[n].left].centroid, query);
        const double dr = sq_dist(tree[tree[n].right].centroid, query);
        n = (dr < dl) ? tree[n].right : tree[n].left;  // tie -> left (lower id)
    }
    return {best_tree, n};
}

ClusterPartition kmeans_partition(std::span<const Point3> points, int k, int max_iters,
                                  std::uint64_t seed) {
    KMeansResult km = lloyd_kmeans(points, k, max_iters, seed);
    ClusterPartition part;
    part.trees.resize(k);
    for (int c = 0; c < k; ++c) {
        part.trees[c].push_back(SplitNode{km.centroids[c], -1, -1, 0});
    }
    return part;
}

SplitOutcome split_cluster(ClusterPartition& partition, LeafKey leaf,
                           std::span<const Point3> leaf_points, int max_split_depth,
                           std::uint64_t seed) {
    SplitOutcome out;
    if (!partition.is_leaf(leaf)) {
        throw std::runtime_error("split_cluster: " + leaf.str() + " is not a leaf");
    }
    if (partition.depth_of(leaf) >= max_split_depth) {
        out.refusal = "terminal leaf: depth cap " + std::to_string(max_split_depth) + " reached";
        return out;
    }
    if (count_distinct(leaf_points) < 2) {
        out.refusal = "terminal leaf: fewer than 2 distinct points";
        return out;
    }
    KMeansResult km = lloyd_kmeans(leaf_points, 2, 100, seed);
    auto& tree = partition.trees[leaf.tree];
    const std::int32_t depth = tree[leaf.node].depth;
    const std::int32_t l = static_cast<std::int32_t>(tree.size());
    tree.push_back(SplitNode{km.centroids[0], -1, -1, depth + 1});
    const std::int32_t r = static_cast<std::int32_t>(tree.size());
    tree.push_back(SplitNode{km.centroids[1], -1, -1, depth + 1});
    tree[leaf.node].left = l;
    tree[leaf.node].right = r;
    out.performed = true;
    out.left = {leaf.tree, l};
    out.right = {leaf.tree, r};
    return out;
}

}  // namespace mcinr
