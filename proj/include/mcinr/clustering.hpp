#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mcinr {

using Point3 = std::array<float, 3>;

// Identifies one node of the split forest: tree index (top-level cluster)
// plus node index within that tree. Node 0 is always the tree root.
struct LeafKey {
    std::int32_t tree = 0;
    std::int32_t node = 0;

    auto operator<=>(const LeafKey&) const = default;
    std::string str() const { return std::to_string(tree) + ":" + std::to_string(node); }
    std::uint64_t packed() const {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(tree)) << 32) |
               static_cast<std::uint32_t>(node);
    }
};

struct SplitNode {
    Point3 centroid{};
    std::int32_t left = -1;   // -1 means leaf
    std::int32_t right = -1;
    std::int32_t depth = 0;   // 0 at the tree root

    bool is_leaf() const { return left < 0; }
};

// Top-level k-means centroids plus one binary split tree per cluster.
// Routing is hierarchical: nearest root centroid, then repeatedly the nearer
// of the two child sub-centroids; ties go to the lower index.
struct ClusterPartition {
    std::vector<std::vector<SplitNode>> trees;

    int tree_count() const { return static_cast<int>(trees.size()); }
    const SplitNode& node(LeafKey k) const { return trees[k.tree][k.node]; }
    bool is_leaf(LeafKey k) const { return node(k).is_leaf(); }
    int depth_of(LeafKey k) const { return node(k).depth; }

    // Terminal leaves in deterministic order: tree ascending, preorder within.
    std::vector<LeafKey> leaves() const;

    LeafKey assign(const Point3& query) const;
};

struct KMeansResult {
    std::vector<Point3> centroids;
    std::vector<std::int32_t> assignment;
    std::vector<double> objective_trace;  // sum of squared distances per Lloyd iteration
};

// Lloyd's algorithm with k-means++ seeding. Empty clusters are repaired by
// reseeding to the point farthest from its current centroid. Throws if K
// exceeds the number of distinct points.
KMeansResult lloyd_kmeans(std::span<const Point3> points, int k, int max_iters, std::uint64_t seed);

ClusterPartition kmeans_partition(std::span<const Point3> points, int k, int max_iters,
                                  std::uint64_t seed);

struct SplitOutcome {
    bool performed = false;
    LeafKey left{};
    LeafKey right{};
    std::string refusal;  // set when performed == false
};

// k-means with k=2 on the leaf's own points; children partition the parent
// exactly. Refused (not an error) for leaves with < 2 distinct points or at
// the depth cap.
SplitOutcome split_cluster(ClusterPartition& partition, LeafKey leaf,
                           std::span<const Point3> leaf_points, int max_split_depth,
                           std::uint64_t seed);

std::size_t count_distinct(std::span<const Point3> points);

}  // namespace mcinr
