#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rastg/autodiff.hpp"
#include "rastg/ndarray.hpp"

namespace rastg::graph {

enum class LayoutVariant { Basic25, Extended27 };

LayoutVariant parse_variant(const std::string& s);
std::string variant_name(LayoutVariant v);

// Skeleton tree: ordered joint names plus parent-child edges. The root is
// the kinematic origin; the neck joint anchors the torso-length scale.
struct JointLayout {
    LayoutVariant variant;
    std::vector<std::string> joint_names;
    std::vector<std::pair<int, int>> edges; // (parent, child) indices
    int root = 0;

    int joint_count() const { return static_cast<int>(joint_names.size()); }
    int index_of(const std::string& name) const; // -1 if absent
    int neck() const;
    void validate() const; // tree, connected, indices in range
};

JointLayout build_layout(LayoutVariant variant);

// Re-index a layout: perm[new_index] = old_index.
JointLayout permuted_layout(const JointLayout& layout, const std::vector<int>& perm);

// Layout files let datasets and checkpoints agree on joint indexing.
void save_layout(const JointLayout& layout, const std::filesystem::path& path);
JointLayout load_layout(const std::filesystem::path& path);

// Hop-partitioned binary adjacency. Partition 0 is reserved for
// self-connections (all zeros here; the identity enters in normalize()),
// partition k holds exactly the pairs at shortest-path distance k.
struct PartitionedAdjacency {
    int partitions = 0;          // K
    nd::NdArray binary;          // (K, V, V) 0/1
};

PartitionedAdjacency build_partitions(const JointLayout& layout, int k);

// All-pairs shortest-path distances over the skeleton tree (BFS).
std::vector<std::vector<int>> hop_distances(const JointLayout& layout);

// A_tilde_k = D_k^{-1/2} (A_k o E_k + I) D_k^{-1/2}, differentiable in the
// mask E (K,V,V). Throws NumericError if any degree is not positive.
nd::Var normalize_adjacency(const nd::NdArray& binary, const nd::Var& mask);

// Plain-value convenience (mask of ones, no tape).
nd::NdArray normalize_adjacency_plain(const nd::NdArray& binary);

} // namespace rastg::graph
