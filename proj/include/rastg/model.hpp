#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rastg/autodiff.hpp"
#include "rastg/graph.hpp"
#include "rastg/ndarray.hpp"

namespace rastg::model {

struct BlockConfig {
    int in_channels = 0;
    int out_channels = 0;
    int temporal_kernel = 9; // odd
    int temporal_stride = 1; // 1 or 2
    bool residual = true;    // the first block runs without the residual path
};

struct AttentionConfig {
    int heads = 4;
    int key_dim = 64;
    int value_dim = 64;
    int model_dim = 256;
};

struct ModelConfig {
    graph::LayoutVariant layout = graph::LayoutVariant::Basic25;
    int in_channels = 3;   // 3 coordinates, 7 with quaternion channels
    int input_frames = 288;
    int partitions = 3;    // hop-distance partitions {self, 1-hop, 2-hop}
    std::vector<BlockConfig> blocks; // empty -> default_schedule(in_channels)
    AttentionConfig attention;
    int head_hidden = 64;
    double head_bias_init = 0.5; // center of the normalized score range
    double score_scale = 50.0;   // raw questionnaire total <-> model output
    std::uint64_t init_seed = 42;

    // Ten blocks: 64 x4, 128 x3 (first strided), 256 x3 (first strided),
    // giving the 256-channel, T/4-frame final map.
    static std::vector<BlockConfig> default_schedule(int in_channels, int temporal_kernel = 9);
    void finalize(); // fill block/attention defaults and validate
};

// Partition-summed graph convolution with the block's internal ReLU,
// S(X) = relu(sum_k adj_k X w_k). x is (N,T,V,C_in).
nd::Var spatial_gcn(const nd::Var& x, const nd::Var& adj, const nd::Var& w);

// One ST-GCN block: graph convolution + BN + ReLU, temporal convolution +
// BN, residual add, ReLU. Owns its edge mask (per layer, per partition).
class StgcnBlock {
public:
    StgcnBlock(const BlockConfig& config, int partitions, int joints, std::uint64_t seed,
               const std::string& prefix);

    nd::Var forward(const nd::Var& x, const nd::NdArray& binary_adj, bool train);
    void collect(std::vector<nd::Parameter*>& out);

    BlockConfig cfg;
    nd::Parameter w;      // (K, C_in, C_out)
    nd::Parameter mask;   // (K, V, V), initialized to ones
    nd::Parameter u;      // (C_out, C_out, k_t)
    nd::Parameter u_bias; // (C_out)
    nd::Parameter bn1_gamma, bn1_beta, bn2_gamma, bn2_beta;
    nd::Parameter res_w;  // (C_out, C_in, 1) when projecting
    bool has_res_proj = false;
    nd::BnState bn1, bn2;
};

// Per-joint multi-head attention over the frame axis, with a residual
// connection around the block. No cross-joint mixing.
class TemporalAttention {
public:
    TemporalAttention(const AttentionConfig& config, std::uint64_t seed);

    nd::Var forward(const nd::Var& x); // (N,T,V,C) -> (N,T,V,C)
    void collect(std::vector<nd::Parameter*>& out);

    AttentionConfig cfg;
    nd::Parameter wq, wk, wv; // (C, heads*key/value_dim)
    nd::Parameter wo;         // (heads*value_dim, C)
};

struct ForwardResult {
    nd::Var scores;      // (N, 1), normalized score space
    nd::Var feature_map; // (N, T', V, C) internal layout, post-attention
};

class RastGModel {
public:
    explicit RastGModel(ModelConfig cfg);

    // Internal-layout entry: x is (N, T, V, C).
    ForwardResult forward(const nd::Var& x, bool train);
    // Paper-order entry: x is (N, C, T, V, M) with M = 1.
    ForwardResult forward_nctvm(const nd::NdArray& x, bool train);

    // Pre-pooling feature map in the reported order (N*M, C, T', V).
    static nd::NdArray feature_map_nctv(const ForwardResult& r);

    std::vector<nd::Parameter*> parameters();
    void zero_grad();

    const ModelConfig& config() const { return cfg_; }
    const graph::JointLayout& layout() const { return layout_; }
    const nd::NdArray& adjacency_binary() const { return adjacency_.binary; }
    std::vector<StgcnBlock>& blocks() { return blocks_; }
    TemporalAttention& attention() { return attn_; }

    // Trainable + buffer state, for best-checkpoint retention.
    struct Snapshot {
        std::vector<nd::NdArray> params;
        std::vector<nd::NdArray> buffer_means;
        std::vector<nd::NdArray> buffer_vars;
        std::vector<std::int64_t> counters;
    };
    Snapshot snapshot();
    void restore(const Snapshot& s);

    void save(const std::filesystem::path& path);
    static RastGModel load(const std::filesystem::path& path);

private:
    ModelConfig cfg_;
    graph::JointLayout layout_;
    graph::PartitionedAdjacency adjacency_;
    std::vector<StgcnBlock> blocks_;
    TemporalAttention attn_;
    nd::Parameter head_w1_, head_b1_, head_w2_, head_b2_;

    std::vector<nd::BnState*> bn_states();
};

} // namespace rastg::model
