#include "rastg/model.hpp"

#include <cmath>

#include "rastg/error.hpp"
#include "rastg/rng.hpp"

namespace rastg::model {

using nd::NdArray;
using nd::Parameter;
using nd::Shape;
using nd::Var;

std::vector<BlockConfig> ModelConfig::default_schedule(int in_channels, int temporal_kernel) {
    auto b = [&](int ci, int co, int stride, bool res) {
        BlockConfig c;
        c.in_channels = ci;
        c.out_channels = co;
        c.temporal_kernel = temporal_kernel;
        c.temporal_stride = stride;
        c.residual = res;
        return c;
    };
    return {
        b(in_channels, 64, 1, false),
        b(64, 64, 1, true),
        b(64, 64, 1, true),
        b(64, 64, 1, true),
        b(64, 128, 2, true),
        b(128, 128, 1, true),
        b(128, 128, 1, true),
        b(128, 256, 2, true),
        b(256, 256, 1, true),
        b(256, 256, 1, true),
    };
}

void ModelConfig::finalize() {
    if (in_channels != 3 && in_channels != 7) {
        throw ConfigError("model input channels must be 3 (coordinates) or 7 (+quaternion)");
    }
    if (partitions < 1) throw ConfigError("partition count must be >= 1");
    if (input_frames < 1) throw ConfigError("input_frames must be >= 1");
    if (blocks.empty()) blocks = default_schedule(in_channels);
    if (blocks.front().in_channels != in_channels) {
        throw ConfigError("first block in_channels must match model in_channels");
    }
    if (blocks.front().residual) {
        throw ConfigError("the first ST-GCN block must be residual-free");
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        if (b.temporal_kernel < 1 || b.temporal_kernel % 2 == 0) {
            throw ConfigError("block temporal kernel must be odd and positive");
        }
        if (b.temporal_stride != 1 && b.temporal_stride != 2) {
            throw ConfigError("block temporal stride must be 1 or 2");
        }
        if (i > 0 && blocks[i - 1].out_channels != b.in_channels) {
            throw ConfigError("block channel chain mismatch at block " + std::to_string(i));
        }
    }
    const int c = blocks.back().out_channels;
    if (attention.model_dim != c) attention.model_dim = c;
    if (attention.heads < 1 || c % attention.heads != 0) {
        throw ConfigError("attention heads must divide the model dim");
    }
    if (attention.key_dim * attention.heads != c) attention.key_dim = c / attention.heads;
    if (attention.value_dim * attention.heads != c) attention.value_dim = c / attention.heads;
    if (head_hidden < 1) throw ConfigError("head hidden width must be >= 1");
    if (score_scale <= 0) throw ConfigError("score scale must be positive");
}

namespace {

NdArray normal_init(Shape shape, double stddev, Rng& rng) {
    NdArray a(std::move(shape));
    double* p = a.data();
    for (std::int64_t i = 0; i < a.size(); ++i) p[i] = rng.normal(0.0, stddev);
    return a;
}

NdArray uniform_init(Shape shape, double limit, Rng& rng) {
    NdArray a(std::move(shape));
    double* p = a.data();
    for (std::int64_t i = 0; i < a.size(); ++i) p[i] = rng.uniform(-limit, limit);
    return a;
}

} // namespace

Var spatial_gcn(const Var& x, const Var& adj, const Var& w) {
    return nd::relu(nd::spatial_gcn_sum(x, adj, w));
}

StgcnBlock::StgcnBlock(const BlockConfig& config, int partitions, int joints, std::uint64_t seed,
                       const std::string& prefix)
    : cfg(config) {
    Rng rng(seed);
    const int k = partitions, ci = cfg.in_channels, co = cfg.out_channels, kt = cfg.temporal_kernel;
    // fan-in counts the partition sum for the graph conv and the kernel taps
    // for the temporal conv
    w = Parameter(prefix + ".w", normal_init(Shape{k, ci, co}, std::sqrt(2.0 / (k * ci)), rng));
    mask = Parameter(prefix + ".mask", NdArray::full(Shape{k, joints, joints}, 1.0));
    u = Parameter(prefix + ".u", normal_init(Shape{co, co, kt}, std::sqrt(2.0 / (co * kt)), rng));
    u_bias = Parameter(prefix + ".u_bias", NdArray(Shape{co}));
    bn1_gamma = Parameter(prefix + ".bn1.gamma", NdArray::full(Shape{co}, 1.0));
    bn1_beta = Parameter(prefix + ".bn1.beta", NdArray(Shape{co}));
    bn2_gamma = Parameter(prefix + ".bn2.gamma", NdArray::full(Shape{co}, 1.0));
    bn2_beta = Parameter(prefix + ".bn2.beta", NdArray(Shape{co}));
    has_res_proj = cfg.residual && (ci != co || cfg.temporal_stride != 1);
    if (has_res_proj) {
        res_w = Parameter(prefix + ".res_w", normal_init(Shape{co, ci, 1}, std::sqrt(2.0 / ci), rng));
    }
}

Var StgcnBlock::forward(const Var& x, const NdArray& binary_adj, bool train) {
    if (x->value.dim(3) != cfg.in_channels) {
        throw ShapeError("block expects " + std::to_string(cfg.in_channels) + " channels, got " +
                         std::to_string(x->value.dim(3)));
    }
    const int pad = cfg.temporal_kernel / 2;
    Var adj = graph::normalize_adjacency(binary_adj, mask.var());
    Var s = nd::spatial_gcn_sum(x, adj, w.var());
    s = nd::batch_norm_last(s, bn1_gamma.var(), bn1_beta.var(), bn1, train, 1e-5, 0.1,
                            /*fuse_relu=*/true);
    Var c = nd::temporal_conv_ntvc(s, u.var(), u_bias.var(), cfg.temporal_stride, pad);
    c = nd::batch_norm_last(c, bn2_gamma.var(), bn2_beta.var(), bn2, train);
    if (!cfg.residual) return nd::relu(c);
    if (!has_res_proj) return nd::add_relu(c, x);
    Var zb = nd::constant(NdArray(Shape{cfg.out_channels}));
    Var r = nd::temporal_conv_ntvc(x, res_w.var(), zb, cfg.temporal_stride, 0);
    return nd::add_relu(c, r);
}

void StgcnBlock::collect(std::vector<Parameter*>& out) {
    out.push_back(&w);
    out.push_back(&mask);
    out.push_back(&u);
    out.push_back(&u_bias);
    out.push_back(&bn1_gamma);
    out.push_back(&bn1_beta);
    out.push_back(&bn2_gamma);
    out.push_back(&bn2_beta);
    if (has_res_proj) out.push_back(&res_w);
}

TemporalAttention::TemporalAttention(const AttentionConfig& config, std::uint64_t seed)
    : cfg(config) {
    Rng rng(seed);
    const int c = cfg.model_dim;
    const int dk = cfg.heads * cfg.key_dim;
    const int dv = cfg.heads * cfg.value_dim;
    const double ql = std::sqrt(6.0 / (c + dk));
    const double vl = std::sqrt(6.0 / (c + dv));
    wq = Parameter("attn.wq", uniform_init(Shape{c, dk}, ql, rng));
    wk = Parameter("attn.wk", uniform_init(Shape{c, dk}, ql, rng));
    wv = Parameter("attn.wv", uniform_init(Shape{c, dv}, vl, rng));
    wo = Parameter("attn.wo", uniform_init(Shape{dv, c}, vl, rng));
}

Var TemporalAttention::forward(const Var& x) {
    const auto& sh = x->value.shape();
    if (x->value.rank() != 4 || sh[3] != cfg.model_dim) {
        throw ShapeError("attention expects (N,T,V,C) with C=" + std::to_string(cfg.model_dim) +
                         ", got " + nd::shape_str(sh));
    }
    const std::int64_t n = sh[0], t = sh[1], v = sh[2];
    const std::int64_t h = cfg.heads, dk = cfg.key_dim, dv = cfg.value_dim;

    // (N,T,V,C) -> (N*V, T, C): per-joint temporal sequences
    Var xj = nd::reshape(nd::transpose(x, {0, 2, 1, 3}), Shape{n * v, t, cfg.model_dim});

    auto heads = [&](const Var& m, std::int64_t d) {
        // (NV, T, h*d) -> (NV*h, T, d)
        Var r = nd::reshape(m, Shape{n * v, t, h, d});
        r = nd::transpose(r, {0, 2, 1, 3});
        return nd::reshape(r, Shape{n * v * h, t, d});
    };
    Var q = heads(nd::matmul(xj, wq.var()), dk);
    Var k = heads(nd::matmul(xj, wk.var()), dk);
    Var val = heads(nd::matmul(xj, wv.var()), dv);

    Var scores = nd::scalar_mul(nd::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
    Var attn = nd::softmax(scores, -1);
    Var o = nd::matmul(attn, val); // (NV*h, T, dv)

    o = nd::reshape(o, Shape{n * v, h, t, dv});
    o = nd::transpose(o, {0, 2, 1, 3});
    o = nd::reshape(o, Shape{n * v, t, h * dv});
    Var proj = nd::matmul(o, wo.var()); // (NV, T, C)

    proj = nd::reshape(proj, Shape{n, v, t, cfg.model_dim});
    proj = nd::transpose(proj, {0, 2, 1, 3}); // (N,T,V,C)
    return nd::add(x, proj);
}

void TemporalAttention::collect(std::vector<Parameter*>& out) {
    out.push_back(&wq);
    out.push_back(&wk);
    out.push_back(&wv);
    out.push_back(&wo);
}

RastGModel::RastGModel(ModelConfig cfg)
    : cfg_(std::move(cfg)),
      layout_(graph::build_layout(cfg_.layout)),
      attn_(AttentionConfig{}, 0) {
    cfg_.finalize();
    adjacency_ = graph::build_partitions(layout_, cfg_.partitions);
    const int v = layout_.joint_count();
    for (std::size_t i = 0; i < cfg_.blocks.size(); ++i) {
        blocks_.emplace_back(cfg_.blocks[i], cfg_.partitions, v,
                             Rng::mix(cfg_.init_seed, i + 1), "block" + std::to_string(i));
    }
    attn_ = TemporalAttention(cfg_.attention, Rng::mix(cfg_.init_seed, 900));

    Rng rng(Rng::mix(cfg_.init_seed, 901));
    const int c = cfg_.attention.model_dim;
    head_w1_ = Parameter("head.w1",
                         normal_init(Shape{c, cfg_.head_hidden}, std::sqrt(2.0 / c), rng));
    head_b1_ = Parameter("head.b1", NdArray(Shape{cfg_.head_hidden}));
    head_w2_ = Parameter("head.w2",
                         uniform_init(Shape{cfg_.head_hidden, 1},
                                      std::sqrt(6.0 / (cfg_.head_hidden + 1)), rng));
    head_b2_ = Parameter("head.b2", NdArray::full(Shape{1}, cfg_.head_bias_init));
}

ForwardResult RastGModel::forward(const Var& x, bool train) {
    const auto& sh = x->value.shape();
    if (x->value.rank() != 4) throw ShapeError("forward expects (N,T,V,C)");
    if (sh[1] != cfg_.input_frames) {
        throw ShapeError("forward contract: expected T=" + std::to_string(cfg_.input_frames) +
                         " preprocessed frames, got " + std::to_string(sh[1]) +
                         " (set model.input_frames to override)");
    }
    if (sh[2] != layout_.joint_count()) {
        throw ShapeError("forward: V=" + std::to_string(sh[2]) + " does not match layout " +
                         std::to_string(layout_.joint_count()));
    }
    if (sh[3] != cfg_.in_channels) {
        throw ShapeError("forward: C=" + std::to_string(sh[3]) + " does not match model channels " +
                         std::to_string(cfg_.in_channels));
    }
    Var h = x;
    for (auto& b : blocks_) h = b.forward(h, adjacency_.binary, train);
    Var fm = attn_.forward(h);
    Var z = nd::mean_pool(fm, {1, 2}); // (N, C)
    Var hidden = nd::relu(nd::linear(z, head_w1_.var(), head_b1_.var()));
    Var y = nd::linear(hidden, head_w2_.var(), head_b2_.var()); // (N, 1)
    return ForwardResult{y, fm};
}

ForwardResult RastGModel::forward_nctvm(const NdArray& x, bool train) {
    if (x.rank() != 5) throw ShapeError("model input must be (N,C,T,V,M), got " + nd::shape_str(x.shape()));
    if (x.dim(4) != 1) throw ShapeError("this artifact handles M=1 instances");
    NdArray squeezed = x.reshaped(Shape{x.dim(0), x.dim(1), x.dim(2), x.dim(3)});
    Var v = nd::constant(squeezed.transposed({0, 2, 3, 1})); // (N,T,V,C)
    return forward(v, train);
}

NdArray RastGModel::feature_map_nctv(const ForwardResult& r) {
    // (N,T,V,C) -> (N*M, C, T, V) with M = 1
    return r.feature_map->value.transposed({0, 3, 1, 2});
}

std::vector<Parameter*> RastGModel::parameters() {
    std::vector<Parameter*> out;
    for (auto& b : blocks_) b.collect(out);
    attn_.collect(out);
    out.push_back(&head_w1_);
    out.push_back(&head_b1_);
    out.push_back(&head_w2_);
    out.push_back(&head_b2_);
    return out;
}

void RastGModel::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

std::vector<nd::BnState*> RastGModel::bn_states() {
    std::vector<nd::BnState*> out;
    for (auto& b : blocks_) {
        out.push_back(&b.bn1);
        out.push_back(&b.bn2);
    }
    return out;
}

RastGModel::Snapshot RastGModel::snapshot() {
    Snapshot s;
    for (auto* p : parameters()) s.params.push_back(p->value().clone());
    for (auto* bn : bn_states()) {
        s.buffer_means.push_back(bn->running_mean.clone());
        s.buffer_vars.push_back(bn->running_var.clone());
        s.counters.push_back(bn->batches_tracked);
    }
    return s;
}

void RastGModel::restore(const Snapshot& s) {
    auto params = parameters();
    if (s.params.size() != params.size()) throw ShapeError("snapshot parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value_mut() = s.params[i].clone();
    }
    auto bns = bn_states();
    if (s.buffer_means.size() != bns.size()) throw ShapeError("snapshot buffer count mismatch");
    for (std::size_t i = 0; i < bns.size(); ++i) {
        bns[i]->running_mean = s.buffer_means[i].clone();
        bns[i]->running_var = s.buffer_vars[i].clone();
        bns[i]->batches_tracked = s.counters[i];
    }
}

} // namespace rastg::model
