#pragma once

// Point-voxel classifier: shared local encoding and offset-attention
// transformer over a voxel pyramid, optional feature interaction between
// adjacent pyramid levels, score-weighted (adaptive) max pooling per level,
// and an MLP head over the concatenated level descriptors.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvada/geometry.hpp"
#include "pvada/rng.hpp"
#include "pvada/tensor.hpp"

namespace pvada {

enum class Interaction : int { z1 = 1, z2 = 2, z3 = 3 };

inline std::string interaction_name(Interaction z) {
    return "z" + std::to_string(static_cast<int>(z));
}

inline Interaction interaction_from_name(const std::string& s) {
    if (s == "z1") return Interaction::z1;
    if (s == "z2") return Interaction::z2;
    if (s == "z3") return Interaction::z3;
    throw ValidationError("unknown interaction mode '" + s + "' (expected z1|z2|z3)");
}

struct ModelConfig {
    int k = 32;                    // neighbors in local encoding
    int dim = 128;                 // feature width D; attention q/k use D/4
    int local_hidden = 64;         // width of the first local-encoding stage
    int num_oa_blocks = 4;
    double voxel_size = 0.05;
    int num_voxelizations = 2;     // 2 -> pyramid levels X, X', X''
    bool progressive_pyramid = true;  // X'' voxelized from X' (else from X)
    Interaction interaction = Interaction::z1;
    bool shared_weights = true;
    bool afa_enabled = true;
    int num_classes = 40;
    double leaky_slope = 0.01;
    bool pct_double_norm = false;  // column softmax + row l1, instead of row softmax
    int head_hidden1 = 512;
    int head_hidden2 = 256;
    double dropout = 0.5;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    int num_levels() const { return num_voxelizations + 1; }
    int qk_dim() const { return std::max(1, dim / 4); }

    void validate() const {
        if (k < 1) throw ValidationError("config: k must be >= 1");
        if (dim < 1) throw ValidationError("config: dim must be >= 1");
        if (local_hidden < 1) throw ValidationError("config: local_hidden must be >= 1");
        if (num_oa_blocks < 1) throw ValidationError("config: num_oa_blocks must be >= 1");
        if (!(voxel_size > 0.0)) throw ValidationError("config: voxel_size must be positive");
        if (num_voxelizations < 2 || num_voxelizations > 3)
            throw ValidationError("config: num_voxelizations must be 2 or 3");
        if (num_classes < 2) throw ValidationError("config: num_classes must be >= 2");
        if (leaky_slope < 0.0) throw ValidationError("config: leaky_slope must be >= 0");
        if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("config: dropout must be in [0,1)");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"k", c.k},
         {"dim", c.dim},
         {"local_hidden", c.local_hidden},
         {"num_oa_blocks", c.num_oa_blocks},
         {"voxel_size", c.voxel_size},
         {"num_voxelizations", c.num_voxelizations},
         {"progressive_pyramid", c.progressive_pyramid},
         {"interaction", interaction_name(c.interaction)},
         {"shared_weights", c.shared_weights},
         {"afa_enabled", c.afa_enabled},
         {"num_classes", c.num_classes},
         {"leaky_slope", c.leaky_slope},
         {"pct_double_norm", c.pct_double_norm},
         {"head_hidden1", c.head_hidden1},
         {"head_hidden2", c.head_hidden2},
         {"dropout", c.dropout},
         {"bn_eps", c.bn_eps},
         {"bn_momentum", c.bn_momentum}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig def;
    c.k = j.value("k", def.k);
    c.dim = j.value("dim", def.dim);
    c.local_hidden = j.value("local_hidden", def.local_hidden);
    c.num_oa_blocks = j.value("num_oa_blocks", def.num_oa_blocks);
    c.voxel_size = j.value("voxel_size", def.voxel_size);
    c.num_voxelizations = j.value("num_voxelizations", def.num_voxelizations);
    c.progressive_pyramid = j.value("progressive_pyramid", def.progressive_pyramid);
    c.interaction = interaction_from_name(j.value("interaction", std::string("z1")));
    c.shared_weights = j.value("shared_weights", def.shared_weights);
    c.afa_enabled = j.value("afa_enabled", def.afa_enabled);
    c.num_classes = j.value("num_classes", def.num_classes);
    c.leaky_slope = j.value("leaky_slope", def.leaky_slope);
    c.pct_double_norm = j.value("pct_double_norm", def.pct_double_norm);
    c.head_hidden1 = j.value("head_hidden1", def.head_hidden1);
    c.head_hidden2 = j.value("head_hidden2", def.head_hidden2);
    c.dropout = j.value("dropout", def.dropout);
    c.bn_eps = j.value("bn_eps", def.bn_eps);
    c.bn_momentum = j.value("bn_momentum", def.bn_momentum);
}

// --- parameters -------------------------------------------------------------

template <class T>
struct LinearParams {
    Tensor<T> weight;  // (in, out)
    Tensor<T> bias;    // (out,)
};

template <class T>
struct NormParams {
    Tensor<T> gamma, beta;
    Tensor<T> running_mean, running_var;  // buffers, not learnable
    int slot = -1;
};

template <class T>
struct EncoderParams {
    LinearParams<T> lin1;
    NormParams<T> bn1;
    LinearParams<T> lin2;
    NormParams<T> bn2;
};

template <class T>
struct BlockParams {
    LinearParams<T> q, k, v;
    LinearParams<T> f;
    NormParams<T> f_bn;
};

template <class T>
struct StackParams {
    EncoderParams<T> encoder;
    LinearParams<T> pre;  // F^e -> F^m
    NormParams<T> pre_bn;
    std::vector<BlockParams<T>> blocks;
    LinearParams<T> fuse;
    NormParams<T> fuse_bn;
};

template <class T>
struct InteractionParams {
    LinearParams<T> h1;
    NormParams<T> h1_bn;
    LinearParams<T> h2;
    NormParams<T> h2_bn;
    LinearParams<T> h3;
    NormParams<T> h3_bn;
};

template <class T>
struct HeadParams {
    LinearParams<T> l1;
    Tensor<T> n1_gamma, n1_beta;  // per-sample feature norm (single row at a time)
    LinearParams<T> l2;
    Tensor<T> n2_gamma, n2_beta;
    LinearParams<T> l3;
};

template <class T>
struct ModelParams {
    ModelConfig config;
    std::vector<StackParams<T>> stacks;              // 1 when shared, else one per level
    std::vector<InteractionParams<T>> interactions;  // per coarse level; empty for z1
    std::vector<LinearParams<T>> score_heads;        // per level, never shared
    HeadParams<T> head;
    int num_bn_slots = 0;

    const StackParams<T>& stack_for(int level) const {
        return config.shared_weights ? stacks[0] : stacks[static_cast<size_t>(level)];
    }
};

// --- registry ---------------------------------------------------------------

template <class T, class F>
void for_each_linear(ModelParams<T>& p, F&& fn) {
    for (size_t s = 0; s < p.stacks.size(); ++s) {
        const std::string sp = "stack" + std::to_string(s) + ".";
        StackParams<T>& st = p.stacks[s];
        fn(sp + "enc.lin1", st.encoder.lin1);
        fn(sp + "enc.lin2", st.encoder.lin2);
        fn(sp + "pre", st.pre);
        for (size_t b = 0; b < st.blocks.size(); ++b) {
            const std::string bp = sp + "block" + std::to_string(b) + ".";
            fn(bp + "q", st.blocks[b].q);
            fn(bp + "k", st.blocks[b].k);
            fn(bp + "v", st.blocks[b].v);
            fn(bp + "f", st.blocks[b].f);
        }
        fn(sp + "fuse", st.fuse);
    }
    for (size_t i = 0; i < p.interactions.size(); ++i) {
        const std::string ip = "interact" + std::to_string(i) + ".";
        fn(ip + "h1", p.interactions[i].h1);
        fn(ip + "h2", p.interactions[i].h2);
        fn(ip + "h3", p.interactions[i].h3);
    }
    for (size_t i = 0; i < p.score_heads.size(); ++i)
        fn("score" + std::to_string(i), p.score_heads[i]);
    fn("head.l1", p.head.l1);
    fn("head.l2", p.head.l2);
    fn("head.l3", p.head.l3);
}

template <class T, class F>
void for_each_norm(ModelParams<T>& p, F&& fn) {
    for (size_t s = 0; s < p.stacks.size(); ++s) {
        const std::string sp = "stack" + std::to_string(s) + ".";
        StackParams<T>& st = p.stacks[s];
        fn(sp + "enc.bn1", st.encoder.bn1);
        fn(sp + "enc.bn2", st.encoder.bn2);
        fn(sp + "pre_bn", st.pre_bn);
        for (size_t b = 0; b < st.blocks.size(); ++b)
            fn(sp + "block" + std::to_string(b) + ".f_bn", st.blocks[b].f_bn);
        fn(sp + "fuse_bn", st.fuse_bn);
    }
    for (size_t i = 0; i < p.interactions.size(); ++i) {
        const std::string ip = "interact" + std::to_string(i) + ".";
        fn(ip + "h1_bn", p.interactions[i].h1_bn);
        fn(ip + "h2_bn", p.interactions[i].h2_bn);
        fn(ip + "h3_bn", p.interactions[i].h3_bn);
    }
}

// Every learnable tensor, in a fixed order (drives init, SGD, checkpoints).
template <class T, class F>
void for_each_param(ModelParams<T>& p, F&& fn) {
    for_each_linear(p, [&](const std::string& name, LinearParams<T>& lin) {
        fn(name + ".w", lin.weight);
        fn(name + ".b", lin.bias);
    });
    for_each_norm(p, [&](const std::string& name, NormParams<T>& norm) {
        fn(name + ".gamma", norm.gamma);
        fn(name + ".beta", norm.beta);
    });
    fn("head.n1.gamma", p.head.n1_gamma);
    fn("head.n1.beta", p.head.n1_beta);
    fn("head.n2.gamma", p.head.n2_gamma);
    fn("head.n2.beta", p.head.n2_beta);
}

// Learnables plus running statistics; the full checkpoint state.
template <class T, class F>
void for_each_state(ModelParams<T>& p, F&& fn) {
    for_each_param(p, fn);
    for_each_norm(p, [&](const std::string& name, NormParams<T>& norm) {
        fn(name + ".running_mean", norm.running_mean);
        fn(name + ".running_var", norm.running_var);
    });
}

template <class T>
int64_t count_params(const ModelParams<T>& params) {
    int64_t total = 0;
    for_each_param(const_cast<ModelParams<T>&>(params),
                   [&](const std::string&, Tensor<T>& t) { total += t.numel(); });
    return total;
}

template <class T>
ModelParams<T> copy_params(const ModelParams<T>& params) {
    ModelParams<T> out = params;  // copies handles; now deep-copy every tensor
    for_each_state(out, [](const std::string&, Tensor<T>& t) { t = t.copy(); });
    return out;
}

// --- construction -----------------------------------------------------------

namespace detail {

template <class T>
LinearParams<T> make_linear(int64_t in, int64_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor<T> w = Tensor<T>::zeros({in, out}, true);
    Tensor<T> b = Tensor<T>::zeros({out}, true);
    for (T& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    for (T& v : b.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return {w, b};
}

template <class T>
NormParams<T> make_norm(int64_t width, int& slot) {
    NormParams<T> n;
    n.gamma = Tensor<T>::filled({width}, T(1), true);
    n.beta = Tensor<T>::zeros({width}, true);
    n.running_mean = Tensor<T>::zeros({width});
    n.running_var = Tensor<T>::filled({width}, T(1));
    n.slot = slot++;
    return n;
}

template <class T>
StackParams<T> make_stack(const ModelConfig& cfg, Rng& rng, int& slot) {
    StackParams<T> st;
    st.encoder.lin1 = make_linear<T>(6, cfg.local_hidden, rng);
    st.encoder.bn1 = make_norm<T>(cfg.local_hidden, slot);
    st.encoder.lin2 = make_linear<T>(cfg.local_hidden, cfg.dim, rng);
    st.encoder.bn2 = make_norm<T>(cfg.dim, slot);
    st.pre = make_linear<T>(cfg.dim, cfg.dim, rng);
    st.pre_bn = make_norm<T>(cfg.dim, slot);
    for (int b = 0; b < cfg.num_oa_blocks; ++b) {
        BlockParams<T> blk;
        blk.q = make_linear<T>(cfg.dim, cfg.qk_dim(), rng);
        blk.k = make_linear<T>(cfg.dim, cfg.qk_dim(), rng);
        blk.v = make_linear<T>(cfg.dim, cfg.dim, rng);
        blk.f = make_linear<T>(cfg.dim, cfg.dim, rng);
        blk.f_bn = make_norm<T>(cfg.dim, slot);
        st.blocks.push_back(std::move(blk));
    }
    st.fuse = make_linear<T>(static_cast<int64_t>(cfg.dim) * (cfg.num_oa_blocks + 1),
                             static_cast<int64_t>(cfg.dim) * 4, rng);
    st.fuse_bn = make_norm<T>(static_cast<int64_t>(cfg.dim) * 4, slot);
    return st;
}

}  // namespace detail

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelParams<T> p;
    p.config = cfg;
    Rng rng(mix_seed({seed, 0x70766164u}));
    int slot = 0;

    const int stack_count = cfg.shared_weights ? 1 : cfg.num_levels();
    for (int s = 0; s < stack_count; ++s)
        p.stacks.push_back(detail::make_stack<T>(cfg, rng, slot));

    if (cfg.interaction != Interaction::z1) {
        for (int l = 1; l < cfg.num_levels(); ++l) {
            InteractionParams<T> ip;
            ip.h1 = detail::make_linear<T>(cfg.dim, cfg.dim, rng);
            ip.h1_bn = detail::make_norm<T>(cfg.dim, slot);
            ip.h2 = detail::make_linear<T>(cfg.dim, cfg.dim, rng);
            ip.h2_bn = detail::make_norm<T>(cfg.dim, slot);
            ip.h3 = detail::make_linear<T>(static_cast<int64_t>(cfg.dim) * 2, cfg.dim, rng);
            ip.h3_bn = detail::make_norm<T>(cfg.dim, slot);
            p.interactions.push_back(std::move(ip));
        }
    }

    // score heads start as "weight 0, bias 1": training begins from a plain
    // max pool and learns to deviate
    for (int l = 0; l < cfg.num_levels(); ++l) {
        LinearParams<T> g;
        g.weight = Tensor<T>::zeros({static_cast<int64_t>(cfg.dim) * 4, 1}, true);
        g.bias = Tensor<T>::filled({1}, T(1), true);
        p.score_heads.push_back(std::move(g));
    }

    const int64_t head_in = static_cast<int64_t>(cfg.dim) * 4 * cfg.num_levels();
    p.head.l1 = detail::make_linear<T>(head_in, cfg.head_hidden1, rng);
    p.head.n1_gamma = Tensor<T>::filled({cfg.head_hidden1}, T(1), true);
    p.head.n1_beta = Tensor<T>::zeros({cfg.head_hidden1}, true);
    p.head.l2 = detail::make_linear<T>(cfg.head_hidden1, cfg.head_hidden2, rng);
    p.head.n2_gamma = Tensor<T>::filled({cfg.head_hidden2}, T(1), true);
    p.head.n2_beta = Tensor<T>::zeros({cfg.head_hidden2}, true);
    p.head.l3 = detail::make_linear<T>(cfg.head_hidden2, cfg.num_classes, rng);
    p.num_bn_slots = slot;
    return p;
}

// --- forward ----------------------------------------------------------------

template <class T>
struct ForwardCtx {
    bool training = false;
    bool update_running = true;      // ignored in eval mode
    BnSink<T>* bn_sink = nullptr;    // deterministic deferred updates
    Rng* dropout_rng = nullptr;      // required when training with dropout > 0
};

namespace detail {

template <class T>
BatchNormArgs<T> bn_args(const NormParams<T>& norm, const ModelConfig& cfg,
                         const ForwardCtx<T>& ctx) {
    BatchNormArgs<T> a;
    a.running_mean = norm.running_mean;
    a.running_var = norm.running_var;
    a.eps = static_cast<T>(cfg.bn_eps);
    a.momentum = static_cast<T>(cfg.bn_momentum);
    a.training = ctx.training;
    a.update_running = ctx.update_running;
    a.sink = ctx.bn_sink;
    a.slot = norm.slot;
    return a;
}

// pointwise linear -> batch norm -> (leaky) ReLU
template <class T>
Tensor<T> lbr(const Tensor<T>& x, const LinearParams<T>& lin, const NormParams<T>& norm, T slope,
              const ModelConfig& cfg, const ForwardCtx<T>& ctx) {
    Tensor<T> t = pointwise_linear(x, lin.weight, lin.bias);
    t = batch_norm(t, norm.gamma, norm.beta, bn_args(norm, cfg, ctx));
    return leaky_relu(t, slope);
}

template <class T>
Tensor<T> coords_tensor(const PointCloud& cloud) {
    Tensor<T> t = Tensor<T>::zeros({static_cast<int64_t>(cloud.size()), 3});
    T* p = t.ptr();
    for (size_t i = 0; i < cloud.size(); ++i)
        for (int a = 0; a < 3; ++a) p[i * 3 + static_cast<size_t>(a)] = static_cast<T>(cloud.points[i][a]);
    return t;
}

}  // namespace detail

// k-neighbor edge features -> two linear+norm+ReLU stages -> max over the
// neighborhood. Output is the N x D local descriptor.
template <class T>
Tensor<T> local_encode(const PointCloud& cloud, const EncoderParams<T>& enc,
                       const ModelConfig& cfg, const ForwardCtx<T>& ctx) {
    const int64_t n = static_cast<int64_t>(cloud.size());
    const int64_t k = cfg.k;
    const std::vector<int64_t> idx = knn(cloud, cloud, cfg.k);

    // edge rows: [neighbor - center || center]
    Tensor<T> edges = Tensor<T>::zeros({n * k, 6});
    T* pe = edges.ptr();
    for (int64_t i = 0; i < n; ++i) {
        const Vec3& c = cloud.points[static_cast<size_t>(i)];
        for (int64_t j = 0; j < k; ++j) {
            const Vec3& nb = cloud.points[static_cast<size_t>(idx[static_cast<size_t>(i * k + j)])];
            T* row = pe + (i * k + j) * 6;
            for (int a = 0; a < 3; ++a) {
                row[a] = static_cast<T>(nb[static_cast<size_t>(a)] - c[static_cast<size_t>(a)]);
                row[3 + a] = static_cast<T>(c[static_cast<size_t>(a)]);
            }
        }
    }

    Tensor<T> x = detail::lbr(edges, enc.lin1, enc.bn1, T(0), cfg, ctx);
    x = detail::lbr(x, enc.lin2, enc.bn2, T(0), cfg, ctx);
    return segment_max(x, k).values;
}

// One offset-attention block: vanilla attention, then a residual transform
// of (input - attention output).
template <class T>
Tensor<T> offset_attention_block(const Tensor<T>& f_in, const BlockParams<T>& blk,
                                 const ModelConfig& cfg, const ForwardCtx<T>& ctx) {
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.qk_dim())));
    Tensor<T> q = pointwise_linear(f_in, blk.q.weight, blk.q.bias);
    Tensor<T> kk = pointwise_linear(f_in, blk.k.weight, blk.k.bias);
    Tensor<T> v = pointwise_linear(f_in, blk.v.weight, blk.v.bias);
    Tensor<T> scores = matmul(q, kk, false, true, inv_sqrt_dk);
    Tensor<T> attn;
    if (cfg.pct_double_norm) {
        attn = l1_normalize_rows(softmax(scores, 0));
    } else {
        attn = softmax(scores, 1);
    }
    Tensor<T> f_va = matmul(attn, v);
    Tensor<T> offset = sub(f_in, f_va);
    Tensor<T> t = detail::lbr(offset, blk.f, blk.f_bn, T(0), cfg, ctx);
    return add(f_in, t);
}

// concat([F^e, F^{oa_1..B}]) -> linear+norm+LeakyReLU down to 4D
template <class T>
Tensor<T> fuse_transformer_features(const Tensor<T>& encoded, const std::vector<Tensor<T>>& oa,
                                    const StackParams<T>& st, const ModelConfig& cfg,
                                    const ForwardCtx<T>& ctx) {
    std::vector<Tensor<T>> parts;
    parts.push_back(encoded);
    for (const Tensor<T>& t : oa) parts.push_back(t);
    Tensor<T> cat = concat(parts, 1);
    return detail::lbr(cat, st.fuse, st.fuse_bn, static_cast<T>(cfg.leaky_slope), cfg, ctx);
}

// Re-express fine features at the coarse rows (mean per cell), then combine:
// z1 ignores the fine features, z2 adds a transformed copy, z3 concatenates
// and projects.
template <class T>
Tensor<T> interact_features(const Tensor<T>& f_fine, const Tensor<T>& f_coarse,
                            std::span<const int64_t> assignment, Interaction mode,
                            const InteractionParams<T>* ip, const ModelConfig& cfg,
                            const ForwardCtx<T>& ctx) {
    if (mode == Interaction::z1) return f_coarse;
    if (!ip) throw ContractError("interact_features: parameters required for z2/z3");
    Tensor<T> pooled = cell_mean_pool(f_fine, assignment, f_coarse.rows());
    const T slope = static_cast<T>(cfg.leaky_slope);
    if (mode == Interaction::z2) {
        Tensor<T> h1 = detail::lbr(pooled, ip->h1, ip->h1_bn, slope, cfg, ctx);
        return add(h1, f_coarse);
    }
    Tensor<T> h2 = detail::lbr(pooled, ip->h2, ip->h2_bn, slope, cfg, ctx);
    Tensor<T> cat = concat(std::vector<Tensor<T>>{h2, f_coarse}, 1);
    return detail::lbr(cat, ip->h3, ip->h3_bn, slope, cfg, ctx);
}

// S = g(F^t) with a raw linear score head, pooled_d = max_i S_i * F^t_{i,d}.
template <class T>
struct PoolResult {
    Tensor<T> pooled;  // (4D,)
    Tensor<T> scores;  // (N, 1)
};

template <class T>
PoolResult<T> adaptive_pool(const Tensor<T>& ft, const LinearParams<T>& g) {
    Tensor<T> s = pointwise_linear(ft, g.weight, g.bias);
    Tensor<T> weighted = mul(ft, s);
    return {max_over_axis(weighted, 0).values, s};
}

template <class T>
struct LevelFeatures {
    PointCloud points;
    Tensor<T> encoded;          // N x D (post-interaction at coarse levels)
    Tensor<T> transformer_out;  // N x 4D
    Tensor<T> scores;           // N x 1; undefined when AFA is disabled
    Tensor<T> pooled;           // (4D,)
};

template <class T>
struct FeatureBundle {
    std::vector<LevelFeatures<T>> levels;
    Tensor<T> logits;  // (C,)
};

template <class T>
FeatureBundle<T> forward(const PointCloud& cloud, const ModelParams<T>& params,
                         const ModelConfig& cfg, const ForwardCtx<T>& ctx) {
    if (cloud.empty()) throw ValidationError("forward: empty cloud");
    const int levels = cfg.num_levels();

    std::vector<PointCloud> pyramid{cloud};
    std::vector<std::vector<int64_t>> assignments;  // source rows -> level l rows
    for (int l = 1; l < levels; ++l) {
        const double v = cfg.voxel_size * static_cast<double>(int64_t(1) << (l - 1));
        const PointCloud& source = cfg.progressive_pyramid ? pyramid.back() : pyramid.front();
        VoxelResult res = voxel_downsample(source, v);
        pyramid.push_back(std::move(res.cloud));
        assignments.push_back(std::move(res.assignment));
    }

    FeatureBundle<T> bundle;
    std::vector<Tensor<T>> pooled_list;
    Tensor<T> prev_encoded;
    for (int l = 0; l < levels; ++l) {
        const StackParams<T>& st = params.stack_for(l);
        Tensor<T> enc = local_encode(pyramid[static_cast<size_t>(l)], st.encoder, cfg, ctx);
        if (l > 0 && cfg.interaction != Interaction::z1) {
            const Tensor<T>& fine =
                cfg.progressive_pyramid ? prev_encoded : bundle.levels[0].encoded;
            enc = interact_features(fine, enc, assignments[static_cast<size_t>(l - 1)],
                                    cfg.interaction, &params.interactions[static_cast<size_t>(l - 1)],
                                    cfg, ctx);
        }
        Tensor<T> fm = detail::lbr(enc, st.pre, st.pre_bn, T(0), cfg, ctx);
        std::vector<Tensor<T>> oa_outputs;
        Tensor<T> oa = fm;
        for (const BlockParams<T>& blk : st.blocks) {
            oa = offset_attention_block(oa, blk, cfg, ctx);
            oa_outputs.push_back(oa);
        }
        Tensor<T> ft = fuse_transformer_features(enc, oa_outputs, st, cfg, ctx);

        LevelFeatures<T> lf;
        lf.points = pyramid[static_cast<size_t>(l)];
        lf.encoded = enc;
        lf.transformer_out = ft;
        if (cfg.afa_enabled) {
            PoolResult<T> pr = adaptive_pool(ft, params.score_heads[static_cast<size_t>(l)]);
            lf.pooled = pr.pooled;
            lf.scores = pr.scores;
        } else {
            lf.pooled = max_over_axis(ft, 0).values;
        }
        pooled_list.push_back(lf.pooled);
        bundle.levels.push_back(std::move(lf));
        prev_encoded = bundle.levels.back().encoded;
    }

    Tensor<T> feat = concat(pooled_list, 0);
    Tensor<T> x = reshape_copy(feat, {1, feat.numel()});
    const T slope = static_cast<T>(cfg.leaky_slope);
    const bool drop = ctx.training && cfg.dropout > 0.0;
    if (drop && !ctx.dropout_rng)
        throw ContractError("forward: training with dropout requires a dropout rng");

    x = pointwise_linear(x, params.head.l1.weight, params.head.l1.bias);
    x = layer_norm(x, params.head.n1_gamma, params.head.n1_beta, static_cast<T>(cfg.bn_eps));
    x = leaky_relu(x, slope);
    if (drop) x = dropout(x, cfg.dropout, *ctx.dropout_rng);
    x = pointwise_linear(x, params.head.l2.weight, params.head.l2.bias);
    x = layer_norm(x, params.head.n2_gamma, params.head.n2_beta, static_cast<T>(cfg.bn_eps));
    x = leaky_relu(x, slope);
    if (drop) x = dropout(x, cfg.dropout, *ctx.dropout_rng);
    x = pointwise_linear(x, params.head.l3.weight, params.head.l3.bias);
    bundle.logits = reshape_copy(x, {static_cast<int64_t>(cfg.num_classes)});
    return bundle;
}

// Applies deferred batch-norm statistics updates, in the order collected.
template <class T>
void apply_bn_updates(ModelParams<T>& params, const BnSink<T>& sink) {
    std::vector<NormParams<T>*> by_slot(static_cast<size_t>(params.num_bn_slots), nullptr);
    for_each_norm(params, [&](const std::string&, NormParams<T>& n) {
        by_slot[static_cast<size_t>(n.slot)] = &n;
    });
    const T momentum = static_cast<T>(params.config.bn_momentum);
    for (const BnPendingUpdate<T>& u : sink) {
        NormParams<T>* n = by_slot[static_cast<size_t>(u.slot)];
        T* rm = n->running_mean.ptr();
        T* rv = n->running_var.ptr();
        for (size_t c = 0; c < u.mean.size(); ++c) {
            rm[c] = (T(1) - momentum) * rm[c] + momentum * u.mean[c];
            rv[c] = (T(1) - momentum) * rv[c] + momentum * u.var[c];
        }
    }
}

}  // namespace pvada
