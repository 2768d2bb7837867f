#pragma once

// Central finite-difference oracle for the autodiff library. The harness
// only drives forward evaluations, so it stays independent of every adjoint
// it checks.

#include <functional>
#include <string>
#include <vector>

#include "pvada/model.hpp"
#include "pvada/rng.hpp"
#include "pvada/tensor.hpp"
#include "pvada/training.hpp"

namespace pvada {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
};

// Analytic gradients of `forward_scalar` w.r.t. every leaf, compared against
// (f(x+h) - f(x-h)) / 2h elementwise. Relative error denominator floored at
// 1e-8.
inline double fd_check(std::vector<Tensor<double>> leaves,
                       const std::function<Tensor<double>()>& forward_scalar,
                       double step = 1e-4, double denom_floor = 1e-8) {
    for (Tensor<double>& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        Tensor<double> loss = forward_scalar();
        tape.backward(loss);
    }

    double max_rel = 0.0;
    for (Tensor<double>& leaf : leaves) {
        const std::vector<double> analytic = leaf.grad();
        for (int64_t i = 0; i < leaf.numel(); ++i) {
            const double saved = leaf.data()[static_cast<size_t>(i)];
            leaf.data()[static_cast<size_t>(i)] = saved + step;
            const double fp = forward_scalar().item();
            leaf.data()[static_cast<size_t>(i)] = saved - step;
            const double fm = forward_scalar().item();
            leaf.data()[static_cast<size_t>(i)] = saved;
            const double fd = (fp - fm) / (2.0 * step);
            const double a = analytic[static_cast<size_t>(i)];
            const double denom = std::max(denom_floor, std::max(std::fabs(a), std::fabs(fd)));
            max_rel = std::max(max_rel, std::fabs(a - fd) / denom);
        }
    }
    return max_rel;
}

namespace detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// random values bounded away from zero (activation kinks)
inline Tensor<double> random_off_kink(Shape shape, Rng& rng) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (double& v : t.data()) {
        const double m = rng.uniform(0.05, 1.0);
        v = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

// random values with pairwise gaps, so max selections stay stable under fd
inline Tensor<double> random_distinct(Shape shape, Rng& rng) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    std::vector<int64_t> slots(t.data().size());
    for (size_t i = 0; i < slots.size(); ++i) slots[i] = static_cast<int64_t>(i);
    rng.shuffle(slots);
    for (size_t i = 0; i < slots.size(); ++i)
        t.data()[i] = -1.0 + 0.02 * static_cast<double>(slots[i]) + rng.uniform(0.0, 0.005);
    return t;
}

}  // namespace detail

inline std::vector<GradCheckResult> gradcheck_primitives(uint64_t seed) {
    std::vector<GradCheckResult> results;
    Rng rng(mix_seed({seed, 0x67636bu}));

    auto run = [&](const std::string& name, std::vector<Tensor<double>> leaves,
                   const std::function<Tensor<double>()>& f) {
        results.push_back({name, fd_check(std::move(leaves), f)});
    };
    // fixed projection onto a scalar; built once per case so repeated forward
    // evaluations see identical weights
    auto weight = [&](Shape shape) { return detail::random_tensor(std::move(shape), rng, 0.2, 1.0); };

    {
        auto a = detail::random_tensor({3, 4}, rng), b = detail::random_tensor({4, 5}, rng);
        auto at = detail::random_tensor({4, 3}, rng), bt = detail::random_tensor({5, 4}, rng);
        auto w = weight({3, 5});
        run("matmul", {a, b}, [=] { return sum_all(mul(matmul(a, b), w)); });
        run("matmul_ta", {at, b}, [=] { return sum_all(mul(matmul(at, b, true, false), w)); });
        run("matmul_tb", {a, bt}, [=] { return sum_all(mul(matmul(a, bt, false, true), w)); });
        run("matmul_ta_tb", {at, bt},
            [=] { return sum_all(mul(matmul(at, bt, true, true, 0.5), w)); });
    }
    {
        auto a = detail::random_tensor({3, 4}, rng), b = detail::random_tensor({3, 4}, rng);
        auto row = detail::random_tensor({4}, rng), col = detail::random_tensor({3, 1}, rng);
        auto w = weight({3, 4});
        run("add", {a, b}, [=] { return sum_all(mul(add(a, b), w)); });
        run("sub", {a, b}, [=] { return sum_all(mul(sub(a, b), w)); });
        run("mul", {a, b}, [=] { return sum_all(mul(mul(a, b), w)); });
        run("add_broadcast_row", {a, row}, [=] { return sum_all(mul(add(a, row), w)); });
        run("mul_broadcast_col", {a, col}, [=] { return sum_all(mul(mul(a, col), w)); });
    }
    {
        auto x = detail::random_tensor({5, 3}, rng);
        auto wl = detail::random_tensor({3, 4}, rng);
        auto b = detail::random_tensor({4}, rng);
        auto w = weight({5, 4});
        run("pointwise_linear", {x, wl, b},
            [=] { return sum_all(mul(pointwise_linear(x, wl, b), w)); });
    }
    {
        auto x = detail::random_off_kink({4, 6}, rng);
        auto w = weight({4, 6});
        run("relu", {x}, [=] { return sum_all(mul(relu(x), w)); });
        run("leaky_relu", {x}, [=] { return sum_all(mul(leaky_relu(x, 0.01), w)); });
    }
    {
        auto x = detail::random_tensor({4, 5}, rng);
        auto w = weight({4, 5});
        run("softmax_rows", {x}, [=] { return sum_all(mul(softmax(x, 1), w)); });
        run("softmax_cols", {x}, [=] { return sum_all(mul(softmax(x, 0), w)); });
        auto v = detail::random_tensor({6}, rng);
        auto wv = weight({6});
        run("softmax_vec", {v}, [=] { return sum_all(mul(softmax(v, 0), wv)); });
    }
    {
        auto a = detail::random_tensor({2, 3}, rng), b = detail::random_tensor({2, 4}, rng);
        auto c = detail::random_tensor({3, 3}, rng);
        auto wc = weight({2, 7});
        auto wr = weight({5, 3});
        run("concat_cols", {a, b}, [=] {
            return sum_all(mul(concat(std::vector<Tensor<double>>{a, b}, 1), wc));
        });
        run("concat_rows", {a, c}, [=] {
            return sum_all(mul(concat(std::vector<Tensor<double>>{a, c}, 0), wr));
        });
    }
    {
        auto x = detail::random_tensor({6, 3}, rng);
        const std::vector<int64_t> idx{0, 2, 2, 5};
        auto w = weight({4, 3});
        run("gather_rows", {x}, [=] { return sum_all(mul(gather_rows<double>(x, idx), w)); });
    }
    {
        auto x = detail::random_distinct({5, 4}, rng);
        auto wr = weight({4});
        auto wc = weight({5});
        run("max_over_rows", {x}, [=] { return sum_all(mul(max_over_axis(x, 0).values, wr)); });
        run("max_over_cols", {x}, [=] { return sum_all(mul(max_over_axis(x, 1).values, wc)); });
        auto v = detail::random_distinct({7}, rng);
        run("max_vec", {v}, [=] { return max_over_axis(v, 0).values; });
        auto s = detail::random_distinct({6, 4}, rng);
        auto ws = weight({2, 4});
        run("segment_max", {s}, [=] { return sum_all(mul(segment_max(s, 3).values, ws)); });
    }
    {
        auto x = detail::random_tensor({5, 4}, rng);
        auto wr = weight({4});
        auto wc = weight({5});
        run("mean_over_rows", {x}, [=] { return sum_all(mul(mean_over_axis(x, 0), wr)); });
        run("mean_over_cols", {x}, [=] { return sum_all(mul(mean_over_axis(x, 1), wc)); });
        const std::vector<int64_t> assign{0, 1, 0, 2, 1};
        auto y = detail::random_tensor({5, 3}, rng);
        auto wp = weight({3, 3});
        run("cell_mean_pool", {y},
            [=] { return sum_all(mul(cell_mean_pool<double>(y, assign, 3), wp)); });
    }
    {
        auto x = detail::random_tensor({8, 4}, rng);
        auto gamma = detail::random_tensor({4}, rng, 0.5, 1.5);
        auto beta = detail::random_tensor({4}, rng);
        auto w = weight({8, 4});
        run("batch_norm", {x, gamma, beta}, [=] {
            BatchNormArgs<double> args;
            args.training = true;
            return sum_all(mul(batch_norm(x, gamma, beta, args), w));
        });
        auto y = detail::random_tensor({4, 6}, rng);
        auto g2 = detail::random_tensor({6}, rng, 0.5, 1.5);
        auto b2 = detail::random_tensor({6}, rng);
        auto w2 = weight({4, 6});
        run("layer_norm", {y, g2, b2}, [=] { return sum_all(mul(layer_norm(y, g2, b2), w2)); });
    }
    {
        auto x = detail::random_tensor({4, 5}, rng, 0.2, 1.2);
        auto w = weight({4, 5});
        run("l1_normalize_rows", {x}, [=] { return sum_all(mul(l1_normalize_rows(x), w)); });
        auto y = detail::random_tensor({3, 4}, rng);
        auto wy = weight({12});
        run("reshape_copy", {y}, [=] { return sum_all(mul(reshape_copy(y, {12}), wy)); });
        run("scale", {y}, [=] { return sum_all(scale(y, 0.37)); });
        run("sum_all", {y}, [=] { return sum_all(y); });
    }
    {
        auto logits = detail::random_tensor({5}, rng);
        run("label_smoothed_ce", {logits}, [=] { return label_smoothed_ce(logits, 2, 0.2); });
    }
    {
        // composite graph mixing several primitives
        auto a = detail::random_tensor({3, 4}, rng);
        auto b = detail::random_tensor({4, 3}, rng);
        auto c = detail::random_off_kink({3, 3}, rng);
        auto d = detail::random_tensor({3, 3}, rng);
        auto e = detail::random_tensor({3}, rng);
        auto w = weight({3});
        run("composite", {a, b, c, d, e}, [=] {
            Tensor<double> m = softmax(matmul(a, b), 1);
            Tensor<double> r = relu(add(c, d));
            Tensor<double> p = mul(m, r);
            Tensor<double> q = add(mean_over_axis(p, 0), e);
            return sum_all(mul(q, w));
        });
    }
    return results;
}

// Tiny-but-complete model: every parameter gradient of the smoothed CE loss
// against central differences.
inline GradCheckResult gradcheck_end_to_end(uint64_t seed) {
    ModelConfig cfg;
    cfg.k = 4;
    cfg.dim = 8;
    cfg.local_hidden = 4;
    cfg.num_oa_blocks = 4;
    cfg.voxel_size = 0.25;
    cfg.num_voxelizations = 2;
    cfg.interaction = Interaction::z3;
    cfg.num_classes = 4;
    cfg.head_hidden1 = 16;
    cfg.head_hidden2 = 8;
    cfg.dropout = 0.0;

    Rng rng(mix_seed({seed, 0x653265u}));
    PointCloud cloud;
    for (int i = 0; i < 16; ++i) {
        const Vec3 d = rng.unit_vector();
        const double r = std::cbrt(rng.uniform());
        cloud.points.push_back({r * d[0], r * d[1], r * d[2]});
    }
    cloud = normalize_unit_sphere(cloud);
    const int true_class = 2;

    ModelParams<double> params = init_params<double>(cfg, seed);
    std::vector<Tensor<double>> leaves;
    for_each_param(params, [&](const std::string&, Tensor<double>& t) { leaves.push_back(t); });

    auto forward_loss = [&params, &cfg, cloud, true_class]() {
        ForwardCtx<double> ctx;
        ctx.training = true;         // batch statistics, like the training loss
        ctx.update_running = false;  // keep evaluations side-effect free
        FeatureBundle<double> out = forward(cloud, params, cfg, ctx);
        return label_smoothed_ce(out.logits, true_class, 0.2);
    };
    // A smaller step keeps the difference quotient away from ReLU kinks and
    // max-pool ties, and structurally-zero gradients (a bias feeding a batch
    // norm) leave only difference-quotient roundoff, so the denominator floor
    // sits above that noise.
    return {"end_to_end", fd_check(std::move(leaves), forward_loss, 1e-5, 1e-6)};
}

}  // namespace pvada
