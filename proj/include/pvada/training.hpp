#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pvada/corruptions.hpp"
#include "pvada/metrics.hpp"
#include "pvada/model.hpp"
#include "pvada/parallel.hpp"

namespace pvada {

// --- loss --------------------------------------------------------------------

// Cross entropy against the label-smoothed target: the true class keeps
// 1 - alpha, every other class receives alpha / (C - 1).
template <class T>
Tensor<T> label_smoothed_ce(const Tensor<T>& logits, int true_class, double alpha) {
    if (logits.rank() > 2 || (logits.rank() == 2 && logits.dim(0) != 1))
        throw ShapeError("label_smoothed_ce: logits must be a single score vector");
    const int64_t c = logits.numel();
    if (c < 2) throw ValidationError("label_smoothed_ce: need at least 2 classes");
    if (true_class < 0 || true_class >= c)
        throw ValidationError("label_smoothed_ce: class " + std::to_string(true_class) +
                              " out of range [0," + std::to_string(c) + ")");
    if (alpha < 0.0 || alpha >= 1.0)
        throw ValidationError("label_smoothed_ce: alpha must be in [0,1)");

    const T* pl = logits.ptr();
    T mx = pl[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, pl[i]);
    T sum = T(0);
    for (int64_t i = 0; i < c; ++i) sum += std::exp(pl[i] - mx);
    const T lse = mx + std::log(sum);

    const T off_target = static_cast<T>(alpha / static_cast<double>(c - 1));
    const T on_target = static_cast<T>(1.0 - alpha);
    T dot = T(0);
    for (int64_t i = 0; i < c; ++i) dot += (i == true_class ? on_target : off_target) * pl[i];

    const bool tracked = detail::should_record<T>({&logits});
    Tensor<T> loss = detail::make_output<T>({1}, tracked);
    loss.ptr()[0] = lse - dot;

    if (tracked) {
        auto ln = logits.node(), on = loss.node();
        Tape<T>::current()->record([ln, on, lse, on_target, off_target, true_class, c] {
            if (!on->has_grad()) return;
            ln->ensure_grad();
            const T g = on->grad[0];
            const T* pl2 = ln->value.data();
            T* d = ln->grad.data();
            for (int64_t i = 0; i < c; ++i) {
                const T p = std::exp(pl2[i] - lse);
                const T t = i == true_class ? on_target : off_target;
                d[i] += g * (p - t);
            }
        });
    }
    return loss;
}

// --- optimizer ---------------------------------------------------------------

// buffer <- momentum * buffer + (grad + weight_decay * param)
// param  <- param - lr * buffer
template <class T>
void sgd_update(std::span<T> param, std::span<const T> grad, std::span<T> buffer, T lr,
                T momentum, T weight_decay) {
    if (param.size() != grad.size() || param.size() != buffer.size())
        throw ShapeError("sgd_update: parameter/gradient/buffer sizes disagree");
    for (size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i] + weight_decay * param[i];
        buffer[i] = momentum * buffer[i] + g;
        param[i] -= lr * buffer[i];
    }
}

inline double cosine_lr(int epoch, double lr0, int t_max, double eta_min) {
    if (epoch < 0) throw ValidationError("cosine_lr: negative epoch");
    if (t_max < 1) throw ValidationError("cosine_lr: t_max must be >= 1");
    const int e = std::min(epoch, t_max);
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + std::cos(M_PI * static_cast<double>(e) /
                                                             static_cast<double>(t_max)));
}

// --- config -------------------------------------------------------------------

enum class SelectBest { CleanVal, CorruptedVal };

struct TrainConfig {
    int epochs = 350;
    int batch_size = 64;
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    int cosine_t_max = 350;
    double eta_min = 0.001;
    double label_smoothing = 0.2;
    double scale_aug_min = 2.0 / 3.0;
    double scale_aug_max = 1.5;
    double translate_aug = 0.2;
    bool augment_enabled = true;
    uint64_t seed = 1;
    SelectBest select_best_on = SelectBest::CorruptedVal;
    int val_cadence = 1;  // evaluate every n epochs
    int threads = 1;

    void validate() const {
        if (epochs < 0) throw ValidationError("train config: epochs must be >= 0");
        if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
        if (!(lr0 > 0.0)) throw ValidationError("train config: lr0 must be positive");
        if (momentum < 0.0 || momentum >= 1.0)
            throw ValidationError("train config: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw ValidationError("train config: weight_decay must be >= 0");
        if (cosine_t_max < 1) throw ValidationError("train config: cosine_t_max must be >= 1");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw ValidationError("train config: label smoothing must be in [0,1)");
        if (scale_aug_min > scale_aug_max)
            throw ValidationError("train config: scale augmentation range is reversed");
        if (translate_aug < 0.0) throw ValidationError("train config: translate_aug must be >= 0");
        if (val_cadence < 1) throw ValidationError("train config: val_cadence must be >= 1");
        if (threads < 1) throw ValidationError("train config: threads must be >= 1");
    }
};

// per-axis scale in [scale_aug_min, scale_aug_max], then per-axis translation
// in [-translate_aug, translate_aug]; label preserved
inline PointCloud augment(const PointCloud& cloud, const TrainConfig& cfg, Rng& rng) {
    const Vec3 s{rng.uniform(cfg.scale_aug_min, cfg.scale_aug_max),
                 rng.uniform(cfg.scale_aug_min, cfg.scale_aug_max),
                 rng.uniform(cfg.scale_aug_min, cfg.scale_aug_max)};
    const Vec3 t{rng.uniform(-cfg.translate_aug, cfg.translate_aug),
                 rng.uniform(-cfg.translate_aug, cfg.translate_aug),
                 rng.uniform(-cfg.translate_aug, cfg.translate_aug)};
    PointCloud out = cloud;
    for (Vec3& p : out.points)
        for (int a = 0; a < 3; ++a) p[a] = p[a] * s[a] + t[a];
    return out;
}

// --- evaluation ----------------------------------------------------------------

template <class T>
std::vector<int> predict(const std::vector<PointCloud>& clouds, const ModelParams<T>& params,
                         const ModelConfig& cfg, int threads = 1) {
    std::vector<int> preds(clouds.size(), -1);
    parallel_for(static_cast<int64_t>(clouds.size()), threads, [&](int64_t i) {
        ForwardCtx<T> ctx;  // eval mode
        FeatureBundle<T> out = forward(clouds[static_cast<size_t>(i)], params, cfg, ctx);
        preds[static_cast<size_t>(i)] =
            static_cast<int>(max_over_axis(out.logits, 0).argmax[0]);
    });
    return preds;
}

template <class T>
double evaluate_oa(const std::vector<PointCloud>& clouds, const ModelParams<T>& params,
                   const ModelConfig& cfg, int threads = 1) {
    if (clouds.empty()) throw ValidationError("evaluate_oa: empty set");
    std::vector<int> labels;
    labels.reserve(clouds.size());
    for (const PointCloud& c : clouds) {
        if (!c.label) throw ValidationError("evaluate_oa: cloud without label");
        labels.push_back(*c.label);
    }
    const std::vector<int> preds = predict(clouds, params, cfg, threads);
    return overall_accuracy(preds, labels);
}

// --- training loop --------------------------------------------------------------

struct ValSets {
    std::vector<PointCloud> clean;
    std::vector<CorruptionSet> corrupted;  // for SelectBest::CorruptedVal
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_oa = -1.0;  // -1 when this epoch was not evaluated
};

template <class T>
struct TrainResult {
    ModelParams<T> params;  // best-validation parameters
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_val_oa = -1.0;
};

// return false to stop after the current epoch
template <class T>
using EpochCallback = std::function<bool(const EpochRecord&, const ModelParams<T>& best)>;

namespace detail {

template <class T>
std::vector<Tensor<T>> collect_learnables(ModelParams<T>& params) {
    std::vector<Tensor<T>> out;
    for_each_param(params, [&](const std::string&, Tensor<T>& t) { out.push_back(t); });
    return out;
}

template <class T>
double validation_target(const ValSets& val, const ModelParams<T>& params,
                         const ModelConfig& cfg, const TrainConfig& tcfg) {
    if (tcfg.select_best_on == SelectBest::CleanVal) return evaluate_oa(val.clean, params, cfg, tcfg.threads);
    double sum = 0.0;
    int count = 0;
    for (const CorruptionSet& set : val.corrupted) {
        if (set.kind == CorruptionKind::Clean) continue;
        sum += evaluate_oa(set.clouds, params, cfg, tcfg.threads);
        ++count;
    }
    if (count == 0) throw ValidationError("train: corrupted validation target has no sets");
    return sum / count;
}

}  // namespace detail

template <class T>
TrainResult<T> train(const std::vector<PointCloud>& train_set, const ValSets& val,
                     const ModelConfig& mcfg, const TrainConfig& tcfg,
                     const EpochCallback<T>& callback = {}) {
    mcfg.validate();
    tcfg.validate();
    if (train_set.empty()) throw ValidationError("train: empty training set");
    for (const PointCloud& c : train_set) {
        if (!c.label || *c.label < 0 || *c.label >= mcfg.num_classes)
            throw ValidationError("train: cloud with missing or out-of-range label");
    }
    if (tcfg.select_best_on == SelectBest::CleanVal && val.clean.empty())
        throw ValidationError("train: clean validation set required and empty");
    if (tcfg.select_best_on == SelectBest::CorruptedVal && val.corrupted.empty())
        throw ValidationError("train: corrupted validation sets required and empty");

    ModelParams<T> params = init_params<T>(mcfg, tcfg.seed);
    std::vector<Tensor<T>> learnables = detail::collect_learnables(params);
    int64_t total = 0;
    for (const Tensor<T>& t : learnables) total += t.numel();
    std::vector<T> flat_grad(static_cast<size_t>(total), T(0));
    std::vector<T> momentum_buf(static_cast<size_t>(total), T(0));

    TrainResult<T> result;
    result.params = copy_params(params);

    const int64_t n = static_cast<int64_t>(train_set.size());
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(mix_seed({tcfg.seed, 0x73687566u}));

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, tcfg.lr0, tcfg.cosine_t_max, tcfg.eta_min);
        shuffle_rng.shuffle(order);
        std::vector<double> losses(static_cast<size_t>(n), 0.0);

        for (int64_t start = 0; start < n; start += tcfg.batch_size) {
            const int64_t b = std::min<int64_t>(tcfg.batch_size, n - start);
            const int threads = std::max(1, std::min<int>(tcfg.threads, static_cast<int>(b)));
            const int64_t chunk = (b + threads - 1) / threads;

            // each worker trains against its own parameter copy; gradients and
            // batch-norm statistics are merged afterwards in a fixed order
            std::vector<ModelParams<T>> copies;
            std::vector<std::vector<Tensor<T>>> copy_learnables;
            copies.reserve(static_cast<size_t>(threads));
            for (int t = 0; t < threads; ++t) {
                copies.push_back(copy_params(params));
                copy_learnables.push_back(detail::collect_learnables(copies.back()));
            }
            std::vector<BnSink<T>> sinks(static_cast<size_t>(b));

            parallel_for(b, threads, [&](int64_t bi) {
                const int tid = static_cast<int>(bi / chunk);
                const int64_t di = order[static_cast<size_t>(start + bi)];
                const PointCloud& base = train_set[static_cast<size_t>(di)];

                Rng aug_rng(mix_seed({tcfg.seed, 0x617567u, static_cast<uint64_t>(epoch),
                                      static_cast<uint64_t>(di)}));
                Rng drop_rng(mix_seed({tcfg.seed, 0x64726fu, static_cast<uint64_t>(epoch),
                                       static_cast<uint64_t>(di)}));
                const PointCloud cloud = tcfg.augment_enabled ? augment(base, tcfg, aug_rng) : base;

                Tape<T> tape;
                TapeScope<T> scope(tape);
                ForwardCtx<T> ctx;
                ctx.training = true;
                ctx.bn_sink = &sinks[static_cast<size_t>(bi)];
                ctx.dropout_rng = &drop_rng;
                FeatureBundle<T> out = forward(cloud, copies[static_cast<size_t>(tid)], mcfg, ctx);
                Tensor<T> loss =
                    label_smoothed_ce(out.logits, *base.label, tcfg.label_smoothing);
                losses[static_cast<size_t>(start + bi)] = static_cast<double>(loss.item());
                tape.backward(loss);
            });

            for (int64_t bi = 0; bi < b; ++bi) {
                const double l = losses[static_cast<size_t>(start + bi)];
                if (!std::isfinite(l))
                    throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(start / tcfg.batch_size) +
                                       ", lr " + std::to_string(lr));
            }

            std::fill(flat_grad.begin(), flat_grad.end(), T(0));
            for (int t = 0; t < threads; ++t) {
                int64_t off = 0;
                for (size_t j = 0; j < learnables.size(); ++j) {
                    Tensor<T>& src = copy_learnables[static_cast<size_t>(t)][j];
                    if (src.has_grad()) {
                        const std::vector<T>& g = src.grad();
                        for (int64_t i = 0; i < src.numel(); ++i)
                            flat_grad[static_cast<size_t>(off + i)] += g[static_cast<size_t>(i)];
                    }
                    off += src.numel();
                }
            }
            const T inv_b = T(1) / static_cast<T>(b);
            for (T& g : flat_grad) g *= inv_b;

            for (const BnSink<T>& sink : sinks) apply_bn_updates(params, sink);

            int64_t off = 0;
            for (Tensor<T>& t : learnables) {
                sgd_update<T>({t.ptr(), static_cast<size_t>(t.numel())},
                              {flat_grad.data() + off, static_cast<size_t>(t.numel())},
                              {momentum_buf.data() + off, static_cast<size_t>(t.numel())},
                              static_cast<T>(lr), static_cast<T>(tcfg.momentum),
                              static_cast<T>(tcfg.weight_decay));
                off += t.numel();
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        double loss_sum = 0.0;
        for (double l : losses) loss_sum += l;
        rec.train_loss = loss_sum / static_cast<double>(n);

        const bool eval_now = (epoch % tcfg.val_cadence == 0) || epoch == tcfg.epochs - 1;
        if (eval_now) {
            rec.val_oa = detail::validation_target(val, params, mcfg, tcfg);
            if (rec.val_oa > result.best_val_oa) {
                result.best_val_oa = rec.val_oa;
                result.best_epoch = epoch;
                result.params = copy_params(params);
            }
        }
        result.history.push_back(rec);
        if (callback && !callback(rec, result.params)) break;
    }
    return result;
}

}  // namespace pvada
