#include <doctest.h>

#include <cmath>

#include "pvada/data.hpp"
#include "pvada/training.hpp"

using namespace pvada;

namespace {

ModelConfig tiny_model(int classes) {
    ModelConfig cfg;
    cfg.k = 6;
    cfg.dim = 16;
    cfg.local_hidden = 8;
    cfg.num_oa_blocks = 2;
    cfg.voxel_size = 0.2;
    cfg.num_classes = classes;
    cfg.head_hidden1 = 32;
    cfg.head_hidden2 = 16;
    cfg.dropout = 0.5;
    return cfg;
}

}  // namespace

TEST_CASE("label smoothing soft target values") {
    // C=40, alpha=0.2: 0.8 on the true class, 0.2/39 elsewhere
    const int c = 40;
    Rng rng(4);
    Tensor<double> logits = Tensor<double>::zeros({c});
    for (double& v : logits.data()) v = rng.uniform(-2.0, 2.0);
    const int true_class = 11;
    const double alpha = 0.2;

    double mx = logits.data()[0];
    for (double v : logits.data()) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits.data()) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    double expect = 0.0;
    for (int i = 0; i < c; ++i) {
        const double t = i == true_class ? 0.8 : 0.2 / 39.0;
        expect += t * (lse - logits.data()[static_cast<size_t>(i)]);
    }
    CHECK(label_smoothed_ce(logits, true_class, alpha).item() ==
          doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("two-class uniform logits give log 2") {
    Tensor<double> logits = Tensor<double>::from({2}, {0.0, 0.0});
    CHECK(label_smoothed_ce(logits, 0, 0.2).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("alpha zero reduces exactly to plain cross-entropy") {
    Rng rng(5);
    for (int it = 0; it < 10; ++it) {
        const int c = 2 + static_cast<int>(rng.uniform_int(8));
        Tensor<double> logits = Tensor<double>::zeros({c});
        for (double& v : logits.data()) v = rng.uniform(-3.0, 3.0);
        const int y = static_cast<int>(rng.uniform_int(c));

        // plain CE with the same stable log-sum-exp evaluation order
        double mx = logits.data()[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, logits.data()[static_cast<size_t>(i)]);
        double sum = 0.0;
        for (int i = 0; i < c; ++i) sum += std::exp(logits.data()[static_cast<size_t>(i)] - mx);
        const double plain = (mx + std::log(sum)) - logits.data()[static_cast<size_t>(y)];

        CHECK(label_smoothed_ce(logits, y, 0.0).item() == plain);
    }
}

TEST_CASE("loss gradient vanishes when softmax equals the smoothed target") {
    const int c = 5;
    const double alpha = 0.2;
    Tensor<double> logits = Tensor<double>::zeros({c}, true);
    for (int i = 0; i < c; ++i) {
        const double t = i == 2 ? 1.0 - alpha : alpha / (c - 1);
        logits.data()[static_cast<size_t>(i)] = std::log(t);
    }
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> loss = label_smoothed_ce(logits, 2, alpha);
    tape.backward(loss);
    double norm = 0.0;
    for (double g : logits.grad()) norm += g * g;
    CHECK(std::sqrt(norm) <= 1e-8);
}

TEST_CASE("loss input validation") {
    Tensor<double> logits = Tensor<double>::from({3}, {0, 0, 0});
    CHECK_THROWS_AS(label_smoothed_ce(logits, 3, 0.1), ValidationError);
    CHECK_THROWS_AS(label_smoothed_ce(logits, -1, 0.1), ValidationError);
    CHECK_THROWS_AS(label_smoothed_ce(logits, 0, 1.0), ValidationError);
}

TEST_CASE("sgd vanilla step") {
    std::vector<double> p{1.0}, g{0.25}, buf{0.0};
    sgd_update<double>(p, g, buf, 0.1, 0.0, 0.0);
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.25));
}

TEST_CASE("sgd leaves parameters alone with zero gradient and no decay") {
    std::vector<double> p{0.7}, g{0.0}, buf{0.0};
    sgd_update<double>(p, g, buf, 0.1, 0.9, 0.0);
    CHECK(p[0] == 0.7);
}

TEST_CASE("sgd two-step recurrence with momentum and decay") {
    // hand-iterated: g' = g + wd*p; buf = m*buf + g'; p -= lr*buf
    double ep = 1.0, ebuf = 0.0;
    const double lr = 0.1, m = 0.9, wd = 0.0005, grad = 0.1;
    for (int step = 0; step < 2; ++step) {
        const double g = grad + wd * ep;
        ebuf = m * ebuf + g;
        ep -= lr * ebuf;
    }
    CHECK(ep == doctest::Approx(0.9708555025).epsilon(1e-9));

    std::vector<double> p{1.0}, buf{0.0};
    for (int step = 0; step < 2; ++step) {
        std::vector<double> g{grad};
        sgd_update<double>(p, g, buf, lr, m, wd);
    }
    CHECK(p[0] == doctest::Approx(ep).epsilon(1e-15));
}

TEST_CASE("weight decay shrinks parameters at zero gradient") {
    std::vector<double> p{2.0}, g{0.0}, buf{0.0};
    sgd_update<double>(p, g, buf, 0.1, 0.9, 0.01);
    CHECK(std::fabs(p[0]) < 2.0);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0, 0.1, 350, 0.001) == doctest::Approx(0.1));
    CHECK(cosine_lr(350, 0.1, 350, 0.001) == doctest::Approx(0.001));
    CHECK(cosine_lr(175, 0.1, 350, 0.001) == doctest::Approx(0.0505));
}

TEST_CASE("cosine schedule is monotonically non-increasing") {
    double prev = 1e9;
    for (int e = 0; e <= 350; ++e) {
        const double lr = cosine_lr(e, 0.1, 350, 0.001);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
}

TEST_CASE("augmentation is a componentwise affine map") {
    TrainConfig cfg;
    Rng rng(77);
    PointCloud probe;
    probe.points = {{0, 0, 0}, {1, 1, 1}, {2, -1, 0.5}};
    PointCloud out = augment(probe, cfg, rng);
    // recover scale/translation from the first two images
    Vec3 t = out.points[0];
    Vec3 s;
    for (int a = 0; a < 3; ++a) s[a] = out.points[1][a] - t[a];
    for (int a = 0; a < 3; ++a) {
        CHECK(s[a] >= cfg.scale_aug_min);
        CHECK(s[a] <= cfg.scale_aug_max);
        CHECK(std::fabs(t[a]) <= cfg.translate_aug);
        CHECK(out.points[2][a] ==
              doctest::Approx(probe.points[2][a] * s[a] + t[a]).epsilon(1e-12));
    }
}

TEST_CASE("degenerate augmentation ranges are the identity") {
    TrainConfig cfg;
    cfg.scale_aug_min = cfg.scale_aug_max = 1.0;
    cfg.translate_aug = 0.0;
    Rng rng(7);
    PointCloud c;
    c.points = {{0.1, -0.2, 0.3}, {0.5, 0.5, -0.5}};
    PointCloud out = augment(c, cfg, rng);
    CHECK(out.points == c.points);
}

TEST_CASE("augmentation scale draws have the expected mean") {
    TrainConfig cfg;
    Rng rng(123);
    double sum = 0.0;
    const int draws = 100000;
    PointCloud one;
    one.points = {{1, 1, 1}};
    for (int i = 0; i < draws / 3; ++i) {
        PointCloud probe;
        probe.points = {{0, 0, 0}, {1, 1, 1}};
        PointCloud out = augment(probe, cfg, rng);
        for (int a = 0; a < 3; ++a) sum += out.points[1][a] - out.points[0][a];
    }
    const double mean = sum / (3.0 * (draws / 3));
    CHECK(std::fabs(mean - (2.0 / 3.0 + 1.5) / 2.0) < 0.01);
}

TEST_CASE("training separates two easy shape classes") {
    Dataset ds = generate_dataset({ShapeClass::Sphere, ShapeClass::PlaneCross}, 20, 64, 31);

    ModelConfig mcfg = tiny_model(2);
    TrainConfig tcfg;
    tcfg.epochs = 20;
    tcfg.batch_size = 16;
    tcfg.cosine_t_max = 20;
    tcfg.seed = 9;
    tcfg.select_best_on = SelectBest::CleanVal;
    tcfg.threads = 2;

    ValSets val;
    val.clean = ds.test;
    TrainResult<float> result = train<float>(ds.train, val, mcfg, tcfg);
    CHECK(result.best_val_oa == doctest::Approx(1.0));
    CHECK(result.history.size() <= 20);

    // loss decreases: median of last 10% below median of first 10%
    CHECK(result.history.back().train_loss < result.history.front().train_loss);
}

TEST_CASE("zero epochs returns the initial parameters and empty history") {
    Dataset ds = generate_dataset({ShapeClass::Sphere, ShapeClass::Cube}, 4, 32, 3);
    ModelConfig mcfg = tiny_model(2);
    TrainConfig tcfg;
    tcfg.epochs = 0;
    tcfg.select_best_on = SelectBest::CleanVal;
    ValSets val;
    val.clean = ds.test;
    TrainResult<float> result = train<float>(ds.train, val, mcfg, tcfg);
    CHECK(result.history.empty());
    CHECK(result.best_epoch == -1);

    ModelParams<float> fresh = init_params<float>(mcfg, tcfg.seed);
    std::vector<float> a, b;
    for_each_param(result.params, [&](const std::string&, Tensor<float>& t) {
        a.insert(a.end(), t.data().begin(), t.data().end());
    });
    for_each_param(fresh, [&](const std::string&, Tensor<float>& t) {
        b.insert(b.end(), t.data().begin(), t.data().end());
    });
    CHECK(a == b);
}

TEST_CASE("training is deterministic for a fixed seed and thread count") {
    Dataset ds = generate_dataset({ShapeClass::Cube, ShapeClass::Torus}, 6, 48, 13);
    ModelConfig mcfg = tiny_model(2);
    TrainConfig tcfg;
    tcfg.epochs = 3;
    tcfg.batch_size = 4;
    tcfg.seed = 21;
    tcfg.select_best_on = SelectBest::CleanVal;
    ValSets val;
    val.clean = ds.test;

    for (int threads : {1, 2}) {
        tcfg.threads = threads;
        TrainResult<float> r1 = train<float>(ds.train, val, mcfg, tcfg);
        TrainResult<float> r2 = train<float>(ds.train, val, mcfg, tcfg);
        REQUIRE(r1.history.size() == r2.history.size());
        for (size_t e = 0; e < r1.history.size(); ++e) {
            CHECK(r1.history[e].train_loss == r2.history[e].train_loss);
            CHECK(r1.history[e].val_oa == r2.history[e].val_oa);
        }
        std::vector<float> a, b;
        for_each_state(r1.params, [&](const std::string&, Tensor<float>& t) {
            a.insert(a.end(), t.data().begin(), t.data().end());
        });
        for_each_state(r2.params, [&](const std::string&, Tensor<float>& t) {
            b.insert(b.end(), t.data().begin(), t.data().end());
        });
        CHECK(a == b);
    }
}

TEST_CASE("training validation errors") {
    ModelConfig mcfg = tiny_model(2);
    TrainConfig tcfg;
    tcfg.select_best_on = SelectBest::CleanVal;
    ValSets val;
    CHECK_THROWS_AS(train<float>({}, val, mcfg, tcfg), ValidationError);

    Dataset ds = generate_dataset({ShapeClass::Sphere, ShapeClass::Cube}, 4, 32, 3);
    CHECK_THROWS_AS(train<float>(ds.train, val, mcfg, tcfg), ValidationError);  // empty clean val

    tcfg.select_best_on = SelectBest::CorruptedVal;
    val.clean = ds.test;
    CHECK_THROWS_AS(train<float>(ds.train, val, mcfg, tcfg), ValidationError);  // no corrupted sets
}

TEST_CASE("corrupted validation target averages over the 35 sets") {
    Dataset ds = generate_dataset({ShapeClass::Sphere, ShapeClass::Cube}, 5, 700, 3);
    ModelConfig mcfg = tiny_model(2);
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 8;
    tcfg.seed = 5;
    tcfg.select_best_on = SelectBest::CorruptedVal;
    tcfg.threads = 2;

    ValSets val;
    val.clean = ds.test;
    corruption_suite(ds.test, 77, {}, [&](CorruptionSet&& set) {
        if (set.kind != CorruptionKind::Clean) val.corrupted.push_back(std::move(set));
    });
    TrainResult<float> result = train<float>(ds.train, val, mcfg, tcfg);
    REQUIRE(result.history.size() == 1);
    CHECK(result.history[0].val_oa >= 0.0);
    CHECK(result.history[0].val_oa <= 1.0);
}

TEST_CASE("epoch callback can stop training early") {
    Dataset ds = generate_dataset({ShapeClass::Sphere, ShapeClass::Cube}, 4, 32, 3);
    ModelConfig mcfg = tiny_model(2);
    TrainConfig tcfg;
    tcfg.epochs = 10;
    tcfg.batch_size = 4;
    tcfg.select_best_on = SelectBest::CleanVal;
    ValSets val;
    val.clean = ds.test;
    int calls = 0;
    TrainResult<float> result = train<float>(
        ds.train, val, mcfg, tcfg,
        [&](const EpochRecord&, const ModelParams<float>&) { return ++calls < 3; });
    CHECK(calls == 3);
    CHECK(result.history.size() == 3);
}
