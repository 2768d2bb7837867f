#include <doctest.h>

#include <cmath>
#include <set>

#include "pvada/corruptions.hpp"
#include "pvada/data.hpp"
#include "pvada/rng.hpp"

using namespace pvada;

namespace {

PointCloud unit_sphere_cloud(int n, uint64_t seed) {
    Rng rng(seed);
    PointCloud c;
    for (int i = 0; i < n; ++i) {
        const Vec3 d = rng.unit_vector();
        const double r = std::cbrt(rng.uniform());
        c.points.push_back({r * d[0], r * d[1], r * d[2]});
    }
    c.label = 3;
    return normalize_unit_sphere(c);
}

int64_t expected_count(CorruptionKind kind, int severity, int64_t n,
                       const CorruptionParams& p = {}) {
    switch (kind) {
        case CorruptionKind::DropLocal: return n - p.drop_local_per_severity * severity;
        case CorruptionKind::AddLocal: return n + p.add_local_per_severity * severity;
        case CorruptionKind::AddGlobal: return n + p.add_global_per_severity * severity;
        case CorruptionKind::DropGlobal:
            return std::lround(static_cast<double>(n) *
                               (1.0 - p.drop_global_fraction_per_severity * severity));
        default: return n;
    }
}

}  // namespace

TEST_CASE("drop_local severity 5 leaves 524 of 1024 points") {
    PointCloud c = unit_sphere_cloud(1024, 1);
    PointCloud out = corrupt(c, {CorruptionKind::DropLocal, 5, 99});
    CHECK(out.size() == 524);
    CHECK(out.label == c.label);
}

TEST_CASE("add_local severity 5 grows 1024 to 1524 points") {
    PointCloud c = unit_sphere_cloud(1024, 2);
    PointCloud out = corrupt(c, {CorruptionKind::AddLocal, 5, 99});
    CHECK(out.size() == 1524);
}

TEST_CASE("clean spec returns the input bitwise") {
    PointCloud c = unit_sphere_cloud(128, 3);
    PointCloud out = corrupt(c, {CorruptionKind::Clean, 0, 7});
    CHECK(out.points == c.points);
    CHECK(out.label == c.label);
}

TEST_CASE("severity bounds are enforced") {
    PointCloud c = unit_sphere_cloud(64, 4);
    CHECK_THROWS_AS(corrupt(c, {CorruptionKind::Jitter, 0, 1}), ValidationError);
    CHECK_THROWS_AS(corrupt(c, {CorruptionKind::Jitter, 6, 1}), ValidationError);
}

TEST_CASE("drop beyond the cloud size is rejected") {
    PointCloud c = unit_sphere_cloud(300, 5);
    CHECK_THROWS_AS(corrupt(c, {CorruptionKind::DropLocal, 3, 1}), ValidationError);
}

TEST_CASE("output point counts match the severity table on random sizes") {
    Rng rng(6);
    for (int it = 0; it < 10; ++it) {
        const int n = 600 + static_cast<int>(rng.uniform_int(1449));
        PointCloud c = unit_sphere_cloud(n, 100 + static_cast<uint64_t>(it));
        for (int k = 0; k < kNumAtomicCorruptions; ++k) {
            const auto kind = static_cast<CorruptionKind>(k);
            for (int s = 1; s <= kNumSeverities; ++s) {
                PointCloud out = corrupt(c, {kind, s, rng.next_u64()});
                CHECK(static_cast<int64_t>(out.size()) == expected_count(kind, s, n));
            }
        }
    }
}

TEST_CASE("identical spec gives bitwise identical output") {
    PointCloud c = unit_sphere_cloud(777, 7);
    for (int k = 0; k < kNumAtomicCorruptions; ++k) {
        const CorruptionSpec spec{static_cast<CorruptionKind>(k), 3, 0xabcdefull};
        PointCloud a = corrupt(c, spec);
        PointCloud b = corrupt(c, spec);
        CHECK(a.points == b.points);
    }
}

TEST_CASE("drops are subsets, adds keep the input as a prefix") {
    PointCloud c = unit_sphere_cloud(800, 8);
    std::set<Vec3> input_set(c.points.begin(), c.points.end());

    for (CorruptionKind kind : {CorruptionKind::DropGlobal, CorruptionKind::DropLocal}) {
        PointCloud out = corrupt(c, {kind, 4, 21});
        for (const Vec3& p : out.points) CHECK(input_set.count(p) == 1);
    }
    for (CorruptionKind kind : {CorruptionKind::AddGlobal, CorruptionKind::AddLocal}) {
        PointCloud out = corrupt(c, {kind, 4, 22});
        REQUIRE(out.size() > c.size());
        bool prefix = true;
        for (size_t i = 0; i < c.size(); ++i) prefix = prefix && out.points[i] == c.points[i];
        CHECK(prefix);
    }
}

TEST_CASE("rotation preserves pairwise distances") {
    PointCloud c = unit_sphere_cloud(100, 9);
    PointCloud out = corrupt(c, {CorruptionKind::Rotate, 5, 33});
    REQUIRE(out.size() == c.size());
    for (size_t i = 0; i < c.size(); i += 7)
        for (size_t j = i + 1; j < c.size(); j += 13) {
            double d0 = 0.0, d1 = 0.0;
            for (int a = 0; a < 3; ++a) {
                d0 += (c.points[i][a] - c.points[j][a]) * (c.points[i][a] - c.points[j][a]);
                d1 += (out.points[i][a] - out.points[j][a]) * (out.points[i][a] - out.points[j][a]);
            }
            CHECK(std::fabs(std::sqrt(d0) - std::sqrt(d1)) < 1e-6);
        }
}

TEST_CASE("rotation angles respect the per-severity bound") {
    PointCloud basis;
    basis.points = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    double prev_mean = 0.0;
    for (int s = 1; s <= 5; ++s) {
        const double bound = 6.0 * s * M_PI / 180.0;
        double sum = 0.0;
        for (uint64_t seed = 0; seed < 200; ++seed) {
            PointCloud out = corrupt(basis, {CorruptionKind::Rotate, s, seed});
            // columns of the rotation matrix are the images of the basis
            const double trace = out.points[0][0] + out.points[1][1] + out.points[2][2];
            const double angle = std::acos(std::clamp((trace - 1.0) / 2.0, -1.0, 1.0));
            CHECK(angle <= bound + 1e-9);
            sum += angle;
        }
        const double mean = sum / 200.0;
        CHECK(mean > prev_mean);
        prev_mean = mean;
    }
}

TEST_CASE("jitter displacement spread follows 0.01 * severity") {
    PointCloud c = unit_sphere_cloud(100000, 10);
    PointCloud out = corrupt(c, {CorruptionKind::Jitter, 3, 77});
    REQUIRE(out.size() == c.size());
    for (int a = 0; a < 3; ++a) {
        double sum = 0.0, sum2 = 0.0;
        for (size_t i = 0; i < c.size(); ++i) {
            const double d = out.points[i][a] - c.points[i][a];
            sum += d;
            sum2 += d * d;
        }
        const double n = static_cast<double>(c.size());
        const double stddev = std::sqrt(sum2 / n - (sum / n) * (sum / n));
        CHECK(std::fabs(stddev - 0.03) < 0.002);
    }

    // monotone spread in severity
    double prev = 0.0;
    for (int s = 1; s <= 5; ++s) {
        PointCloud o = corrupt(c, {CorruptionKind::Jitter, s, 78});
        double sum2 = 0.0;
        for (size_t i = 0; i < c.size(); ++i)
            for (int a = 0; a < 3; ++a)
                sum2 += (o.points[i][a] - c.points[i][a]) * (o.points[i][a] - c.points[i][a]);
        CHECK(sum2 > prev);
        prev = sum2;
    }
}

TEST_CASE("scale stays renormalized to the unit sphere") {
    PointCloud c = unit_sphere_cloud(500, 11);
    PointCloud out = corrupt(c, {CorruptionKind::Scale, 5, 13});
    double max_norm = 0.0;
    Vec3 centroid{0, 0, 0};
    for (const Vec3& p : out.points) {
        max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
        for (int a = 0; a < 3; ++a) centroid[a] += p[a];
    }
    CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-9));
    for (int a = 0; a < 3; ++a) CHECK(std::fabs(centroid[a] / 500.0) < 1e-9);
}

TEST_CASE("suite yields the clean set plus 35 corrupted sets") {
    std::vector<PointCloud> clouds;
    for (int i = 0; i < 3; ++i) clouds.push_back(unit_sphere_cloud(700, 20 + static_cast<uint64_t>(i)));

    std::vector<std::string> names;
    std::set<std::pair<int, int>> cells;
    corruption_suite(clouds, 5, {}, [&](CorruptionSet&& set) {
        names.push_back(set.name());
        CHECK(set.clouds.size() == clouds.size());
        if (set.kind != CorruptionKind::Clean)
            cells.insert({static_cast<int>(set.kind), set.severity});
    });
    CHECK(names.size() == 36);
    CHECK(names.front() == "clean");
    CHECK(cells.size() == 35);
}

TEST_CASE("single-cloud suite works") {
    std::vector<PointCloud> clouds{unit_sphere_cloud(650, 30)};
    int sets = 0;
    corruption_suite(clouds, 5, {}, [&](CorruptionSet&& set) {
        CHECK(set.clouds.size() == 1);
        ++sets;
    });
    CHECK(sets == 36);
}

TEST_CASE("suite is reproducible and per-cloud seeds are independent") {
    std::vector<PointCloud> clouds;
    for (int i = 0; i < 2; ++i) clouds.push_back(unit_sphere_cloud(640, 40 + static_cast<uint64_t>(i)));

    std::vector<std::vector<PointCloud>> run1, run2;
    corruption_suite(clouds, 123, {}, [&](CorruptionSet&& s) { run1.push_back(s.clouds); });
    corruption_suite(clouds, 123, {}, [&](CorruptionSet&& s) { run2.push_back(s.clouds); });
    REQUIRE(run1.size() == run2.size());
    for (size_t i = 0; i < run1.size(); ++i)
        for (size_t j = 0; j < run1[i].size(); ++j) CHECK(run1[i][j].points == run2[i][j].points);

    // regenerate one corrupted cloud without the suite
    const CorruptionSpec spec{CorruptionKind::Jitter, 4,
                              suite_cloud_seed(123, CorruptionKind::Jitter, 4, 1)};
    const PointCloud direct = corrupt(clouds[1], spec);
    // jitter is kind index 1, so its severity-4 set is at 1 + 1*5 + 3
    CHECK(direct.points == run1[9][1].points);
}

TEST_CASE("corruption names round-trip") {
    for (int k = 0; k <= static_cast<int>(CorruptionKind::Clean); ++k) {
        const auto kind = static_cast<CorruptionKind>(k);
        CHECK(corruption_from_name(corruption_name(kind)) == kind);
    }
    CHECK_THROWS_AS(corruption_from_name("melt"), ValidationError);
}
