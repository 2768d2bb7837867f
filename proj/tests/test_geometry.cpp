#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "pvada/geometry.hpp"
#include "pvada/rng.hpp"

using namespace pvada;

namespace {

PointCloud random_cloud(int n, Rng& rng, double extent = 1.0) {
    PointCloud c;
    for (int i = 0; i < n; ++i)
        c.points.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                            rng.uniform(-extent, extent)});
    return c;
}

// exhaustive distance-sort reference
std::vector<int64_t> knn_oracle(const PointCloud& query, const PointCloud& reference, int k) {
    const int64_t n = static_cast<int64_t>(reference.size());
    const int64_t take = std::min<int64_t>(k, n);
    std::vector<int64_t> out;
    for (const Vec3& q : query.points) {
        std::vector<std::pair<double, int64_t>> all;
        for (int64_t j = 0; j < n; ++j) {
            const Vec3& r = reference.points[static_cast<size_t>(j)];
            const double dx = r[0] - q[0], dy = r[1] - q[1], dz = r[2] - q[2];
            all.emplace_back(dx * dx + dy * dy + dz * dz, j);
        }
        std::sort(all.begin(), all.end());
        for (int64_t j = 0; j < take; ++j) out.push_back(all[static_cast<size_t>(j)].second);
        for (int64_t j = take; j < k; ++j) out.push_back(all[0].second);
    }
    return out;
}

// independent hash-by-cell reference built on an ordered map
struct VoxelOracle {
    std::vector<Vec3> centroids;
    std::vector<int64_t> assignment;
};

VoxelOracle voxel_oracle(const PointCloud& cloud, double v) {
    Vec3 origin = cloud.points[0];
    for (const Vec3& p : cloud.points)
        for (int a = 0; a < 3; ++a) origin[a] = std::min(origin[a], p[a]);
    std::map<std::array<int64_t, 3>, std::vector<size_t>> cells;
    for (size_t i = 0; i < cloud.size(); ++i) {
        std::array<int64_t, 3> key;
        for (int a = 0; a < 3; ++a)
            key[a] = static_cast<int64_t>(std::floor((cloud.points[i][a] - origin[a]) / v));
        cells[key].push_back(i);
    }
    VoxelOracle out;
    out.assignment.assign(cloud.size(), -1);
    for (const auto& [key, members] : cells) {
        Vec3 c{0, 0, 0};
        for (size_t m : members) {
            out.assignment[m] = static_cast<int64_t>(out.centroids.size());
            for (int a = 0; a < 3; ++a) c[a] += cloud.points[m][a];
        }
        for (int a = 0; a < 3; ++a) c[a] /= static_cast<double>(members.size());
        out.centroids.push_back(c);
    }
    return out;
}

}  // namespace

TEST_CASE("normalize keeps an already-normalized pair") {
    PointCloud c;
    c.points = {{1, 0, 0}, {-1, 0, 0}};
    PointCloud n = normalize_unit_sphere(c);
    CHECK(n.points[0][0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(n.points[1][0] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("normalize centers and scales") {
    PointCloud c;
    c.points = {{2, 0, 0}, {4, 0, 0}};
    PointCloud n = normalize_unit_sphere(c);
    CHECK(n.points[0][0] == doctest::Approx(-1.0));
    CHECK(n.points[1][0] == doctest::Approx(1.0));
}

TEST_CASE("normalize degenerate single point") {
    PointCloud c;
    c.points = {{5, 5, 5}};
    PointCloud n = normalize_unit_sphere(c);
    for (int a = 0; a < 3; ++a) CHECK(n.points[0][a] == doctest::Approx(0.0));
}

TEST_CASE("normalize postconditions on random clouds") {
    Rng rng(3);
    for (int it = 0; it < 20; ++it) {
        PointCloud c = random_cloud(50, rng, 7.0);
        PointCloud n = normalize_unit_sphere(c);
        Vec3 centroid{0, 0, 0};
        double max_norm = 0.0;
        for (const Vec3& p : n.points) {
            for (int a = 0; a < 3; ++a) centroid[a] += p[a];
            max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
        }
        for (int a = 0; a < 3; ++a) CHECK(std::fabs(centroid[a] / 50.0) < 1e-6);
        CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("normalize rejects non-finite input") {
    PointCloud c;
    c.points = {{0, 0, std::numeric_limits<double>::quiet_NaN()}};
    CHECK_THROWS_AS(normalize_unit_sphere(c), ValidationError);
}

TEST_CASE("voxel downsample worked example") {
    PointCloud c;
    c.points = {{0.01, 0, 0}, {0.02, 0, 0}, {0.9, 0, 0}};
    VoxelResult r = voxel_downsample(c, 0.1);
    REQUIRE(r.cloud.size() == 2);
    CHECK(r.cloud.points[0][0] == doctest::Approx(0.015));
    CHECK(r.cloud.points[1][0] == doctest::Approx(0.9));
    CHECK(r.assignment == std::vector<int64_t>{0, 0, 1});
}

TEST_CASE("tiny voxels keep every point") {
    Rng rng(11);
    PointCloud c = random_cloud(40, rng);
    VoxelResult r = voxel_downsample(c, 1e-7);
    CHECK(r.cloud.size() == c.size());
    // output is the input re-ordered lexicographically
    std::vector<Vec3> expect = c.points;
    std::sort(expect.begin(), expect.end());
    CHECK(r.cloud.points == expect);
}

TEST_CASE("coincident points collapse to one voxel") {
    PointCloud c;
    c.points = {{0.3, 0.2, -0.1}, {0.3, 0.2, -0.1}, {0.3, 0.2, -0.1}};
    VoxelResult r = voxel_downsample(c, 0.05);
    REQUIRE(r.cloud.size() == 1);
    for (int a = 0; a < 3; ++a) CHECK(r.cloud.points[0][a] == doctest::Approx(c.points[0][a]));
}

TEST_CASE("voxel size must be positive") {
    PointCloud c;
    c.points = {{0, 0, 0}};
    CHECK_THROWS_AS(voxel_downsample(c, 0.0), ValidationError);
    CHECK_THROWS_AS(voxel_downsample(c, -0.1), ValidationError);
}

TEST_CASE("voxel downsample matches the hash-by-cell oracle") {
    Rng rng(17);
    for (int it = 0; it < 40; ++it) {
        PointCloud c = random_cloud(1 + static_cast<int>(rng.uniform_int(200)), rng);
        const double v = rng.uniform(0.05, 0.8);
        VoxelResult r = voxel_downsample(c, v);
        VoxelOracle o = voxel_oracle(c, v);
        REQUIRE(r.cloud.size() == o.centroids.size());
        CHECK(r.assignment == o.assignment);
        for (size_t i = 0; i < o.centroids.size(); ++i)
            for (int a = 0; a < 3; ++a)
                CHECK(r.cloud.points[i][a] == doctest::Approx(o.centroids[i][a]).epsilon(1e-12));
    }
}

TEST_CASE("voxel output count is non-increasing along nested sizes") {
    // Cells only nest when the coarser size is an integer multiple of the
    // finer one (the situation the pyramid uses); for unrelated size pairs a
    // cell boundary of the coarser grid can split a finer cell.
    Rng rng(23);
    for (int it = 0; it < 20; ++it) {
        PointCloud c = random_cloud(150, rng);
        const double v = rng.uniform(0.02, 0.2);
        const size_t base = voxel_downsample(c, v).cloud.size();
        const size_t twice = voxel_downsample(c, 2.0 * v).cloud.size();
        CHECK(twice <= base);
        CHECK(voxel_downsample(c, 4.0 * v).cloud.size() <= twice);
        CHECK(voxel_downsample(c, 3.0 * v).cloud.size() <= base);
    }
}

TEST_CASE("voxel centroids stay inside the member bounding box") {
    Rng rng(29);
    PointCloud c = random_cloud(300, rng);
    VoxelResult r = voxel_downsample(c, 0.3);
    std::vector<Vec3> lo(r.cloud.size(), {1e30, 1e30, 1e30});
    std::vector<Vec3> hi(r.cloud.size(), {-1e30, -1e30, -1e30});
    for (size_t i = 0; i < c.size(); ++i) {
        const auto row = static_cast<size_t>(r.assignment[i]);
        for (int a = 0; a < 3; ++a) {
            lo[row][a] = std::min(lo[row][a], c.points[i][a]);
            hi[row][a] = std::max(hi[row][a], c.points[i][a]);
        }
    }
    for (size_t j = 0; j < r.cloud.size(); ++j)
        for (int a = 0; a < 3; ++a) {
            CHECK(r.cloud.points[j][a] >= lo[j][a] - 1e-12);
            CHECK(r.cloud.points[j][a] <= hi[j][a] + 1e-12);
        }
}

TEST_CASE("every input point lands in exactly one voxel") {
    Rng rng(41);
    PointCloud c = random_cloud(120, rng);
    VoxelGrid grid = build_voxel_grid(c, 0.2);
    std::vector<int> seen(c.size(), 0);
    for (const auto& [key, members] : grid.cells)
        for (int64_t m : members) seen[static_cast<size_t>(m)]++;
    CHECK(std::count(seen.begin(), seen.end(), 1) == static_cast<long>(c.size()));
}

TEST_CASE("knn worked example") {
    PointCloud c;
    c.points = {{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
    const std::vector<int64_t> idx = knn(c, c, 2);
    CHECK(idx == std::vector<int64_t>{0, 1, 1, 0, 2, 1});
}

TEST_CASE("knn with k=1 returns each point itself") {
    Rng rng(31);
    PointCloud c = random_cloud(30, rng);
    const std::vector<int64_t> idx = knn(c, c, 1);
    for (int64_t i = 0; i < 30; ++i) CHECK(idx[static_cast<size_t>(i)] == i);
}

TEST_CASE("knn pads by repeating the nearest index") {
    PointCloud ref;
    ref.points = {{0, 0, 0}, {1, 0, 0}};
    PointCloud q;
    q.points = {{0.1, 0, 0}};
    const std::vector<int64_t> idx = knn(q, ref, 3);
    CHECK(idx == std::vector<int64_t>{0, 1, 0});
}

TEST_CASE("knn validation errors") {
    PointCloud c;
    c.points = {{0, 0, 0}};
    PointCloud empty;
    CHECK_THROWS_AS(knn(c, empty, 1), ValidationError);
    CHECK_THROWS_AS(knn(c, c, 0), ValidationError);
}

TEST_CASE("knn equals the exhaustive oracle index-for-index") {
    Rng rng(37);
    for (int it = 0; it < 50; ++it) {
        const int n = 1 + static_cast<int>(rng.uniform_int(256));
        const int m = 1 + static_cast<int>(rng.uniform_int(64));
        const int k = 1 + static_cast<int>(rng.uniform_int(32));
        PointCloud ref = random_cloud(n, rng);
        PointCloud query = random_cloud(m, rng);
        CHECK(knn(query, ref, k) == knn_oracle(query, ref, k));
    }
}
