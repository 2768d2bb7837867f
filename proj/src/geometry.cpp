#include "pvada/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pvada {

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
    if (cloud.empty()) throw ValidationError("normalize_unit_sphere: empty cloud");
    for (const Vec3& p : cloud.points)
        for (double v : p)
            if (!std::isfinite(v)) throw ValidationError("normalize_unit_sphere: non-finite coordinate");

    Vec3 centroid{0.0, 0.0, 0.0};
    for (const Vec3& p : cloud.points)
        for (int a = 0; a < 3; ++a) centroid[a] += p[a];
    for (int a = 0; a < 3; ++a) centroid[a] /= static_cast<double>(cloud.size());

    double max_norm2 = 0.0;
    for (const Vec3& p : cloud.points) {
        const double dx = p[0] - centroid[0], dy = p[1] - centroid[1], dz = p[2] - centroid[2];
        max_norm2 = std::max(max_norm2, dx * dx + dy * dy + dz * dz);
    }
    const double inv = max_norm2 > 0.0 ? 1.0 / std::sqrt(max_norm2) : 1.0;

    PointCloud out;
    out.label = cloud.label;
    out.points.reserve(cloud.size());
    for (const Vec3& p : cloud.points)
        out.points.push_back({(p[0] - centroid[0]) * inv, (p[1] - centroid[1]) * inv,
                              (p[2] - centroid[2]) * inv});
    return out;
}

VoxelGrid build_voxel_grid(const PointCloud& cloud, double voxel_size) {
    if (!(voxel_size > 0.0))
        throw ValidationError("voxel grid: voxel size must be positive, got " +
                              std::to_string(voxel_size));
    if (cloud.empty()) throw ValidationError("voxel grid: empty cloud");

    VoxelGrid grid;
    grid.voxel_size = voxel_size;
    grid.origin = cloud.points[0];
    for (const Vec3& p : cloud.points)
        for (int a = 0; a < 3; ++a) grid.origin[a] = std::min(grid.origin[a], p[a]);

    grid.cells.reserve(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.points[i];
        std::array<int64_t, 3> key;
        for (int a = 0; a < 3; ++a)
            key[a] = static_cast<int64_t>(std::floor((p[a] - grid.origin[a]) / voxel_size));
        grid.cells[key].push_back(static_cast<int64_t>(i));
    }
    return grid;
}

VoxelResult voxel_downsample(const PointCloud& cloud, double voxel_size) {
    VoxelGrid grid = build_voxel_grid(cloud, voxel_size);

    std::vector<std::array<int64_t, 3>> keys;
    keys.reserve(grid.cells.size());
    for (const auto& [key, members] : grid.cells) keys.push_back(key);
    std::sort(keys.begin(), keys.end());

    VoxelResult result;
    result.cloud.label = cloud.label;
    result.cloud.points.reserve(keys.size());
    result.assignment.assign(cloud.size(), -1);

    for (size_t row = 0; row < keys.size(); ++row) {
        std::vector<int64_t> members = grid.cells.at(keys[row]);
        // accumulate in coordinate order so the centroid does not depend on
        // the ordering of the input rows
        std::sort(members.begin(), members.end(), [&](int64_t a, int64_t b) {
            return cloud.points[static_cast<size_t>(a)] < cloud.points[static_cast<size_t>(b)];
        });
        Vec3 centroid{0.0, 0.0, 0.0};
        for (int64_t m : members) {
            result.assignment[static_cast<size_t>(m)] = static_cast<int64_t>(row);
            for (int a = 0; a < 3; ++a) centroid[a] += cloud.points[static_cast<size_t>(m)][a];
        }
        for (int a = 0; a < 3; ++a) centroid[a] /= static_cast<double>(members.size());
        result.cloud.points.push_back(centroid);
    }
    return result;
}

std::vector<int64_t> knn(const PointCloud& query, const PointCloud& reference, int k) {
    if (reference.empty()) throw ValidationError("knn: empty reference cloud");
    if (k < 1) throw ValidationError("knn: k must be >= 1, got " + std::to_string(k));

    const int64_t m = static_cast<int64_t>(query.size());
    const int64_t n = static_cast<int64_t>(reference.size());
    const int64_t take = std::min<int64_t>(k, n);

    // SoA reference coordinates so the distance loop vectorizes
    std::vector<double> rx(static_cast<size_t>(n)), ry(static_cast<size_t>(n)), rz(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
        rx[static_cast<size_t>(j)] = reference.points[static_cast<size_t>(j)][0];
        ry[static_cast<size_t>(j)] = reference.points[static_cast<size_t>(j)][1];
        rz[static_cast<size_t>(j)] = reference.points[static_cast<size_t>(j)][2];
    }

    std::vector<int64_t> out(static_cast<size_t>(m) * static_cast<size_t>(k));
    std::vector<double> d2(static_cast<size_t>(n));
    std::vector<std::pair<double, int64_t>> heap;
    heap.reserve(static_cast<size_t>(take));

    for (int64_t i = 0; i < m; ++i) {
        const double qx = query.points[static_cast<size_t>(i)][0];
        const double qy = query.points[static_cast<size_t>(i)][1];
        const double qz = query.points[static_cast<size_t>(i)][2];
        for (int64_t j = 0; j < n; ++j) {
            const double dx = rx[static_cast<size_t>(j)] - qx;
            const double dy = ry[static_cast<size_t>(j)] - qy;
            const double dz = rz[static_cast<size_t>(j)] - qz;
            d2[static_cast<size_t>(j)] = dx * dx + dy * dy + dz * dz;
        }

        // max-heap on (distance, index); final ascending order equals the
        // full-sort prefix because keys are unique
        heap.clear();
        for (int64_t j = 0; j < n; ++j) {
            const std::pair<double, int64_t> cand{d2[static_cast<size_t>(j)], j};
            if (static_cast<int64_t>(heap.size()) < take) {
                heap.push_back(cand);
                std::push_heap(heap.begin(), heap.end());
            } else if (cand < heap.front()) {
                std::pop_heap(heap.begin(), heap.end());
                heap.back() = cand;
                std::push_heap(heap.begin(), heap.end());
            }
        }
        std::sort_heap(heap.begin(), heap.end());

        int64_t* row = out.data() + i * k;
        for (int64_t j = 0; j < take; ++j) row[j] = heap[static_cast<size_t>(j)].second;
        for (int64_t j = take; j < k; ++j) row[j] = heap[0].second;
    }
    return out;
}

}  // namespace pvada
