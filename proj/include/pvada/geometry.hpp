#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "pvada/errors.hpp"

namespace pvada {

using Vec3 = std::array<double, 3>;

struct PointCloud {
    std::vector<Vec3> points;
    std::optional<int32_t> label;

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

// Center at the origin and scale the farthest point onto the unit sphere.
// Identity scaling when all points coincide.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

struct CellKeyHash {
    size_t operator()(const std::array<int64_t, 3>& c) const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (int64_t v : c) {
            h ^= static_cast<uint64_t>(v);
            h *= 0x100000001b3ull;
        }
        return static_cast<size_t>(h);
    }
};

// Hash-grid partition: cell(p) = floor((p - origin)/voxel_size), with
// origin the componentwise minimum of the cloud.
struct VoxelGrid {
    double voxel_size = 0.0;
    Vec3 origin{0.0, 0.0, 0.0};
    std::unordered_map<std::array<int64_t, 3>, std::vector<int64_t>, CellKeyHash> cells;
};

VoxelGrid build_voxel_grid(const PointCloud& cloud, double voxel_size);

struct VoxelResult {
    PointCloud cloud;                  // one centroid per occupied cell,
                                       // cells in lexicographic order
    std::vector<int64_t> assignment;   // input index -> output row
};

VoxelResult voxel_downsample(const PointCloud& cloud, double voxel_size);

// For each query point, the k reference indices nearest by Euclidean
// distance, each row sorted by (distance, index). When the reference has
// fewer than k points the nearest index pads the tail. Returns a row-major
// M x k index matrix.
std::vector<int64_t> knn(const PointCloud& query, const PointCloud& reference, int k);

}  // namespace pvada
