#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pvada/geometry.hpp"
#include "pvada/rng.hpp"

namespace pvada {

enum class ShapeClass : int { Sphere = 0, Cube, Cylinder, Cone, Torus, PlaneCross };

std::string shape_name(ShapeClass c);
ShapeClass shape_from_name(const std::string& name);
const std::vector<ShapeClass>& all_shape_classes();

// Raw surface sample of the canonical shape: no rotation, no anisotropy,
// no normalization. Per-shape geometric invariants (sphere radius, torus
// tube distance, ...) hold exactly on this output.
PointCloud sample_shape_surface(ShapeClass shape, int n_points, Rng& rng);

struct Dataset {
    std::vector<PointCloud> train;
    std::vector<PointCloud> test;
    std::vector<std::string> class_names;
};

// Surface-sampled clouds with a random rotation about the up axis and mild
// anisotropy, normalized into the unit sphere, coordinates snapped to f32,
// deterministic 80/20 split per class.
Dataset generate_dataset(const std::vector<ShapeClass>& classes, int per_class, int n_points,
                         uint64_t seed);

// Binary cloud file: "PCLD1", u32 point count, u8 label flag, i32 label
// (when flagged), then N x 3 little-endian f32.
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_cloud(const std::filesystem::path& path);

// Text reader: one "x y z" per line; blank lines and '#' comments allowed.
PointCloud read_cloud_xyz(const std::filesystem::path& path);

// Dispatch on extension: .xyz/.txt -> text, anything else -> binary.
PointCloud load_cloud_auto(const std::filesystem::path& path);

// Directory layout <split>/<class>/<index>.pcld plus a manifest with the
// class order.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace pvada
