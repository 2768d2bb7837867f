#include "pvada/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pvada/errors.hpp"

namespace pvada {

namespace fs = std::filesystem;

std::string shape_name(ShapeClass c) {
    switch (c) {
        case ShapeClass::Sphere: return "sphere";
        case ShapeClass::Cube: return "cube";
        case ShapeClass::Cylinder: return "cylinder";
        case ShapeClass::Cone: return "cone";
        case ShapeClass::Torus: return "torus";
        case ShapeClass::PlaneCross: return "plane-cross";
    }
    throw ValidationError("shape_name: bad class");
}

ShapeClass shape_from_name(const std::string& name) {
    for (ShapeClass c : all_shape_classes())
        if (shape_name(c) == name) return c;
    throw ValidationError("unknown shape class '" + name + "'");
}

const std::vector<ShapeClass>& all_shape_classes() {
    static const std::vector<ShapeClass> classes = {ShapeClass::Sphere,   ShapeClass::Cube,
                                                    ShapeClass::Cylinder, ShapeClass::Cone,
                                                    ShapeClass::Torus,    ShapeClass::PlaneCross};
    return classes;
}

namespace {

Vec3 sample_sphere(Rng& rng) { return rng.unit_vector(); }

Vec3 sample_cube(Rng& rng) {
    const int64_t face = rng.uniform_int(6);
    const double u = rng.uniform(-1.0, 1.0);
    const double v = rng.uniform(-1.0, 1.0);
    const double w = face % 2 == 0 ? -1.0 : 1.0;
    switch (face / 2) {
        case 0: return {w, u, v};
        case 1: return {u, w, v};
        default: return {u, v, w};
    }
}

Vec3 sample_cylinder(Rng& rng) {
    constexpr double r = 0.7, h = 1.0;  // half-height
    const double lateral_area = 2.0 * M_PI * r * (2.0 * h);
    const double cap_area = 2.0 * M_PI * r * r;
    if (rng.uniform() < lateral_area / (lateral_area + cap_area)) {
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        const double z = rng.uniform(-h, h);
        return {r * std::cos(theta), r * std::sin(theta), z};
    }
    const double z = rng.uniform() < 0.5 ? -h : h;
    const double rr = r * std::sqrt(rng.uniform());
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    return {rr * std::cos(theta), rr * std::sin(theta), z};
}

Vec3 sample_cone(Rng& rng) {
    constexpr double r = 1.0, h = 2.0;  // apex at z=1, base at z=-1
    const double slant = std::sqrt(r * r + h * h);
    const double lateral_area = M_PI * r * slant;
    const double base_area = M_PI * r * r;
    if (rng.uniform() < lateral_area / (lateral_area + base_area)) {
        const double u = std::sqrt(rng.uniform());  // area grows with radius
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        return {u * r * std::cos(theta), u * r * std::sin(theta), 1.0 - u * h};
    }
    const double rr = r * std::sqrt(rng.uniform());
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    return {rr * std::cos(theta), rr * std::sin(theta), -1.0};
}

Vec3 sample_torus(Rng& rng) {
    constexpr double R = 0.7, r = 0.25;
    const double theta = rng.uniform(0.0, 2.0 * M_PI);
    double phi;
    for (;;) {  // density along the tube is proportional to R + r*cos(phi)
        phi = rng.uniform(0.0, 2.0 * M_PI);
        if (rng.uniform() * (R + r) <= R + r * std::cos(phi)) break;
    }
    const double ring = R + r * std::cos(phi);
    return {ring * std::cos(theta), ring * std::sin(theta), r * std::sin(phi)};
}

Vec3 sample_plane_cross(Rng& rng) {
    const double u = rng.uniform(-1.0, 1.0);
    const double v = rng.uniform(-1.0, 1.0);
    if (rng.uniform() < 0.5) return {u, 0.0, v};
    return {0.0, u, v};
}

}  // namespace

PointCloud sample_shape_surface(ShapeClass shape, int n_points, Rng& rng) {
    if (n_points < 1) throw ValidationError("sample_shape_surface: n_points must be >= 1");
    PointCloud cloud;
    cloud.points.reserve(static_cast<size_t>(n_points));
    for (int i = 0; i < n_points; ++i) {
        switch (shape) {
            case ShapeClass::Sphere: cloud.points.push_back(sample_sphere(rng)); break;
            case ShapeClass::Cube: cloud.points.push_back(sample_cube(rng)); break;
            case ShapeClass::Cylinder: cloud.points.push_back(sample_cylinder(rng)); break;
            case ShapeClass::Cone: cloud.points.push_back(sample_cone(rng)); break;
            case ShapeClass::Torus: cloud.points.push_back(sample_torus(rng)); break;
            case ShapeClass::PlaneCross: cloud.points.push_back(sample_plane_cross(rng)); break;
        }
    }
    return cloud;
}

namespace {

void snap_to_f32(PointCloud& cloud) {
    // gcc 11 + AVX-512 folds a (double)(float)x round-trip away in the loop
    // epilogue; forcing the values through float storage keeps the narrowing
    std::vector<float> tmp(cloud.size() * 3);
    for (size_t i = 0; i < cloud.size(); ++i)
        for (int a = 0; a < 3; ++a)
            tmp[i * 3 + static_cast<size_t>(a)] = static_cast<float>(cloud.points[i][static_cast<size_t>(a)]);
    for (size_t i = 0; i < cloud.size(); ++i)
        for (int a = 0; a < 3; ++a)
            cloud.points[i][static_cast<size_t>(a)] =
                static_cast<double>(tmp[i * 3 + static_cast<size_t>(a)]);
}

PointCloud make_instance(ShapeClass shape, int n_points, int32_t label, Rng& rng) {
    PointCloud cloud = sample_shape_surface(shape, n_points, rng);
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    const double c = std::cos(angle), s = std::sin(angle);
    const Vec3 scale{rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1)};
    for (Vec3& p : cloud.points) {
        const double x = c * p[0] - s * p[1];
        const double y = s * p[0] + c * p[1];
        p = {x * scale[0], y * scale[1], p[2] * scale[2]};
    }
    cloud = normalize_unit_sphere(cloud);
    snap_to_f32(cloud);
    cloud.label = label;
    return cloud;
}

}  // namespace

Dataset generate_dataset(const std::vector<ShapeClass>& classes, int per_class, int n_points,
                         uint64_t seed) {
    if (classes.size() < 2) throw ValidationError("generate_dataset: need at least 2 classes");
    if (per_class < 2) throw ValidationError("generate_dataset: per_class must be >= 2");
    if (n_points < 8) throw ValidationError("generate_dataset: n_points must be >= 8");

    Dataset ds;
    for (ShapeClass c : classes) ds.class_names.push_back(shape_name(c));

    const int train_per_class = (per_class * 4) / 5;
    for (size_t ci = 0; ci < classes.size(); ++ci) {
        for (int i = 0; i < per_class; ++i) {
            Rng rng(mix_seed({seed, static_cast<uint64_t>(ci), static_cast<uint64_t>(i)}));
            PointCloud cloud =
                make_instance(classes[ci], n_points, static_cast<int32_t>(ci), rng);
            (i < train_per_class ? ds.train : ds.test).push_back(std::move(cloud));
        }
    }
    return ds;
}

// --- file formats ----------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'P', 'C', 'L', 'D', '1'};

template <class T>
void put(std::string& buf, T v) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    buf.append(bytes, sizeof(T));  // little-endian host assumed
}

template <class T>
T take(const std::string& buf, size_t& off, const fs::path& path) {
    if (off + sizeof(T) > buf.size())
        throw ParseError(path.string() + ": truncated at byte " + std::to_string(off) +
                         ", expected " + std::to_string(sizeof(T)) + " more bytes");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

void write_cloud(const fs::path& path, const PointCloud& cloud) {
    std::string buf;
    buf.reserve(16 + cloud.size() * 12);
    buf.append(kMagic, sizeof(kMagic));
    put<uint32_t>(buf, static_cast<uint32_t>(cloud.size()));
    put<uint8_t>(buf, cloud.label.has_value() ? 1 : 0);
    if (cloud.label.has_value()) put<int32_t>(buf, *cloud.label);
    for (const Vec3& p : cloud.points)
        for (int a = 0; a < 3; ++a) put<float>(buf, static_cast<float>(p[a]));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_cloud: cannot open " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write_cloud: write failed for " + path.string());
}

PointCloud read_cloud(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_cloud: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw ParseError(path.string() + ": bad magic at byte 0, expected PCLD1");
    size_t off = sizeof(kMagic);
    const uint32_t n = take<uint32_t>(buf, off, path);
    const uint8_t has_label = take<uint8_t>(buf, off, path);
    PointCloud cloud;
    if (has_label) cloud.label = take<int32_t>(buf, off, path);

    const size_t payload = static_cast<size_t>(n) * 12;
    if (buf.size() - off != payload)
        throw ParseError(path.string() + ": payload length mismatch, header declares " +
                         std::to_string(n) + " points (" + std::to_string(payload) +
                         " bytes) but " + std::to_string(buf.size() - off) + " bytes follow");
    cloud.points.reserve(n);
    for (uint32_t i = 0; i < n; ++i) {
        Vec3 p;
        for (int a = 0; a < 3; ++a) p[a] = static_cast<double>(take<float>(buf, off, path));
        cloud.points.push_back(p);
    }
    return cloud;
}

PointCloud read_cloud_xyz(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_cloud_xyz: cannot open " + path.string());
    PointCloud cloud;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ls(line);
        Vec3 p;
        if (!(ls >> p[0] >> p[1] >> p[2]))
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected three numbers, got '" + line + "'");
        std::string extra;
        if (ls >> extra)
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": trailing token '" + extra + "'");
        cloud.points.push_back(p);
    }
    if (cloud.empty()) throw ParseError(path.string() + ": no points found");
    return cloud;
}

PointCloud load_cloud_auto(const fs::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".xyz" || ext == ".txt") return read_cloud_xyz(path);
    return read_cloud(path);
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["classes"] = dataset.class_names;
    manifest["train_count"] = dataset.train.size();
    manifest["test_count"] = dataset.test.size();
    {
        std::ofstream mf(dir / "manifest.json");
        if (!mf) throw IoError("save_dataset: cannot write manifest in " + dir.string());
        mf << manifest.dump(2) << "\n";
    }

    auto save_split = [&](const std::string& split, const std::vector<PointCloud>& clouds) {
        std::vector<int> counter(dataset.class_names.size(), 0);
        for (const PointCloud& cloud : clouds) {
            if (!cloud.label || *cloud.label < 0 ||
                static_cast<size_t>(*cloud.label) >= dataset.class_names.size())
                throw ValidationError("save_dataset: cloud without a valid label");
            const std::string& cls = dataset.class_names[static_cast<size_t>(*cloud.label)];
            fs::create_directories(dir / split / cls);
            char name[16];
            std::snprintf(name, sizeof(name), "%04d.pcld", counter[static_cast<size_t>(*cloud.label)]++);
            write_cloud(dir / split / cls / name, cloud);
        }
    };
    save_split("train", dataset.train);
    save_split("test", dataset.test);
}

Dataset load_dataset(const fs::path& dir) {
    Dataset ds;
    const fs::path manifest_path = dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        std::ifstream mf(manifest_path);
        nlohmann::json manifest = nlohmann::json::parse(mf);
        ds.class_names = manifest.at("classes").get<std::vector<std::string>>();
    } else {
        for (const auto& entry : fs::directory_iterator(dir / "train"))
            if (entry.is_directory()) ds.class_names.push_back(entry.path().filename().string());
        std::sort(ds.class_names.begin(), ds.class_names.end());
    }
    if (ds.class_names.empty()) throw ValidationError("load_dataset: no classes found in " + dir.string());

    auto load_split = [&](const std::string& split, std::vector<PointCloud>& out) {
        for (size_t ci = 0; ci < ds.class_names.size(); ++ci) {
            const fs::path cls_dir = dir / split / ds.class_names[ci];
            if (!fs::exists(cls_dir)) continue;
            std::vector<fs::path> files;
            for (const auto& entry : fs::directory_iterator(cls_dir))
                if (entry.path().extension() == ".pcld") files.push_back(entry.path());
            std::sort(files.begin(), files.end());
            for (const fs::path& f : files) {
                PointCloud cloud = read_cloud(f);
                cloud.label = static_cast<int32_t>(ci);
                out.push_back(std::move(cloud));
            }
        }
    };
    load_split("train", ds.train);
    load_split("test", ds.test);
    return ds;
}

}  // namespace pvada
