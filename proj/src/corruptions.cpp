#include "pvada/corruptions.hpp"

#include <algorithm>
#include <cmath>

#include "pvada/rng.hpp"

namespace pvada {

std::string corruption_name(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::Scale: return "scale";
        case CorruptionKind::Jitter: return "jitter";
        case CorruptionKind::DropGlobal: return "drop_global";
        case CorruptionKind::DropLocal: return "drop_local";
        case CorruptionKind::AddGlobal: return "add_global";
        case CorruptionKind::AddLocal: return "add_local";
        case CorruptionKind::Rotate: return "rotate";
        case CorruptionKind::Clean: return "clean";
    }
    throw ValidationError("corruption_name: bad kind");
}

CorruptionKind corruption_from_name(const std::string& name) {
    for (int k = 0; k <= static_cast<int>(CorruptionKind::Clean); ++k) {
        const auto kind = static_cast<CorruptionKind>(k);
        if (corruption_name(kind) == name) return kind;
    }
    throw ValidationError("unknown corruption kind '" + name + "'");
}

std::string CorruptionSet::name() const {
    if (kind == CorruptionKind::Clean) return "clean";
    return corruption_name(kind) + "_" + std::to_string(severity);
}

namespace {

void check_spec(const PointCloud& cloud, const CorruptionSpec& spec) {
    if (cloud.empty()) throw ValidationError("corrupt: empty cloud");
    if (spec.kind == CorruptionKind::Clean) return;
    if (spec.severity < 1 || spec.severity > kNumSeverities)
        throw ValidationError("corrupt: severity " + std::to_string(spec.severity) +
                              " outside [1," + std::to_string(kNumSeverities) + "]");
}

PointCloud jitter(const PointCloud& cloud, double sigma, Rng& rng) {
    PointCloud out = cloud;
    for (Vec3& p : out.points)
        for (int a = 0; a < 3; ++a) p[a] += rng.normal(0.0, sigma);
    return out;
}

PointCloud anisotropic_scale(const PointCloud& cloud, double delta, Rng& rng) {
    const double hi = 1.0 + delta;
    const double lo = 1.0 / hi;
    Vec3 s{rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
    PointCloud out = cloud;
    for (Vec3& p : out.points)
        for (int a = 0; a < 3; ++a) p[a] *= s[a];
    return out;
}

PointCloud rotate(const PointCloud& cloud, double max_degrees, Rng& rng) {
    const Vec3 u = rng.unit_vector();
    const double angle = rng.uniform(0.0, max_degrees * M_PI / 180.0);
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    // Rodrigues rotation matrix
    const double R[3][3] = {
        {c + u[0] * u[0] * t, u[0] * u[1] * t - u[2] * s, u[0] * u[2] * t + u[1] * s},
        {u[1] * u[0] * t + u[2] * s, c + u[1] * u[1] * t, u[1] * u[2] * t - u[0] * s},
        {u[2] * u[0] * t - u[1] * s, u[2] * u[1] * t + u[0] * s, c + u[2] * u[2] * t},
    };
    PointCloud out = cloud;
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.points[i];
        for (int a = 0; a < 3; ++a)
            out.points[i][a] = R[a][0] * p[0] + R[a][1] * p[1] + R[a][2] * p[2];
    }
    return out;
}

PointCloud drop_global(const PointCloud& cloud, int severity, const CorruptionParams& params,
                       Rng& rng) {
    const int64_t n = static_cast<int64_t>(cloud.size());
    const int64_t keep = std::lround(
        static_cast<double>(n) * (1.0 - params.drop_global_fraction_per_severity * severity));
    if (keep < 1)
        throw ValidationError("corrupt: drop_global would remove all " + std::to_string(n) +
                              " points");
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    rng.shuffle(idx);
    idx.resize(static_cast<size_t>(keep));
    std::sort(idx.begin(), idx.end());  // keep a stable subset

    PointCloud out;
    out.label = cloud.label;
    out.points.reserve(idx.size());
    for (int64_t i : idx) out.points.push_back(cloud.points[static_cast<size_t>(i)]);
    return out;
}

PointCloud drop_local(const PointCloud& cloud, int severity, const CorruptionParams& params,
                      Rng& rng) {
    const int64_t n = static_cast<int64_t>(cloud.size());
    int64_t budget = static_cast<int64_t>(params.drop_local_per_severity) * severity;
    if (budget >= n)
        throw ValidationError("corrupt: drop_local count " + std::to_string(budget) +
                              " >= cloud size " + std::to_string(n));

    std::vector<char> alive(static_cast<size_t>(n), 1);
    std::vector<int64_t> alive_idx;
    while (budget > 0) {
        alive_idx.clear();
        for (int64_t i = 0; i < n; ++i)
            if (alive[static_cast<size_t>(i)]) alive_idx.push_back(i);

        const int64_t center = alive_idx[static_cast<size_t>(
            rng.uniform_int(static_cast<int64_t>(alive_idx.size())))];
        const int64_t cap = std::min<int64_t>(budget, params.max_cluster);
        const int64_t cluster = 1 + rng.uniform_int(cap);

        // the `cluster` alive points nearest to the chosen center (which is
        // its own nearest neighbor) form one removed patch
        const Vec3& cp = cloud.points[static_cast<size_t>(center)];
        std::vector<std::pair<double, int64_t>> cand;
        cand.reserve(alive_idx.size());
        for (int64_t i : alive_idx) {
            const Vec3& p = cloud.points[static_cast<size_t>(i)];
            const double dx = p[0] - cp[0], dy = p[1] - cp[1], dz = p[2] - cp[2];
            cand.emplace_back(dx * dx + dy * dy + dz * dz, i);
        }
        const auto mid = cand.begin() + static_cast<int64_t>(cluster);
        std::partial_sort(cand.begin(), mid, cand.end());
        for (auto it = cand.begin(); it != mid; ++it) alive[static_cast<size_t>(it->second)] = 0;
        budget -= cluster;
    }

    PointCloud out;
    out.label = cloud.label;
    for (int64_t i = 0; i < n; ++i)
        if (alive[static_cast<size_t>(i)]) out.points.push_back(cloud.points[static_cast<size_t>(i)]);
    return out;
}

PointCloud add_global(const PointCloud& cloud, int severity, const CorruptionParams& params,
                      Rng& rng) {
    PointCloud out = cloud;
    const int64_t count = static_cast<int64_t>(params.add_global_per_severity) * severity;
    out.points.reserve(cloud.size() + static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
        const Vec3 dir = rng.unit_vector();
        const double r = std::cbrt(rng.uniform());  // uniform in the ball
        out.points.push_back({r * dir[0], r * dir[1], r * dir[2]});
    }
    return out;
}

PointCloud add_local(const PointCloud& cloud, int severity, const CorruptionParams& params,
                     Rng& rng) {
    PointCloud out = cloud;
    int64_t budget = static_cast<int64_t>(params.add_local_per_severity) * severity;
    out.points.reserve(cloud.size() + static_cast<size_t>(budget));
    while (budget > 0) {
        const Vec3& center =
            cloud.points[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(cloud.size())))];
        const int64_t cap = std::min<int64_t>(budget, params.max_cluster);
        const int64_t cluster = 1 + rng.uniform_int(cap);
        for (int64_t i = 0; i < cluster; ++i)
            out.points.push_back({center[0] + rng.normal(0.0, params.add_local_blob_sigma),
                                  center[1] + rng.normal(0.0, params.add_local_blob_sigma),
                                  center[2] + rng.normal(0.0, params.add_local_blob_sigma)});
        budget -= cluster;
    }
    return out;
}

}  // namespace

PointCloud corrupt(const PointCloud& cloud, const CorruptionSpec& spec,
                   const CorruptionParams& params) {
    check_spec(cloud, spec);
    if (spec.kind == CorruptionKind::Clean) return cloud;

    Rng rng(mix_seed({spec.seed, static_cast<uint64_t>(spec.kind),
                      static_cast<uint64_t>(spec.severity)}));
    PointCloud out;
    switch (spec.kind) {
        case CorruptionKind::Scale:
            out = anisotropic_scale(cloud, params.scale_delta_per_severity * spec.severity, rng);
            if (params.renormalize_scale) out = normalize_unit_sphere(out);
            break;
        case CorruptionKind::Jitter:
            out = jitter(cloud, params.jitter_sigma_per_severity * spec.severity, rng);
            break;
        case CorruptionKind::DropGlobal:
            out = drop_global(cloud, spec.severity, params, rng);
            break;
        case CorruptionKind::DropLocal:
            out = drop_local(cloud, spec.severity, params, rng);
            break;
        case CorruptionKind::AddGlobal:
            out = add_global(cloud, spec.severity, params, rng);
            break;
        case CorruptionKind::AddLocal:
            out = add_local(cloud, spec.severity, params, rng);
            break;
        case CorruptionKind::Rotate:
            out = rotate(cloud, params.rotate_degrees_per_severity * spec.severity, rng);
            break;
        case CorruptionKind::Clean:
            out = cloud;
            break;
    }
    if (params.renormalize_all && spec.kind != CorruptionKind::Scale)
        out = normalize_unit_sphere(out);
    return out;
}

uint64_t suite_cloud_seed(uint64_t seed, CorruptionKind kind, int severity, size_t index) {
    return mix_seed({seed, static_cast<uint64_t>(kind), static_cast<uint64_t>(severity),
                     static_cast<uint64_t>(index)});
}

void corruption_suite(const std::vector<PointCloud>& clouds, uint64_t seed,
                      const CorruptionParams& params,
                      const std::function<void(CorruptionSet&&)>& emit) {
    if (clouds.empty()) throw ValidationError("corruption_suite: empty input");

    CorruptionSet clean;
    clean.kind = CorruptionKind::Clean;
    clean.severity = 0;
    clean.clouds = clouds;
    emit(std::move(clean));

    for (int k = 0; k < kNumAtomicCorruptions; ++k) {
        const auto kind = static_cast<CorruptionKind>(k);
        for (int severity = 1; severity <= kNumSeverities; ++severity) {
            CorruptionSet set;
            set.kind = kind;
            set.severity = severity;
            set.clouds.reserve(clouds.size());
            for (size_t i = 0; i < clouds.size(); ++i) {
                CorruptionSpec spec{kind, severity, suite_cloud_seed(seed, kind, severity, i)};
                set.clouds.push_back(corrupt(clouds[i], spec, params));
            }
            emit(std::move(set));
        }
    }
}

}  // namespace pvada
