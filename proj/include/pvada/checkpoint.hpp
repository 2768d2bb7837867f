#pragma once

// Versioned binary checkpoint: magic "PVADA1", a JSON config block, then
// named tensors (name length + name + dtype + shape + little-endian values),
// written in registry order so identical state produces identical bytes.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pvada/model.hpp"

namespace pvada {

namespace detail {

inline constexpr char kCheckpointMagic[6] = {'P', 'V', 'A', 'D', 'A', '1'};
inline constexpr uint32_t kCheckpointVersion = 1;

template <class T>
void put_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get_raw(std::istream& in, const std::string& what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("checkpoint: truncated while reading " + what);
    return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open " + path.string());

    out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
    detail::put_raw(out, detail::kCheckpointVersion);

    const std::string config = nlohmann::json(params.config).dump();
    detail::put_raw(out, static_cast<uint32_t>(config.size()));
    out.write(config.data(), static_cast<std::streamsize>(config.size()));

    uint32_t count = 0;
    for_each_state(const_cast<ModelParams<T>&>(params),
                   [&](const std::string&, Tensor<T>&) { ++count; });
    detail::put_raw(out, count);

    for_each_state(const_cast<ModelParams<T>&>(params), [&](const std::string& name, Tensor<T>& t) {
        detail::put_raw(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_raw(out, static_cast<uint8_t>(sizeof(T)));
        detail::put_raw(out, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape()) detail::put_raw(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(t.ptr()),
                  static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
    });
    if (!out) throw IoError("save_checkpoint: write failed for " + path.string());
}

inline ModelConfig read_checkpoint_config(std::istream& in, const std::string& path) {
    char magic[sizeof(detail::kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
        throw ParseError(path + ": bad checkpoint magic, expected PVADA1");
    const auto version = detail::get_raw<uint32_t>(in, "version");
    if (version != detail::kCheckpointVersion)
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    const auto config_len = detail::get_raw<uint32_t>(in, "config length");
    std::string config_text(config_len, '\0');
    in.read(config_text.data(), config_len);
    if (!in) throw ParseError(path + ": truncated config block");
    return nlohmann::json::parse(config_text).get<ModelConfig>();
}

inline ModelConfig peek_checkpoint_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path.string());
    return read_checkpoint_config(in, path.string());
}

template <class T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
    const ModelConfig cfg = read_checkpoint_config(in, path.string());

    struct Stored {
        Shape shape;
        std::vector<double> values;
    };
    std::map<std::string, Stored> stored;
    const auto count = detail::get_raw<uint32_t>(in, "tensor count");
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::get_raw<uint32_t>(in, "name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw ParseError(path.string() + ": truncated tensor name");
        const auto dtype = detail::get_raw<uint8_t>(in, "dtype");
        if (dtype != 4 && dtype != 8)
            throw ParseError(path.string() + ": tensor '" + name + "' has unknown dtype " +
                             std::to_string(dtype));
        const auto ndim = detail::get_raw<uint32_t>(in, "rank");
        Stored s;
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            s.shape.push_back(detail::get_raw<uint32_t>(in, "dimension"));
            numel *= s.shape.back();
        }
        s.values.resize(static_cast<size_t>(numel));
        if (dtype == 4) {
            std::vector<float> tmp(static_cast<size_t>(numel));
            in.read(reinterpret_cast<char*>(tmp.data()),
                    static_cast<std::streamsize>(numel * 4));
            for (size_t j = 0; j < tmp.size(); ++j) s.values[j] = static_cast<double>(tmp[j]);
        } else {
            in.read(reinterpret_cast<char*>(s.values.data()),
                    static_cast<std::streamsize>(numel * 8));
        }
        if (!in) throw ParseError(path.string() + ": truncated payload for tensor '" + name + "'");
        stored.emplace(std::move(name), std::move(s));
    }

    ModelParams<T> params = init_params<T>(cfg, 0);
    size_t used = 0;
    for_each_state(params, [&](const std::string& name, Tensor<T>& t) {
        auto it = stored.find(name);
        if (it == stored.end())
            throw ParseError(path.string() + ": checkpoint is missing tensor '" + name + "'");
        if (it->second.shape != t.shape())
            throw ParseError(path.string() + ": tensor '" + name + "' has shape " +
                             shape_str(it->second.shape) + ", expected " + shape_str(t.shape()));
        for (int64_t j = 0; j < t.numel(); ++j)
            t.data()[static_cast<size_t>(j)] = static_cast<T>(it->second.values[static_cast<size_t>(j)]);
        ++used;
    });
    if (used != stored.size())
        throw ParseError(path.string() + ": checkpoint holds " + std::to_string(stored.size()) +
                         " tensors but the model uses " + std::to_string(used));
    return params;
}

}  // namespace pvada
