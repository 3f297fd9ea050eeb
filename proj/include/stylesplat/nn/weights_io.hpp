#pragma once

#include "stylesplat/error.hpp"
#include "stylesplat/image.hpp"
#include "stylesplat/nn/network.hpp"
#include "stylesplat/scene_io.hpp"

#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace stylesplat::nn {

// Container layout (text header, then raw data):
//   EASTNET/1
//   normalize_mean <3 floats>
//   normalize_std <3 floats>
//   taps <names...>
//   layer conv <name> <in> <out>      one line per layer, in order
//   layer relu <name>
//   layer maxpool <name>
//   tensor <name> <d0,d1,...> <offset> <crc32 hex>
//   end
//   little-endian float32 tensor data; offsets are relative to the byte after "end\n".
// Conv layer L owns tensors "L.weight" (out,in,3,3) and "L.bias" (out).

inline constexpr const char* kWeightsMagic = "EASTNET/1";

namespace detail {

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, p, chunk);
        p += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

inline std::string shape_text(const std::vector<int>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s;
}

inline std::string float_text(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
    }
    return "?";
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_weights(const NetworkSpec& net) {
    net.validate();
    std::vector<std::uint8_t> data;
    std::ostringstream tensors;
    auto add_tensor = [&](const std::string& name, const std::vector<int>& shape, const std::vector<float>& values) {
        const std::size_t offset = data.size();
        for (float v : values) stylesplat::detail::put_f32(data, v);
        char crc[16];
        std::snprintf(crc, sizeof crc, "%08x", detail::crc32_of(data.data() + offset, data.size() - offset));
        tensors << "tensor " << name << ' ' << detail::shape_text(shape) << ' ' << offset << ' ' << crc << '\n';
    };

    std::ostringstream head;
    head << kWeightsMagic << '\n';
    head << "normalize_mean";
    for (float v : net.norm_mean) head << ' ' << detail::float_text(v);
    head << "\nnormalize_std";
    for (float v : net.norm_std) head << ' ' << detail::float_text(v);
    head << "\ntaps";
    for (const auto& t : net.taps) head << ' ' << t;
    head << '\n';
    for (const auto& l : net.layers) {
        head << "layer " << detail::kind_name(l.kind) << ' ' << l.name;
        if (l.kind == LayerKind::conv) {
            head << ' ' << l.in_channels << ' ' << l.out_channels;
            add_tensor(l.name + ".weight", {l.out_channels, l.in_channels, 3, 3}, l.weights);
            add_tensor(l.name + ".bias", {l.out_channels}, l.bias);
        }
        head << '\n';
    }
    head << tensors.str() << "end\n";
    const std::string h = head.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

inline NetworkSpec deserialize_weights(const std::vector<std::uint8_t>& bytes) {
    using stylesplat::detail::take_line;
    std::size_t pos = 0;
    if (bytes.empty()) throw ParseError("empty weights container", 0);
    if (const std::string first = take_line(bytes, pos); first != kWeightsMagic) {
        // A different container version is reported as such, anything else as garbage.
        if (first.rfind("EASTNET/", 0) == 0) throw VersionError("unsupported weights container", std::atoi(first.c_str() + 8));
        throw ParseError("not an EASTNET/1 container", 0);
    }

    struct TensorEntry {
        std::vector<int> shape;
        std::size_t offset = 0;
        std::uint32_t crc = 0;
    };
    NetworkSpec net;
    std::map<std::string, TensorEntry> entries;
    bool have_taps = false;
    while (true) {
        const std::size_t line_start = pos;
        const std::string line = take_line(bytes, pos);
        if (line == "end") break;
        std::istringstream in(line);
        std::string key;
        in >> key;
        if (key == "normalize_mean" || key == "normalize_std") {
            auto& dst = key == "normalize_mean" ? net.norm_mean : net.norm_std;
            for (float& v : dst)
                if (!(in >> v)) throw ParseError("bad " + key + " line", line_start);
        } else if (key == "taps") {
            std::string t;
            while (in >> t) net.taps.push_back(t);
            have_taps = true;
        } else if (key == "layer") {
            std::string kind;
            Layer l;
            if (!(in >> kind >> l.name)) throw ParseError("bad layer line", line_start);
            if (kind == "conv") {
                l.kind = LayerKind::conv;
                if (!(in >> l.in_channels >> l.out_channels) || l.in_channels < 1 || l.out_channels < 1)
                    throw ParseError("bad conv channel counts for " + l.name, line_start);
            } else if (kind == "relu") {
                l.kind = LayerKind::relu;
            } else if (kind == "maxpool") {
                l.kind = LayerKind::maxpool;
            } else {
                throw ParseError("unknown layer kind '" + kind + "'", line_start);
            }
            net.layers.push_back(std::move(l));
        } else if (key == "tensor") {
            std::string name, shape, crc;
            TensorEntry e;
            if (!(in >> name >> shape >> e.offset >> crc)) throw ParseError("bad tensor line", line_start);
            std::istringstream dims(shape);
            for (std::string d; std::getline(dims, d, ',');) e.shape.push_back(std::atoi(d.c_str()));
            e.crc = static_cast<std::uint32_t>(std::stoul(crc, nullptr, 16));
            entries[name] = std::move(e);
        } else if (!key.empty()) {
            throw ParseError("unknown header key '" + key + "'", line_start);
        }
    }
    if (!have_taps) net.taps = NetworkSpec::default_taps();
    const std::size_t data_start = pos;

    for (auto& l : net.layers) {
        if (l.kind != LayerKind::conv) continue;
        auto read = [&](const std::string& name, const std::vector<int>& expect, std::vector<float>& dst) {
            const auto it = entries.find(name);
            if (it == entries.end()) throw LoadError("weights container is missing tensor " + name);
            const TensorEntry& e = it->second;
            if (e.shape != expect)
                throw DimensionError("tensor " + name + " has shape (" + detail::shape_text(e.shape) + "), expected (" +
                                     detail::shape_text(expect) + ")");
            std::size_t count = 1;
            for (int d : expect) count *= static_cast<std::size_t>(d);
            const std::size_t begin = data_start + e.offset;
            if (begin + count * 4 > bytes.size() || begin < data_start)
                throw ParseError("tensor " + name + " data runs past end of file", bytes.size());
            if (detail::crc32_of(bytes.data() + begin, count * 4) != e.crc)
                throw CorruptionError("checksum mismatch in tensor " + name);
            dst.resize(count);
            for (std::size_t i = 0; i < count; ++i) dst[i] = stylesplat::detail::get_f32(bytes.data() + begin + 4 * i);
        };
        read(l.name + ".weight", {l.out_channels, l.in_channels, 3, 3}, l.weights);
        read(l.name + ".bias", {l.out_channels}, l.bias);
    }
    net.validate();
    return net;
}

inline void save_weights(const NetworkSpec& net, const std::filesystem::path& path) {
    const auto bytes = serialize_weights(net);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

inline NetworkSpec load_weights(const std::filesystem::path& path) {
    return deserialize_weights(stylesplat::detail::read_file_bytes(path));
}

}  // namespace stylesplat::nn
