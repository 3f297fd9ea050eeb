#pragma once

#include "stylesplat/error.hpp"
#include "stylesplat/scene.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace stylesplat {

inline constexpr int kSceneFormatVersion = 1;
inline constexpr std::size_t kFloatsPerGaussian = 3 + 3 + 4 + 1 + kShCoeffCount;

// Layout:
//   EASTSPLAT\n
//   version <int>\n
//   count <int>\n
//   sh_degree <int>\n
//   created_by <text to end of line>\n
//   bounds <6 hex floats>\n
//   end\n
//   count * 59 little-endian float32: position, log_scale, rotation, opacity_logit, sh_coeffs

namespace detail {

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

inline float get_f32(const std::uint8_t* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
    return std::bit_cast<float>(bits);
}

inline std::string hexfloat(float v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%a", static_cast<double>(v));
    return buf;
}

/// Reads one '\n'-terminated line starting at pos; throws ParseError if the stream ends first.
inline std::string take_line(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    const std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    if (pos >= bytes.size()) throw ParseError("unterminated header line", start);
    std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(pos));
    ++pos;
    return line;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_scene(const Scene& scene) {
    scene.validate();
    std::ostringstream header;
    header << "EASTSPLAT\n"
           << "version " << kSceneFormatVersion << "\n"
           << "count " << scene.gaussians.size() << "\n"
           << "sh_degree " << scene.metadata.sh_degree << "\n"
           << "created_by " << scene.metadata.created_by << "\n"
           << "bounds";
    for (int i = 0; i < 3; ++i) header << ' ' << detail::hexfloat(scene.bounds.min[i]);
    for (int i = 0; i < 3; ++i) header << ' ' << detail::hexfloat(scene.bounds.max[i]);
    header << "\nend\n";
    const std::string h = header.str();
    std::vector<std::uint8_t> out(h.begin(), h.end());
    out.reserve(out.size() + scene.gaussians.size() * kFloatsPerGaussian * 4);
    for (const auto& g : scene.gaussians) {
        for (int i = 0; i < 3; ++i) detail::put_f32(out, g.position[i]);
        for (int i = 0; i < 3; ++i) detail::put_f32(out, g.log_scale[i]);
        for (int i = 0; i < 4; ++i) detail::put_f32(out, g.rotation[i]);
        detail::put_f32(out, g.opacity_logit);
        for (float c : g.sh_coeffs) detail::put_f32(out, c);
    }
    return out;
}

inline Scene deserialize_scene(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    if (detail::take_line(bytes, pos) != "EASTSPLAT") throw ParseError("missing EASTSPLAT magic", 0);

    auto keyed = [&](const std::string& key) {
        const std::size_t at = pos;
        std::string line = detail::take_line(bytes, pos);
        if (line.rfind(key + " ", 0) != 0) throw ParseError("expected '" + key + "' header field", at);
        return std::pair{line.substr(key.size() + 1), at};
    };
    auto to_int = [](const std::pair<std::string, std::size_t>& field) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(field.first, &used);
            if (used != field.first.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ParseError("malformed integer '" + field.first + "'", field.second);
        }
    };

    const auto version = to_int(keyed("version"));
    if (version != kSceneFormatVersion)
        throw VersionError("scene file version not supported by this reader (expects " +
                               std::to_string(kSceneFormatVersion) + ")",
                           static_cast<int>(version));
    const auto count_field = keyed("count");
    const auto count = to_int(count_field);
    if (count <= 0) throw ParseError("scene must contain at least one Gaussian", count_field.second);

    Scene scene;
    scene.metadata.sh_degree = static_cast<int>(to_int(keyed("sh_degree")));
    scene.metadata.created_by = keyed("created_by").first;
    {
        const auto field = keyed("bounds");
        std::istringstream in(field.first);
        float v[6];
        for (float& x : v) {
            std::string tok;
            if (!(in >> tok)) throw ParseError("bounds needs 6 values", field.second);
            x = std::strtof(tok.c_str(), nullptr);
        }
        scene.bounds.min = Vec3<float>(v[0], v[1], v[2]);
        scene.bounds.max = Vec3<float>(v[3], v[4], v[5]);
    }
    {
        const std::size_t at = pos;
        if (detail::take_line(bytes, pos) != "end") throw ParseError("expected 'end' header terminator", at);
    }

    const std::size_t needed = static_cast<std::size_t>(count) * kFloatsPerGaussian * 4;
    if (bytes.size() - pos < needed) {
        const std::size_t whole = (bytes.size() - pos) / (kFloatsPerGaussian * 4);
        throw ParseError("truncated Gaussian payload (" + std::to_string(whole) + " of " + std::to_string(count) +
                             " records complete)",
                         bytes.size());
    }
    if (bytes.size() - pos > needed) throw ParseError("trailing bytes after Gaussian payload", pos + needed);

    scene.gaussians.resize(static_cast<std::size_t>(count));
    const std::uint8_t* p = bytes.data() + pos;
    for (auto& g : scene.gaussians) {
        for (int i = 0; i < 3; ++i, p += 4) g.position[i] = detail::get_f32(p);
        for (int i = 0; i < 3; ++i, p += 4) g.log_scale[i] = detail::get_f32(p);
        for (int i = 0; i < 4; ++i, p += 4) g.rotation[i] = detail::get_f32(p);
        g.opacity_logit = detail::get_f32(p);
        p += 4;
        for (float& c : g.sh_coeffs) {
            c = detail::get_f32(p);
            p += 4;
        }
    }
    return scene;
}

inline void save_scene(const Scene& scene, const std::filesystem::path& path) {
    const auto bytes = serialize_scene(scene);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline Scene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open scene file " + path.string());
    std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return deserialize_scene(bytes);
}

}  // namespace stylesplat
