#pragma once

// Camera paths: pose keyframes in JSON, expanded into per-frame cameras.
//
//   {"width": 512, "height": 384, "fov_y": 60, "samples_per_segment": 8, "loop": false,
//    "keyframes": [{"position": [x,y,z], "quaternion": [w,x,y,z], "fov_y": 60}, ...]}
//
// A bare array of keyframes is accepted too. Poses follow the control
// protocol convention (camera center, camera-to-world rotation).

#include "stylesplat/error.hpp"
#include "stylesplat/server/protocol.hpp"

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

namespace stylesplat {

struct CameraPath {
    int width = 512;
    int height = 512;
    int samples_per_segment = 1;
    bool loop = false;
    std::vector<server::CameraPose> keyframes;

    /// Every pose along the path: `samples_per_segment` per segment, plus the
    /// last keyframe for an open path.
    std::vector<server::CameraPose> poses() const {
        std::vector<server::CameraPose> out;
        const std::size_t n = keyframes.size();
        if (n == 0) return out;
        if (n == 1) return keyframes;
        const std::size_t segments = loop ? n : n - 1;
        for (std::size_t s = 0; s < segments; ++s)
            for (int k = 0; k < samples_per_segment; ++k)
                out.push_back(interpolate(keyframes[s], keyframes[(s + 1) % n], double(k) / samples_per_segment));
        if (!loop) out.push_back(keyframes.back());
        return out;
    }

    std::vector<Camera<float>> cameras() const {
        std::vector<Camera<float>> out;
        for (const auto& p : poses()) out.push_back(server::camera_from_pose(p, width, height));
        return out;
    }

    /// Linear in position and field of view, spherical-linear in rotation.
    static server::CameraPose interpolate(const server::CameraPose& a, const server::CameraPose& b, double t) {
        const Eigen::Quaterniond qa(a.quaternion[0], a.quaternion[1], a.quaternion[2], a.quaternion[3]);
        const Eigen::Quaterniond qb(b.quaternion[0], b.quaternion[1], b.quaternion[2], b.quaternion[3]);
        const Eigen::Quaterniond q = qa.normalized().slerp(t, qb.normalized());
        server::CameraPose p;
        for (int i = 0; i < 3; ++i) p.position[i] = (1.0 - t) * a.position[i] + t * b.position[i];
        p.quaternion = {q.w(), q.x(), q.y(), q.z()};
        p.fov_y_deg = (1.0 - t) * a.fov_y_deg + t * b.fov_y_deg;
        return p;
    }

    static CameraPath from_json(const nlohmann::json& j) {
        CameraPath path;
        double fov = 60.0;
        const nlohmann::json* frames = &j;
        if (j.is_object()) {
            path.width = j.value("width", path.width);
            path.height = j.value("height", path.height);
            fov = j.value("fov_y", fov);
            path.samples_per_segment = j.value("samples_per_segment", path.samples_per_segment);
            path.loop = j.value("loop", path.loop);
            if (!j.contains("keyframes")) throw LoadError("camera path: missing 'keyframes'");
            frames = &j.at("keyframes");
        }
        if (!frames->is_array() || frames->empty()) throw LoadError("camera path: keyframes must be a non-empty array");
        if (path.width < 1 || path.height < 1) throw LoadError("camera path: width and height must be >= 1");
        if (path.samples_per_segment < 1) throw LoadError("camera path: samples_per_segment must be >= 1");
        for (const auto& k : *frames) {
            try {
                server::CameraPose p;
                const auto pos = k.at("position").get<std::vector<double>>();
                const auto q = k.at("quaternion").get<std::vector<double>>();
                if (pos.size() != 3 || q.size() != 4) throw LoadError("position needs 3 values, quaternion 4");
                p.position = {pos[0], pos[1], pos[2]};
                p.quaternion = {q[0], q[1], q[2], q[3]};
                if (!(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] > 0.0)) throw LoadError("zero quaternion");
                p.fov_y_deg = k.value("fov_y", fov);
                if (!(p.fov_y_deg > 0.0 && p.fov_y_deg < 180.0)) throw LoadError("fov_y must be in (0, 180)");
                path.keyframes.push_back(p);
            } catch (const nlohmann::json::exception& e) {
                throw LoadError(std::string("camera path: bad keyframe: ") + e.what());
            } catch (const LoadError& e) {
                throw LoadError(std::string("camera path: bad keyframe: ") + e.what());
            }
        }
        return path;
    }

    static CameraPath load(const std::filesystem::path& file) {
        std::ifstream in(file);
        if (!in) throw LoadError("cannot open camera path " + file.string());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw LoadError("camera path " + file.string() + ": " + e.what());
        }
        return from_json(j);
    }

    nlohmann::json to_json() const {
        nlohmann::json frames = nlohmann::json::array();
        for (const auto& p : keyframes)
            frames.push_back({{"position", p.position},
                              {"quaternion", p.quaternion},
                              {"fov_y", p.fov_y_deg}});
        return {{"width", width}, {"height", height}, {"samples_per_segment", samples_per_segment}, {"loop", loop},
                {"keyframes", frames}};
    }
};

/// Keyframes circling `center` at `radius` in the x-z plane, each looking at the center.
inline CameraPath orbit_path(const Vec3<double>& center, double radius, int count, int width, int height, double fov_y = 60.0) {
    CameraPath path;
    path.width = width;
    path.height = height;
    path.loop = true;
    for (int i = 0; i < count; ++i) {
        const double a = 2.0 * std::numbers::pi * i / count;
        server::CameraPose p;
        const Vec3<double> eye = center + radius * Vec3<double>(std::sin(a), 0.0, -std::cos(a));
        const Vec3<double> z = (center - eye).normalized();
        const Vec3<double> y(0.0, 1.0, 0.0);
        const Vec3<double> x = y.cross(z).normalized();
        Mat3<double> r;
        r.col(0) = x;
        r.col(1) = z.cross(x);
        r.col(2) = z;
        const Vec4<double> q = matrix_to_quat(r);
        p.position = {eye.x(), eye.y(), eye.z()};
        p.quaternion = {q[0], q[1], q[2], q[3]};
        p.fov_y_deg = fov_y;
        path.keyframes.push_back(p);
    }
    return path;
}

}  // namespace stylesplat
