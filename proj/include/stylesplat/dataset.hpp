#pragma once

#include "stylesplat/error.hpp"
#include "stylesplat/image.hpp"
#include "stylesplat/scene.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace stylesplat {

// COLMAP text-model reader. Expected layout, first match wins:
//   <root>/sparse/0/{cameras,images,points3D}.txt
//   <root>/sparse/{cameras,images,points3D}.txt
//   <root>/{cameras,images,points3D}.txt
// and 8-bit RGB images under <root>/images/.

namespace detail {

struct ColmapIntrinsics {
    int width = 0, height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
};

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("missing dataset file " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return lines;
}

inline bool is_comment(const std::string& line) {
    const auto first = line.find_first_not_of(" \t");
    return first != std::string::npos && line[first] == '#';
}

inline bool is_blank(const std::string& line) { return line.find_first_not_of(" \t") == std::string::npos; }

inline std::filesystem::path find_sparse_dir(const std::filesystem::path& root) {
    for (const auto& candidate : {root / "sparse" / "0", root / "sparse", root})
        if (std::filesystem::exists(candidate / "cameras.txt")) return candidate;
    throw LoadError("no cameras.txt under " + root.string() + " (looked in sparse/0, sparse, and the root)");
}

inline std::map<int, ColmapIntrinsics> parse_cameras(const std::filesystem::path& file) {
    std::map<int, ColmapIntrinsics> cams;
    int line_no = 0;
    for (const auto& line : read_lines(file)) {
        ++line_no;
        if (is_comment(line) || is_blank(line)) continue;
        std::istringstream in(line);
        int id = 0;
        std::string model;
        ColmapIntrinsics c;
        if (!(in >> id >> model >> c.width >> c.height))
            throw LoadError(file.string() + ":" + std::to_string(line_no) + ": malformed camera line");
        if (model == "PINHOLE") {
            if (!(in >> c.fx >> c.fy >> c.cx >> c.cy))
                throw LoadError(file.string() + ":" + std::to_string(line_no) + ": PINHOLE needs fx fy cx cy");
        } else if (model == "SIMPLE_PINHOLE") {
            if (!(in >> c.fx >> c.cx >> c.cy))
                throw LoadError(file.string() + ":" + std::to_string(line_no) + ": SIMPLE_PINHOLE needs f cx cy");
            c.fy = c.fx;
        } else {
            throw UnsupportedModelError(model);
        }
        cams[id] = c;
    }
    return cams;
}

inline std::vector<SfmPoint> parse_points(const std::filesystem::path& file) {
    std::vector<SfmPoint> pts;
    int line_no = 0;
    for (const auto& line : read_lines(file)) {
        ++line_no;
        if (is_comment(line) || is_blank(line)) continue;
        std::istringstream in(line);
        long long id = 0;
        double x, y, z;
        int r, g, b;
        if (!(in >> id >> x >> y >> z >> r >> g >> b))
            throw LoadError(file.string() + ":" + std::to_string(line_no) + ": malformed point line");
        pts.push_back({Vec3<float>(float(x), float(y), float(z)),
                       Vec3<float>(float(r / 255.0), float(g / 255.0), float(b / 255.0))});
    }
    return pts;
}

}  // namespace detail

inline TrainingDataset load_dataset(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root)) throw LoadError("dataset directory not found: " + root.string());
    const auto sparse = detail::find_sparse_dir(root);
    const auto image_dir = root / "images";
    if (!std::filesystem::is_directory(image_dir)) throw LoadError("missing images directory " + image_dir.string());

    const auto cams = detail::parse_cameras(sparse / "cameras.txt");
    TrainingDataset ds;
    ds.sfm_points = detail::parse_points(sparse / "points3D.txt");

    const auto images_file = sparse / "images.txt";
    const auto lines = detail::read_lines(images_file);
    std::vector<std::string> body;
    for (const auto& l : lines)
        if (!detail::is_comment(l)) body.push_back(l);

    std::vector<std::pair<int, TrainingView>> ordered;
    for (std::size_t i = 0; i < body.size(); ++i) {
        if (detail::is_blank(body[i])) continue;
        std::istringstream in(body[i]);
        int image_id = 0, camera_id = 0;
        double qw, qx, qy, qz, tx, ty, tz;
        std::string name;
        if (!(in >> image_id >> qw >> qx >> qy >> qz >> tx >> ty >> tz >> camera_id >> name))
            throw LoadError(images_file.string() + ": malformed image line '" + body[i] + "'");
        ++i;  // the POINTS2D line that follows, possibly empty

        const auto cam_it = cams.find(camera_id);
        if (cam_it == cams.end())
            throw LoadError("image " + name + " references unknown camera " + std::to_string(camera_id));
        const auto& intr = cam_it->second;

        TrainingView view;
        view.name = name;
        view.image = read_image(image_dir / name);
        const double sx = double(view.image.width) / intr.width;
        const double sy = double(view.image.height) / intr.height;
        auto& cam = view.camera;
        cam.width = view.image.width;
        cam.height = view.image.height;
        cam.fx = float(intr.fx * sx);
        cam.fy = float(intr.fy * sy);
        cam.cx = float(intr.cx * sx);
        cam.cy = float(intr.cy * sy);
        Vec4<double> q(qw, qx, qy, qz);
        q.normalize();
        cam.rotation = quat_to_matrix(q).cast<float>();
        cam.translation = Vec3<float>(float(tx), float(ty), float(tz));
        ordered.emplace_back(image_id, std::move(view));
    }
    std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [id, v] : ordered) ds.views.push_back(std::move(v));
    ds.validate();
    return ds;
}

/// Writes the dataset in the COLMAP text layout load_dataset reads: images/*.png
/// plus sparse/0/{cameras,images,points3D}.txt, one PINHOLE camera per view.
inline void save_dataset(const TrainingDataset& ds, const std::filesystem::path& root) {
    ds.validate();
    const auto sparse = root / "sparse" / "0";
    std::filesystem::create_directories(sparse);
    std::filesystem::create_directories(root / "images");
    std::ofstream cams(sparse / "cameras.txt"), imgs(sparse / "images.txt"), pts(sparse / "points3D.txt");
    if (!cams || !imgs || !pts) throw std::runtime_error("cannot write dataset under " + root.string());
    cams.precision(9);
    imgs.precision(9);
    pts.precision(9);
    cams << "# CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n";
    imgs << "# IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n# POINTS2D[]\n";
    pts << "# POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[]\n";
    for (std::size_t i = 0; i < ds.views.size(); ++i) {
        const auto& v = ds.views[i];
        const auto& c = v.camera;
        const int id = int(i) + 1;
        cams << id << " PINHOLE " << c.width << ' ' << c.height << ' ' << c.fx << ' ' << c.fy << ' ' << c.cx << ' ' << c.cy << '\n';
        const Vec4<double> q = matrix_to_quat<double>(c.rotation.cast<double>());
        imgs << id << ' ' << q[0] << ' ' << q[1] << ' ' << q[2] << ' ' << q[3] << ' ' << c.translation.x() << ' '
             << c.translation.y() << ' ' << c.translation.z() << ' ' << id << ' ' << v.name << "\n\n";
        write_png(root / "images" / v.name, v.image);
    }
    for (std::size_t i = 0; i < ds.sfm_points.size(); ++i) {
        const auto& p = ds.sfm_points[i];
        pts << i + 1 << ' ' << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z();
        for (int k = 0; k < 3; ++k) pts << ' ' << int(to_u8(p.color[k]));
        pts << " 0\n";
    }
}

/// Splits views into (train, held-out): every `every`-th view, starting at 0, is held out.
/// With `every` <= 0 or a single view, every view is used for both.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_views(std::size_t count, int every) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < count; ++i) {
        if (every > 0 && count > 1 && i % static_cast<std::size_t>(every) == 0)
            test.push_back(i);
        else
            train.push_back(i);
    }
    if (test.empty()) test = train;
    return {train, test};
}

}  // namespace stylesplat
