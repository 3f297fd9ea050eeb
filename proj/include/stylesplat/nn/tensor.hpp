#pragma once

#include "stylesplat/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace stylesplat::nn {

/// Dense C x H x W activation tensor, row-major within a channel plane.
template <typename T>
struct Tensor3 {
    int channels = 0, height = 0, width = 0;
    std::vector<T> data;

    Tensor3() = default;
    Tensor3(int c, int h, int w, T fill = T(0))
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    T& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    const T& at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    T* channel(int c) { return data.data() + c * plane(); }
    const T* channel(int c) const { return data.data() + c * plane(); }
    bool same_shape(const Tensor3& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    std::string shape_string() const {
        return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
    }
};

/// Tap-point name -> activation.
template <typename T>
using FeatureMaps = std::map<std::string, Tensor3<T>>;

template <typename T>
struct ChannelStats {
    std::vector<T> mean;
    std::vector<T> std;
};

inline constexpr double kStdFloor = 1e-8;

/// Per-channel mean and population standard deviation over spatial positions,
/// std floored at 1e-8. Accumulates in double regardless of T.
template <typename T>
ChannelStats<T> channel_stats(const Tensor3<T>& x) {
    if (x.empty()) throw DimensionError("channel_stats: empty tensor");
    ChannelStats<T> s;
    s.mean.resize(x.channels);
    s.std.resize(x.channels);
    const std::size_t n = x.plane();
    for (int c = 0; c < x.channels; ++c) {
        const T* p = x.channel(c);
        double sum = 0;
        for (std::size_t i = 0; i < n; ++i) sum += p[i];
        const double mean = sum / double(n);
        double sq = 0;
        for (std::size_t i = 0; i < n; ++i) sq += (p[i] - mean) * (p[i] - mean);
        s.mean[c] = T(mean);
        s.std[c] = T(std::max(std::sqrt(sq / double(n)), kStdFloor));
    }
    return s;
}

}  // namespace stylesplat::nn
