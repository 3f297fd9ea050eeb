#pragma once

#include "stylesplat/error.hpp"
#include "stylesplat/image.hpp"
#include "stylesplat/nn/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

namespace stylesplat::nn {

enum class LayerKind { conv, relu, maxpool };

/// One layer of a VGG-style stack. Convolutions are 3x3, stride 1, padding 1;
/// pooling is 2x2 max with stride 2.
struct Layer {
    LayerKind kind = LayerKind::relu;
    std::string name;
    int in_channels = 0;
    int out_channels = 0;
    std::vector<float> weights;  // (out, in, 3, 3) row-major
    std::vector<float> bias;     // (out)
};

struct NetworkSpec {
    std::vector<Layer> layers;
    std::vector<std::string> taps;
    std::array<float, 3> norm_mean{0.485f, 0.456f, 0.406f};
    std::array<float, 3> norm_std{0.229f, 0.224f, 0.225f};

    static std::vector<std::string> default_taps() { return {"relu1_1", "relu2_1", "relu3_1", "relu4_1"}; }

    std::optional<std::size_t> layer_index(const std::string& name) const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].name == name) return i;
        return std::nullopt;
    }

    /// Index of the deepest tap layer; forward stops there.
    std::size_t last_tap_layer() const {
        std::size_t last = 0;
        for (const auto& t : taps) last = std::max(last, *layer_index(t));
        return last;
    }

    /// Cumulative pooling factor at the output of layer `index`.
    int pool_factor(std::size_t index) const {
        int f = 1;
        for (std::size_t i = 0; i <= index; ++i)
            if (layers[i].kind == LayerKind::maxpool) f *= 2;
        return f;
    }

    int conv_count() const {
        return static_cast<int>(std::count_if(layers.begin(), layers.end(),
                                              [](const Layer& l) { return l.kind == LayerKind::conv; }));
    }

    void validate() const {
        if (layers.empty()) throw InvariantError("network has no layers");
        int channels = 3;
        for (const auto& l : layers) {
            if (l.kind == LayerKind::conv) {
                if (l.in_channels != channels)
                    throw DimensionError("layer " + l.name + " expects " + std::to_string(l.in_channels) +
                                         " input channels but receives " + std::to_string(channels));
                if (l.weights.size() != static_cast<std::size_t>(l.out_channels) * l.in_channels * 9)
                    throw DimensionError("tensor " + l.name + ".weight has the wrong element count");
                if (l.bias.size() != static_cast<std::size_t>(l.out_channels))
                    throw DimensionError("tensor " + l.name + ".bias has the wrong element count");
                channels = l.out_channels;
            }
        }
        if (taps.empty()) throw InvariantError("network declares no tap points");
        for (const auto& t : taps)
            if (!layer_index(t)) throw InvariantError("tap point '" + t + "' names no layer");
        for (int c = 0; c < 3; ++c)
            if (!(norm_std[c] > 0.0f)) throw InvariantError("normalization std must be positive");
    }

    /// Smallest input side that leaves every tap non-empty.
    int min_input_side() const { return pool_factor(last_tap_layer()); }
};

/// Per-layer state kept from a forward pass for the backward pass.
template <typename T>
struct ForwardTrace {
    int input_height = 0, input_width = 0;
    std::vector<Tensor3<T>> outputs;                 // one per executed layer
    std::vector<std::vector<std::uint32_t>> argmax;  // per layer; filled for pools only
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
RowMat<T> weight_matrix(const Layer& l) {
    Eigen::Map<const RowMat<float>> w(l.weights.data(), l.out_channels, l.in_channels * 9);
    return w.cast<T>();
}

/// im2col for 3x3, pad 1: rows (c, ky, kx), columns output pixels.
template <typename T>
RowMat<T> im2col(const Tensor3<T>& x) {
    const int h = x.height, w = x.width;
    RowMat<T> col = RowMat<T>::Zero(static_cast<Eigen::Index>(x.channels) * 9, static_cast<Eigen::Index>(h) * w);
    for (int c = 0; c < x.channels; ++c) {
        const T* src = x.channel(c);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                T* dst = col.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * h * w;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
                    for (int xx = x0; xx < x1; ++xx) dst[y * w + xx] = src[sy * w + xx + kx - 1];
                }
            }
        }
    }
    return col;
}

template <typename T>
void col2im_add(const RowMat<T>& col, Tensor3<T>& x) {
    const int h = x.height, w = x.width;
    for (int c = 0; c < x.channels; ++c) {
        T* dst = x.channel(c);
        for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
                const T* src = col.data() + (static_cast<std::size_t>(c) * 9 + ky * 3 + kx) * h * w;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
                    for (int xx = x0; xx < x1; ++xx) dst[sy * w + xx + kx - 1] += src[y * w + xx];
                }
            }
        }
    }
}

template <typename T>
Tensor3<T> conv_forward(const Layer& l, const Tensor3<T>& x) {
    Tensor3<T> out(l.out_channels, x.height, x.width);
    const RowMat<T> col = im2col(x);
    Eigen::Map<RowMat<T>> y(out.data.data(), l.out_channels, static_cast<Eigen::Index>(x.plane()));
    if constexpr (std::is_same_v<T, float>) {
        Eigen::Map<const RowMat<float>> w(l.weights.data(), l.out_channels, l.in_channels * 9);
        y.noalias() = w * col;
    } else {
        y.noalias() = weight_matrix<T>(l) * col;
    }
    for (int c = 0; c < l.out_channels; ++c) y.row(c).array() += T(l.bias[c]);
    return out;
}

template <typename T>
Tensor3<T> conv_backward_input(const Layer& l, const Tensor3<T>& grad_out) {
    Eigen::Map<const RowMat<T>> gy(grad_out.data.data(), l.out_channels, static_cast<Eigen::Index>(grad_out.plane()));
    RowMat<T> gcol;
    if constexpr (std::is_same_v<T, float>) {
        Eigen::Map<const RowMat<float>> w(l.weights.data(), l.out_channels, l.in_channels * 9);
        gcol.noalias() = w.transpose() * gy;
    } else {
        gcol.noalias() = weight_matrix<T>(l).transpose() * gy;
    }
    Tensor3<T> gx(l.in_channels, grad_out.height, grad_out.width);
    col2im_add(gcol, gx);
    return gx;
}

template <typename T>
Tensor3<T> maxpool_forward(const Tensor3<T>& x, std::vector<std::uint32_t>& argmax) {
    const int oh = x.height / 2, ow = x.width / 2;
    Tensor3<T> out(x.channels, oh, ow);
    argmax.assign(out.size(), 0);
    for (int c = 0; c < x.channels; ++c) {
        const T* src = x.channel(c);
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                std::uint32_t best = static_cast<std::uint32_t>((2 * y) * x.width + 2 * xx);
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const auto idx = static_cast<std::uint32_t>((2 * y + dy) * x.width + 2 * xx + dx);
                        if (src[idx] > src[best]) best = idx;
                    }
                const std::size_t o = c * out.plane() + static_cast<std::size_t>(y) * ow + xx;
                out.data[o] = src[best];
                argmax[o] = best;
            }
        }
    }
    return out;
}

}  // namespace detail

/// Converts an interleaved RGB image to a normalized C x H x W tensor.
template <typename T, typename P>
Tensor3<T> image_to_input(const NetworkSpec& net, const Image<P>& image) {
    Tensor3<T> x(3, image.height, image.width);
    for (int c = 0; c < 3; ++c) {
        const T mean = T(net.norm_mean[c]), inv_std = T(1) / T(net.norm_std[c]);
        T* dst = x.channel(c);
        for (std::size_t i = 0; i < x.plane(); ++i) dst[i] = (T(image.data[i * 3 + c]) - mean) * inv_std;
    }
    return x;
}

/// Runs the stack up to the deepest tap and returns the tap activations.
template <typename T, typename P>
FeatureMaps<T> forward(const NetworkSpec& net, const Image<P>& image, ForwardTrace<T>* trace = nullptr) {
    const int min_side = net.min_input_side();
    if (image.width < std::max(16, min_side) || image.height < std::max(16, min_side))
        throw DimensionError("forward: input " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                             " is smaller than the 16x16 minimum");
    ForwardTrace<T> local;
    ForwardTrace<T>& tr = trace ? *trace : local;
    tr.input_height = image.height;
    tr.input_width = image.width;
    tr.outputs.clear();
    tr.argmax.clear();

    const std::size_t last = net.last_tap_layer();
    Tensor3<T> x = image_to_input<T>(net, image);
    FeatureMaps<T> features;
    for (std::size_t i = 0; i <= last; ++i) {
        const Layer& l = net.layers[i];
        std::vector<std::uint32_t> argmax;
        switch (l.kind) {
            case LayerKind::conv:
                x = detail::conv_forward(l, x);
                break;
            case LayerKind::relu:
                for (T& v : x.data) v = std::max(v, T(0));
                break;
            case LayerKind::maxpool:
                x = detail::maxpool_forward(x, argmax);
                break;
        }
        if (std::find(net.taps.begin(), net.taps.end(), l.name) != net.taps.end()) features[l.name] = x;
        if (trace) {
            tr.outputs.push_back(x);
            tr.argmax.push_back(std::move(argmax));
        }
    }
    return features;
}

/// Adjoint of forward with respect to the input image. `grads` may cover any
/// subset of the taps; absent taps contribute zero. Needs a trace from forward
/// on the same image.
template <typename T>
Image<T> backward(const NetworkSpec& net, const ForwardTrace<T>& trace, const FeatureMaps<T>& grads) {
    const std::size_t last = net.last_tap_layer();
    if (trace.outputs.size() != last + 1) throw DimensionError("backward: trace does not match the network");
    for (const auto& [name, g] : grads) {
        const auto idx = net.layer_index(name);
        if (!idx || std::find(net.taps.begin(), net.taps.end(), name) == net.taps.end())
            throw DimensionError("backward: '" + name + "' is not a tap point");
        if (!g.same_shape(trace.outputs[*idx]))
            throw DimensionError("backward: gradient for " + name + " is " + g.shape_string() + ", expected " +
                                 trace.outputs[*idx].shape_string());
    }

    Tensor3<T> g(trace.outputs[last].channels, trace.outputs[last].height, trace.outputs[last].width);
    for (std::size_t i = last + 1; i-- > 0;) {
        const Layer& l = net.layers[i];
        if (auto it = grads.find(l.name); it != grads.end())
            for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += it->second.data[k];

        const int in_h = i == 0 ? trace.input_height : trace.outputs[i - 1].height;
        const int in_w = i == 0 ? trace.input_width : trace.outputs[i - 1].width;
        switch (l.kind) {
            case LayerKind::conv:
                g = detail::conv_backward_input(l, g);
                break;
            case LayerKind::relu: {
                const auto& y = trace.outputs[i];
                for (std::size_t k = 0; k < g.size(); ++k)
                    if (!(y.data[k] > T(0))) g.data[k] = T(0);
                break;
            }
            case LayerKind::maxpool: {
                Tensor3<T> gx(g.channels, in_h, in_w);
                const auto& am = trace.argmax[i];
                for (int c = 0; c < g.channels; ++c)
                    for (std::size_t k = 0; k < g.plane(); ++k)
                        gx.channel(c)[am[c * g.plane() + k]] += g.channel(c)[k];
                g = std::move(gx);
                break;
            }
        }
    }

    Image<T> out(trace.input_width, trace.input_height);
    for (int c = 0; c < 3; ++c) {
        const T inv_std = T(1) / T(net.norm_std[c]);
        for (std::size_t k = 0; k < g.plane(); ++k) out.data[k * 3 + c] = g.channel(c)[k] * inv_std;
    }
    return out;
}

/// Convenience overload that reruns forward to rebuild the trace.
template <typename T, typename P>
Image<T> backward(const NetworkSpec& net, const Image<P>& image, const FeatureMaps<T>& grads) {
    ForwardTrace<T> trace;
    forward<T>(net, image, &trace);
    return backward(net, trace, grads);
}

// ---------------------------------------------------------------------------
// Architectures

/// VGG-16 layer list from conv1_1 through relu4_1. `width_divisor` shrinks every
/// conv width (1 = published widths 64/128/256/512). Weights are He-normal from
/// `seed`, biases zero.
inline NetworkSpec make_vgg16_to_relu4_1(std::uint32_t seed, int width_divisor = 1) {
    struct Block {
        int convs;
        int width;
    };
    const Block blocks[4] = {{2, 64}, {2, 128}, {3, 256}, {1, 512}};
    NetworkSpec net;
    net.taps = NetworkSpec::default_taps();
    std::mt19937 rng(seed);
    int in = 3;
    for (int b = 0; b < 4; ++b) {
        const int width = std::max(1, blocks[b].width / width_divisor);
        for (int k = 1; k <= blocks[b].convs; ++k) {
            const std::string suffix = std::to_string(b + 1) + "_" + std::to_string(k);
            Layer conv;
            conv.kind = LayerKind::conv;
            conv.name = "conv" + suffix;
            conv.in_channels = in;
            conv.out_channels = width;
            conv.weights.resize(static_cast<std::size_t>(width) * in * 9);
            std::normal_distribution<double> he(0.0, std::sqrt(2.0 / (in * 9)));
            for (float& v : conv.weights) v = static_cast<float>(he(rng));
            conv.bias.assign(width, 0.0f);
            net.layers.push_back(std::move(conv));
            net.layers.push_back({LayerKind::relu, "relu" + suffix, width, width, {}, {}});
            in = width;
        }
        if (b < 3) net.layers.push_back({LayerKind::maxpool, "pool" + std::to_string(b + 1), in, in, {}, {}});
    }
    net.validate();
    return net;
}

}  // namespace stylesplat::nn
