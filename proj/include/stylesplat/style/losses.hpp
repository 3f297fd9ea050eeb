#pragma once

#include "stylesplat/error.hpp"
#include "stylesplat/nn/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace stylesplat::style {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

/// Per-tap statistics of the style image.
template <typename T>
struct TapTarget {
    Matrix<T> gram;
    std::vector<T> mean;
    std::vector<T> std;
};

template <typename T>
using StyleTargets = std::map<std::string, TapTarget<T>>;

struct LossWeights {
    double w_c = 1.0;
    double w_s = 10.0;

    void validate() const {
        if (!(w_c >= 0.0) || !(w_s >= 0.0)) throw InvariantError("loss weights must be non-negative");
        if (w_c == 0.0 && w_s == 0.0) throw InvariantError("loss weights cannot both be zero");
    }
};

namespace detail {

template <typename T>
Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> flat(const nn::Tensor3<T>& x) {
    return {x.data.data(), x.channels, static_cast<Eigen::Index>(x.plane())};
}

}  // namespace detail

/// y = std_s * (x - mu_x) / sigma_x + mean_s, per channel.
template <typename T>
nn::Tensor3<T> adain(const nn::Tensor3<T>& content, const std::vector<T>& style_mean, const std::vector<T>& style_std) {
    if (static_cast<int>(style_mean.size()) != content.channels || static_cast<int>(style_std.size()) != content.channels)
        throw DimensionError("adain: content has " + std::to_string(content.channels) + " channels, style stats have " +
                             std::to_string(style_mean.size()) + "/" + std::to_string(style_std.size()));
    const auto stats = nn::channel_stats(content);
    nn::Tensor3<T> out(content.channels, content.height, content.width);
    for (int c = 0; c < content.channels; ++c) {
        const double scale = double(style_std[c]) / double(stats.std[c]);
        const double mu = stats.mean[c], target = style_mean[c];
        const T* src = content.channel(c);
        T* dst = out.channel(c);
        for (std::size_t i = 0; i < content.plane(); ++i) dst[i] = T(scale * (double(src[i]) - mu) + target);
    }
    return out;
}

/// G = F F^T / (C N), F the C x N flattening.
template <typename T>
Matrix<T> gram(const nn::Tensor3<T>& x) {
    if (x.empty()) throw DimensionError("gram: empty tensor");
    const auto f = detail::flat(x);
    const double norm = double(x.channels) * double(x.plane());
    Matrix<T> g = (f * f.transpose()) / T(norm);
    return T(0.5) * (g + g.transpose());
}

/// Adjoint of gram: dF = (dG + dG^T) F / (C N).
template <typename T>
nn::Tensor3<T> gram_backward(const nn::Tensor3<T>& x, const Matrix<T>& grad_gram) {
    nn::Tensor3<T> out(x.channels, x.height, x.width);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> g(out.data.data(), x.channels,
                                                                                    static_cast<Eigen::Index>(x.plane()));
    const double norm = double(x.channels) * double(x.plane());
    g.noalias() = ((grad_gram + grad_gram.transpose()) / T(norm)) * detail::flat(x);
    return out;
}

template <typename T>
StyleTargets<T> make_style_targets(const nn::FeatureMaps<T>& style_features) {
    StyleTargets<T> t;
    for (const auto& [name, f] : style_features) {
        auto stats = nn::channel_stats(f);
        t[name] = {gram(f), std::move(stats.mean), std::move(stats.std)};
    }
    return t;
}

inline const std::vector<std::string>& default_content_taps() {
    static const std::vector<std::string> taps{"relu4_1"};
    return taps;
}

/// Sum over content taps of the mean squared difference. Fills `grad` (keyed by
/// tap) with d/d(generated) when given.
template <typename T>
double content_loss(const nn::FeatureMaps<T>& generated, const nn::FeatureMaps<T>& target,
                    const std::vector<std::string>& taps = default_content_taps(), nn::FeatureMaps<T>* grad = nullptr) {
    double loss = 0;
    for (const auto& tap : taps) {
        const auto g = generated.find(tap), t = target.find(tap);
        if (g == generated.end() || t == target.end()) throw DimensionError("content_loss: missing tap " + tap);
        if (!g->second.same_shape(t->second))
            throw DimensionError("content_loss: tap " + tap + " shapes " + g->second.shape_string() + " vs " +
                                 t->second.shape_string());
        const std::size_t n = g->second.size();
        double sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = double(g->second.data[i]) - double(t->second.data[i]);
            sum += d * d;
        }
        loss += sum / double(n);
        if (grad) {
            nn::Tensor3<T> d(g->second.channels, g->second.height, g->second.width);
            for (std::size_t i = 0; i < n; ++i) d.data[i] = T(2.0 * (double(g->second.data[i]) - double(t->second.data[i])) / double(n));
            auto& slot = (*grad)[tap];
            if (slot.empty()) slot = std::move(d);
            else
                for (std::size_t i = 0; i < n; ++i) slot.data[i] += d.data[i];
        }
    }
    return loss;
}

/// Sum over target taps of ||gram(F) - G_target||_F^2 / C^2.
template <typename T>
double style_loss(const nn::FeatureMaps<T>& generated, const StyleTargets<T>& targets, nn::FeatureMaps<T>* grad = nullptr) {
    double loss = 0;
    for (const auto& [tap, target] : targets) {
        const auto it = generated.find(tap);
        if (it == generated.end()) throw DimensionError("style_loss: missing tap " + tap);
        const int c = it->second.channels;
        if (target.gram.rows() != c || target.gram.cols() != c)
            throw DimensionError("style_loss: tap " + tap + " has " + std::to_string(c) + " channels, target gram is " +
                                 std::to_string(target.gram.rows()) + "x" + std::to_string(target.gram.cols()));
        const Matrix<T> diff = gram(it->second) - target.gram;
        const double cc = double(c) * double(c);
        loss += diff.template cast<double>().squaredNorm() / cc;
        if (grad) {
            auto d = gram_backward(it->second, Matrix<T>(diff * T(2.0 / cc)));
            auto& slot = (*grad)[tap];
            if (slot.empty()) slot = std::move(d);
            else
                for (std::size_t i = 0; i < d.size(); ++i) slot.data[i] += d.data[i];
        }
    }
    return loss;
}

inline double total_loss(double l_content, double l_style, const LossWeights& w) {
    return w.w_c * l_content + w.w_s * l_style;
}

}  // namespace stylesplat::style
