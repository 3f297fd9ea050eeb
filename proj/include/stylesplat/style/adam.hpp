#pragma once

#include "stylesplat/projection.hpp"
#include "stylesplat/scene.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

namespace stylesplat::style {

inline constexpr int kParamsPerGaussian = 59;

enum class ParamGroup { position, log_scale, rotation, opacity, sh_dc, sh_rest };
inline constexpr int kParamGroups = 6;

/// Group of stored scalar `slot` (0..58, file field order).
constexpr ParamGroup slot_group(int slot) {
    if (slot < 3) return ParamGroup::position;
    if (slot < 6) return ParamGroup::log_scale;
    if (slot < 10) return ParamGroup::rotation;
    if (slot == 10) return ParamGroup::opacity;
    if (slot < 14) return ParamGroup::sh_dc;
    return ParamGroup::sh_rest;
}

template <typename T>
T& param_slot(Gaussian3D<T>& g, int slot) {
    if (slot < 3) return g.position[slot];
    if (slot < 6) return g.log_scale[slot - 3];
    if (slot < 10) return g.rotation[slot - 6];
    if (slot == 10) return g.opacity_logit;
    return g.sh_coeffs[slot - 11];
}

template <typename T>
T grad_slot(const GaussianGrad<T>& g, int slot) {
    if (slot < 3) return g.position[slot];
    if (slot < 6) return g.log_scale[slot - 3];
    if (slot < 10) return g.rotation[slot - 6];
    if (slot == 10) return g.opacity_logit;
    return g.sh_coeffs[slot - 11];
}

/// Adam over a scene's stored parameters with one learning rate per group.
/// A group with learning rate 0 is frozen: neither its values nor its moments move.
template <typename T>
class SceneAdam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-15;
    std::array<double, kParamGroups> lr{};

    void resize(std::size_t gaussians) {
        m_.resize(gaussians * kParamsPerGaussian, T(0));
        v_.resize(gaussians * kParamsPerGaussian, T(0));
    }

    void step(SceneModel<T>& scene, const std::vector<GaussianGrad<T>>& grads) {
        resize(scene.gaussians.size());
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1, double(t_));
        const double bc2 = 1.0 - std::pow(beta2, double(t_));
        for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
            auto& g = scene.gaussians[i];
            for (int s = 0; s < kParamsPerGaussian; ++s) {
                const double rate = lr[static_cast<int>(slot_group(s))];
                if (rate == 0.0) continue;
                const std::size_t k = i * kParamsPerGaussian + s;
                const double gr = double(grad_slot(grads[i], s));
                const double m = beta1 * double(m_[k]) + (1 - beta1) * gr;
                const double v = beta2 * double(v_[k]) + (1 - beta2) * gr * gr;
                m_[k] = T(m);
                v_[k] = T(v);
                param_slot(g, s) -= T(rate * (m / bc1) / (std::sqrt(v / bc2) + eps));
            }
        }
    }

    /// Drops the moments of Gaussians whose keep flag is false, matching a scene erase.
    void compact(const std::vector<bool>& keep) {
        std::size_t out = 0;
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (!keep[i]) continue;
            for (int s = 0; s < kParamsPerGaussian; ++s) {
                m_[out * kParamsPerGaussian + s] = m_[i * kParamsPerGaussian + s];
                v_[out * kParamsPerGaussian + s] = v_[i * kParamsPerGaussian + s];
            }
            ++out;
        }
        m_.resize(out * kParamsPerGaussian);
        v_.resize(out * kParamsPerGaussian);
    }

    /// Appends zeroed moments for `count` new Gaussians.
    void append(std::size_t count) {
        m_.resize(m_.size() + count * kParamsPerGaussian, T(0));
        v_.resize(v_.size() + count * kParamsPerGaussian, T(0));
    }

    void reset() {
        m_.clear();
        v_.clear();
        t_ = 0;
    }

    long steps() const { return t_; }

private:
    std::vector<T> m_, v_;
    long t_ = 0;
};

}  // namespace stylesplat::style
