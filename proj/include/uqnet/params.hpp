#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uqnet/layers.hpp"
#include "uqnet/rng.hpp"
#include "uqnet/tensor.hpp"

namespace uqnet {

template <typename T>
struct ParamTensor {
    std::string name;  // "<layer>.<field>", e.g. "0.W"
    Tensor<T> value;
    bool trainable = true;
};

// All parameters of one network, ordered by layer. Gradients reuse the same
// structure (zeroed clone).
template <typename T>
struct ParamSet {
    std::vector<std::vector<ParamTensor<T>>> per_layer;

    ParamTensor<T>* find(std::size_t layer, const std::string& field) {
        for (auto& p : per_layer[layer])
            if (p.name == std::to_string(layer) + "." + field) return &p;
        return nullptr;
    }
    const ParamTensor<T>* find(std::size_t layer, const std::string& field) const {
        for (const auto& p : per_layer[layer])
            if (p.name == std::to_string(layer) + "." + field) return &p;
        return nullptr;
    }
    Tensor<T>& get(std::size_t layer, const std::string& field) {
        auto* p = find(layer, field);
        if (!p) throw StateError("missing parameter " + std::to_string(layer) + "." + field);
        return p->value;
    }
    const Tensor<T>& get(std::size_t layer, const std::string& field) const {
        auto* p = find(layer, field);
        if (!p) throw StateError("missing parameter " + std::to_string(layer) + "." + field);
        return p->value;
    }

    ParamSet<T> zeros_clone() const {
        ParamSet<T> g;
        g.per_layer.resize(per_layer.size());
        for (std::size_t i = 0; i < per_layer.size(); ++i)
            for (const auto& p : per_layer[i])
                g.per_layer[i].push_back({p.name, Tensor<T>(p.value.shape), p.trainable});
        return g;
    }

    template <typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        out.per_layer.resize(per_layer.size());
        for (std::size_t i = 0; i < per_layer.size(); ++i)
            for (const auto& p : per_layer[i])
                out.per_layer[i].push_back({p.name, p.value.template cast<U>(), p.trainable});
        return out;
    }

    bool shapes_match(const ParamSet<T>& o) const {
        if (per_layer.size() != o.per_layer.size()) return false;
        for (std::size_t i = 0; i < per_layer.size(); ++i) {
            if (per_layer[i].size() != o.per_layer[i].size()) return false;
            for (std::size_t j = 0; j < per_layer[i].size(); ++j)
                if (per_layer[i][j].name != o.per_layer[i][j].name ||
                    !per_layer[i][j].value.same_shape(o.per_layer[i][j].value))
                    return false;
        }
        return true;
    }
};

inline double softplus(double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
}
// inverse of softplus, used to set rho from a target sigma
inline double softplus_inv(double y) {
    return y > 30.0 ? y : std::log(std::expm1(y));
}

// Glorot-uniform init for a fan_in/fan_out pair.
template <typename T>
void glorot_fill(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
    double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    for (auto& v : w.data) v = static_cast<T>((rng.uniform() * 2.0 - 1.0) * limit);
}

// Fresh parameters for a network spec. Flipout posteriors start at
// mu ~ N(0, 0.05^2) with sigma ~= 0.02.
template <typename T>
ParamSet<T> init_params(const NetworkSpec& net, RngStream& rng) {
    auto dims = net.dim_chain();
    ParamSet<T> ps;
    ps.per_layer.resize(net.layers.size());
    const T rho_init = static_cast<T>(softplus_inv(0.02));
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        const DimChain& in = dims[li];
        auto add = [&](const std::string& field, Tensor<T> t, bool trainable = true) {
            ps.per_layer[li].push_back(
                {std::to_string(li) + "." + field, std::move(t), trainable});
        };
        switch (l.kind) {
            case LayerKind::Conv2d: {
                Tensor<T> w({l.filters, in.c, l.kernel_h, l.kernel_w});
                std::size_t fan_in = in.c * l.kernel_h * l.kernel_w;
                std::size_t fan_out = l.filters * l.kernel_h * l.kernel_w;
                glorot_fill(w, fan_in, fan_out, rng);
                add("W", std::move(w));
                add("b", Tensor<T>({l.filters}));
                break;
            }
            case LayerKind::Dense: {
                Tensor<T> w({in.flat(), l.units});
                glorot_fill(w, in.flat(), l.units, rng);
                add("W", std::move(w));
                add("b", Tensor<T>({l.units}));
                break;
            }
            case LayerKind::BatchNorm: {
                add("gamma", Tensor<T>({in.c}, T(1)));
                add("beta", Tensor<T>({in.c}));
                add("running_mean", Tensor<T>({in.c}), false);
                add("running_var", Tensor<T>({in.c}, T(1)), false);
                break;
            }
            case LayerKind::FlipoutDense: {
                Tensor<T> mu_w({in.flat(), l.units});
                for (auto& v : mu_w.data) v = static_cast<T>(rng.normal() * 0.05);
                add("mu_w", std::move(mu_w));
                add("rho_w", Tensor<T>({in.flat(), l.units}, rho_init));
                Tensor<T> mu_b({l.units});
                for (auto& v : mu_b.data) v = static_cast<T>(rng.normal() * 0.05);
                add("mu_b", std::move(mu_b));
                add("rho_b", Tensor<T>({l.units}, rho_init));
                break;
            }
            case LayerKind::Rbf: {
                std::size_t n = l.centroid_dim;
                Tensor<T> w({net.classes, n, n});
                for (std::size_t c = 0; c < net.classes; ++c) {
                    Tensor<T> wc({n, n});
                    glorot_fill(wc, n, n, rng);
                    std::copy(wc.data.begin(), wc.data.end(), w.data.begin() + c * n * n);
                }
                add("W", std::move(w));
                Tensor<T> e({net.classes, n});
                for (auto& v : e.data) v = static_cast<T>(rng.normal() * 0.05);
                add("e", std::move(e));
                break;
            }
            default:
                break;  // parameter-free layer
        }
    }
    return ps;
}

}  // namespace uqnet
