#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "uqnet/errors.hpp"

namespace uqnet {

enum class LayerKind {
    Conv2d,
    Dense,
    BatchNorm,
    Square,
    Log,
    AvgPool,
    Dropout,
    DropConnect,
    FlipoutDense,
    Rbf,
    Softmax,
};

enum class Activation { None, Relu };

enum class LossKind { CategoricalCe, BinaryCe };

enum class ForwardMode {
    Train,       // noise on, batchnorm batch statistics (running stats updated)
    Point,       // all randomness off, batchnorm running statistics
    Stochastic,  // noise on, batchnorm running statistics
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Dense: return "dense";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Square: return "square";
        case LayerKind::Log: return "log";
        case LayerKind::AvgPool: return "avgpool";
        case LayerKind::Dropout: return "dropout";
        case LayerKind::DropConnect: return "dropconnect";
        case LayerKind::FlipoutDense: return "flipout_dense";
        case LayerKind::Rbf: return "rbf";
        case LayerKind::Softmax: return "softmax";
    }
    return "?";
}

// One layer of the network. Fields are kind-specific; unused ones stay at
// their defaults.
struct LayerSpec {
    LayerKind kind{};

    // conv2d
    std::size_t filters = 0;
    std::size_t kernel_h = 1, kernel_w = 1;

    // dense / flipout_dense
    std::size_t units = 0;
    Activation activation = Activation::None;

    // avgpool
    std::size_t pool_h = 1, pool_w = 1;
    std::size_t stride_h = 1, stride_w = 1;

    // dropout / dropconnect
    double drop_rate = 0.0;

    // rbf
    std::size_t centroid_dim = 0;  // n
    double length_scale = 0.0;     // sigma

    static LayerSpec conv2d(std::size_t filters, std::size_t kh, std::size_t kw) {
        LayerSpec l;
        l.kind = LayerKind::Conv2d;
        l.filters = filters;
        l.kernel_h = kh;
        l.kernel_w = kw;
        return l;
    }
    static LayerSpec dense(std::size_t units, Activation act = Activation::None) {
        LayerSpec l;
        l.kind = LayerKind::Dense;
        l.units = units;
        l.activation = act;
        return l;
    }
    static LayerSpec batchnorm() { return LayerSpec{LayerKind::BatchNorm}; }
    static LayerSpec square() { return LayerSpec{LayerKind::Square}; }
    static LayerSpec log_act() { return LayerSpec{LayerKind::Log}; }
    static LayerSpec avgpool(std::size_t ph, std::size_t pw, std::size_t sh, std::size_t sw) {
        LayerSpec l;
        l.kind = LayerKind::AvgPool;
        l.pool_h = ph;
        l.pool_w = pw;
        l.stride_h = sh;
        l.stride_w = sw;
        return l;
    }
    static LayerSpec dropout(double rate) {
        LayerSpec l;
        l.kind = LayerKind::Dropout;
        l.drop_rate = rate;
        return l;
    }
    static LayerSpec dropconnect(double rate) {
        LayerSpec l;
        l.kind = LayerKind::DropConnect;
        l.drop_rate = rate;
        return l;
    }
    static LayerSpec flipout_dense(std::size_t units) {
        LayerSpec l;
        l.kind = LayerKind::FlipoutDense;
        l.units = units;
        return l;
    }
    static LayerSpec rbf(std::size_t centroid_dim, double length_scale) {
        LayerSpec l;
        l.kind = LayerKind::Rbf;
        l.centroid_dim = centroid_dim;
        l.length_scale = length_scale;
        return l;
    }
    static LayerSpec softmax() { return LayerSpec{LayerKind::Softmax}; }
};

// Per-layer activation shape, (channels, height, width) for spatial layers
// or (1, 1, features) once flattened into a dense stack.
struct DimChain {
    std::size_t c = 1, h = 1, w = 1;
    std::size_t flat() const { return c * h * w; }
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::size_t channels = 0;   // C
    std::size_t timesteps = 0;  // S
    std::size_t classes = 0;    // K
    LossKind loss = LossKind::CategoricalCe;

    // Output dims of every layer, input prepended as element 0.
    // Throws ConfigError / DimensionError when dims do not chain.
    std::vector<DimChain> dim_chain() const {
        std::vector<DimChain> dims;
        dims.push_back(DimChain{1, channels, timesteps});
        for (std::size_t li = 0; li < layers.size(); ++li) {
            const LayerSpec& l = layers[li];
            DimChain cur = dims.back();
            DimChain next = cur;
            auto fail = [&](const std::string& msg) {
                throw ConfigError("layer " + std::to_string(li) + " (" +
                                  layer_kind_name(l.kind) + "): " + msg);
            };
            switch (l.kind) {
                case LayerKind::Conv2d:
                    if (cur.h < l.kernel_h || cur.w < l.kernel_w)
                        fail("kernel " + std::to_string(l.kernel_h) + "x" +
                             std::to_string(l.kernel_w) + " exceeds input " +
                             std::to_string(cur.h) + "x" + std::to_string(cur.w));
                    next = DimChain{l.filters, cur.h - l.kernel_h + 1, cur.w - l.kernel_w + 1};
                    break;
                case LayerKind::AvgPool:
                    if (cur.h < l.pool_h || cur.w < l.pool_w) fail("pool exceeds input");
                    next = DimChain{cur.c, (cur.h - l.pool_h) / l.stride_h + 1,
                                    (cur.w - l.pool_w) / l.stride_w + 1};
                    break;
                case LayerKind::Dense:
                    next = DimChain{1, 1, l.units};
                    break;
                case LayerKind::FlipoutDense:
                    next = DimChain{1, 1, l.units};
                    break;
                case LayerKind::Rbf:
                    if (l.length_scale <= 0) fail("length scale must be > 0");
                    if (l.centroid_dim != cur.flat())
                        fail("centroid dim " + std::to_string(l.centroid_dim) +
                             " != incoming feature dim " + std::to_string(cur.flat()));
                    next = DimChain{1, 1, classes};
                    break;
                case LayerKind::BatchNorm:
                case LayerKind::Square:
                case LayerKind::Log:
                case LayerKind::Softmax:
                    break;
                case LayerKind::Dropout:
                case LayerKind::DropConnect:
                    if (l.drop_rate < 0.0 || l.drop_rate >= 1.0)
                        fail("drop rate must be in [0,1)");
                    break;
            }
            dims.push_back(next);
        }
        return dims;
    }

    void validate() const {
        if (layers.empty()) throw ConfigError("network has no layers");
        if (channels == 0 || timesteps == 0 || classes == 0)
            throw ConfigError("network input/output dims must be positive");
        const LayerSpec& head = layers.back();
        bool rbf_head = head.kind == LayerKind::Rbf;
        bool softmax_head = head.kind == LayerKind::Softmax;
        if (!rbf_head && !softmax_head)
            throw ConfigError("network must end in a softmax or rbf head");
        for (std::size_t i = 0; i + 1 < layers.size(); ++i)
            if (layers[i].kind == LayerKind::Softmax || layers[i].kind == LayerKind::Rbf)
                throw ConfigError("output head must be the last layer");
        if (rbf_head != (loss == LossKind::BinaryCe))
            throw ConfigError("rbf head requires binary cross-entropy and vice versa");
        auto dims = dim_chain();
        if (dims.back().flat() != classes)
            throw ConfigError("head output dim " + std::to_string(dims.back().flat()) +
                              " != class count " + std::to_string(classes));
    }

    bool has_stochastic_layers() const {
        for (const auto& l : layers)
            if ((l.kind == LayerKind::Dropout || l.kind == LayerKind::DropConnect) &&
                    l.drop_rate > 0.0)
                return true;
        for (const auto& l : layers)
            if (l.kind == LayerKind::FlipoutDense) return true;
        return false;
    }
};

}  // namespace uqnet
