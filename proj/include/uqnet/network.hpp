#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "uqnet/layers.hpp"
#include "uqnet/params.hpp"
#include "uqnet/rng.hpp"
#include "uqnet/tensor.hpp"

namespace uqnet {

inline constexpr double kLogClipLo = 1e-12;
inline constexpr double kLogFloor = 1e-6;  // guard inside the log activation
inline constexpr double kBnMomentum = 0.1;
inline constexpr double kBnEps = 1e-5;

template <typename T>
struct LayerCache {
    Tensor<T> input;
    Tensor<T> output;
    std::vector<std::pair<std::string, Tensor<T>>> aux;

    void put(const std::string& k, Tensor<T> t) { aux.emplace_back(k, std::move(t)); }
    const Tensor<T>& get(const std::string& k) const {
        for (const auto& [name, t] : aux)
            if (name == k) return t;
        throw StateError("missing cache entry " + k);
    }
};

template <typename T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
    ForwardMode mode = ForwardMode::Point;
    std::size_t batch_size = 0;
};

namespace detail {

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const std::size_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t F = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const std::size_t OH = H - KH + 1, OW = W - KW + 1;
    Tensor<T> y({N, F, OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    T acc = b[f];
                    for (std::size_t c = 0; c < Cin; ++c)
                        for (std::size_t kh = 0; kh < KH; ++kh)
                            for (std::size_t kw = 0; kw < KW; ++kw)
                                acc += x.at4(n, c, oh + kh, ow + kw) * w.at4(f, c, kh, kw);
                    y.at4(n, f, oh, ow) = acc;
                }
    return y;
}

template <typename T>
void conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>& gx,
                Tensor<T>& gw, Tensor<T>& gb) {
    const std::size_t N = x.dim(0), Cin = x.dim(1);
    const std::size_t F = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const std::size_t OH = gy.dim(2), OW = gy.dim(3);
    gx = zeros_like(x);
    gw = zeros_like(w);
    gb = Tensor<T>({F});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const T g = gy.at4(n, f, oh, ow);
                    gb[f] += g;
                    for (std::size_t c = 0; c < Cin; ++c)
                        for (std::size_t kh = 0; kh < KH; ++kh)
                            for (std::size_t kw = 0; kw < KW; ++kw) {
                                gw.at4(f, c, kh, kw) += g * x.at4(n, c, oh + kh, ow + kw);
                                gx.at4(n, c, oh + kh, ow + kw) += g * w.at4(f, c, kh, kw);
                            }
                }
}

// x viewed as [N, in_feat] regardless of its spatial shape
template <typename T>
Tensor<T> as_matrix(const Tensor<T>& x, std::size_t n) {
    Tensor<T> m;
    m.shape = {n, x.size() / n};
    m.data = x.data;
    return m;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const std::size_t N = a.dim(0), I = a.dim(1), O = b.dim(1);
    Tensor<T> y({N, O});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < I; ++i) {
            const T av = a.at2(n, i);
            if (av == T(0)) continue;
            for (std::size_t o = 0; o < O; ++o) y.at2(n, o) += av * b.at2(i, o);
        }
    return y;
}

}  // namespace detail

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    Tensor<T> p({N, K});
    for (std::size_t n = 0; n < N; ++n) {
        T mx = logits.at2(n, 0);
        for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits.at2(n, k));
        T sum = 0;
        for (std::size_t k = 0; k < K; ++k) {
            T e = std::exp(logits.at2(n, k) - mx);
            p.at2(n, k) = e;
            sum += e;
        }
        for (std::size_t k = 0; k < K; ++k) p.at2(n, k) /= sum;
    }
    return p;
}

// Forward pass. params is mutable because train mode updates batchnorm
// running statistics; point and stochastic modes never write to it.
template <typename T>
std::pair<Tensor<T>, ForwardCache<T>> forward(const NetworkSpec& net, ParamSet<T>& params,
                                              const Tensor<T>& batch, ForwardMode mode,
                                              RngStream* rng) {
    if (batch.rank() != 3 || batch.dim(1) != net.channels || batch.dim(2) != net.timesteps)
        throw DimensionError("batch shape " + batch.shape_str() + " does not match network input (N," +
                             std::to_string(net.channels) + "," + std::to_string(net.timesteps) + ")");
    if (mode != ForwardMode::Point && rng == nullptr)
        throw ConfigError("rng stream required unless mode is point");
    if (params.per_layer.size() != net.layers.size())
        throw StateError("param set layer count does not match network spec");

    const std::size_t N = batch.dim(0);
    ForwardCache<T> cache;
    cache.mode = mode;
    cache.batch_size = N;
    cache.layers.resize(net.layers.size());

    Tensor<T> x({N, 1, net.channels, net.timesteps});
    x.data = batch.data;

    const bool noise_on = mode != ForwardMode::Point;
    const bool batch_stats = mode == ForwardMode::Train;

    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        LayerCache<T>& lc = cache.layers[li];
        lc.input = x;
        Tensor<T> y;
        switch (l.kind) {
            case LayerKind::Conv2d:
                y = detail::conv2d_fwd(x, params.get(li, "W"), params.get(li, "b"));
                break;
            case LayerKind::Dense: {
                Tensor<T> xm = detail::as_matrix(x, N);
                const Tensor<T>& w = params.get(li, "W");
                const Tensor<T>& b = params.get(li, "b");
                if (xm.dim(1) != w.dim(0))
                    throw DimensionError("dense layer " + std::to_string(li) + ": input features " +
                                         std::to_string(xm.dim(1)) + " != weight rows " +
                                         std::to_string(w.dim(0)));
                Tensor<T> z = detail::matmul(xm, w);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t o = 0; o < l.units; ++o) z.at2(n, o) += b[o];
                lc.put("z", z);
                y = z;
                if (l.activation == Activation::Relu)
                    for (auto& v : y.data) v = std::max(v, T(0));
                break;
            }
            case LayerKind::BatchNorm: {
                const std::size_t C = x.dim(1), spatial = x.dim(2) * x.dim(3);
                const Tensor<T>& gamma = params.get(li, "gamma");
                const Tensor<T>& beta = params.get(li, "beta");
                Tensor<T> mean({C}), var({C});
                if (batch_stats) {
                    for (std::size_t c = 0; c < C; ++c) {
                        T m = 0;
                        for (std::size_t n = 0; n < N; ++n)
                            for (std::size_t s = 0; s < spatial; ++s)
                                m += x.data[(n * C + c) * spatial + s];
                        m /= T(N * spatial);
                        T v = 0;
                        for (std::size_t n = 0; n < N; ++n)
                            for (std::size_t s = 0; s < spatial; ++s) {
                                T d = x.data[(n * C + c) * spatial + s] - m;
                                v += d * d;
                            }
                        v /= T(N * spatial);
                        mean[c] = m;
                        var[c] = v;
                    }
                    Tensor<T>& rm = params.get(li, "running_mean");
                    Tensor<T>& rv = params.get(li, "running_var");
                    for (std::size_t c = 0; c < C; ++c) {
                        rm[c] = T(1 - kBnMomentum) * rm[c] + T(kBnMomentum) * mean[c];
                        rv[c] = T(1 - kBnMomentum) * rv[c] + T(kBnMomentum) * var[c];
                    }
                } else {
                    mean = params.get(li, "running_mean");
                    var = params.get(li, "running_var");
                }
                y = zeros_like(x);
                Tensor<T> xhat = zeros_like(x);
                Tensor<T> inv_std({C});
                for (std::size_t c = 0; c < C; ++c)
                    inv_std[c] = T(1) / std::sqrt(var[c] + T(kBnEps));
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t s = 0; s < spatial; ++s) {
                            std::size_t idx = (n * C + c) * spatial + s;
                            xhat.data[idx] = (x.data[idx] - mean[c]) * inv_std[c];
                            y.data[idx] = gamma[c] * xhat.data[idx] + beta[c];
                        }
                lc.put("xhat", std::move(xhat));
                lc.put("inv_std", std::move(inv_std));
                break;
            }
            case LayerKind::Square:
                y = x;
                for (auto& v : y.data) v = v * v;
                break;
            case LayerKind::Log:
                y = x;
                for (auto& v : y.data) v = std::log(std::max(v, T(kLogFloor)));
                break;
            case LayerKind::AvgPool: {
                const std::size_t C = x.dim(1), H = x.dim(2), W = x.dim(3);
                const std::size_t OH = (H - l.pool_h) / l.stride_h + 1;
                const std::size_t OW = (W - l.pool_w) / l.stride_w + 1;
                y = Tensor<T>({N, C, OH, OW});
                const T inv = T(1) / T(l.pool_h * l.pool_w);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t oh = 0; oh < OH; ++oh)
                            for (std::size_t ow = 0; ow < OW; ++ow) {
                                T acc = 0;
                                for (std::size_t ph = 0; ph < l.pool_h; ++ph)
                                    for (std::size_t pw = 0; pw < l.pool_w; ++pw)
                                        acc += x.at4(n, c, oh * l.stride_h + ph,
                                                     ow * l.stride_w + pw);
                                y.at4(n, c, oh, ow) = acc * inv;
                            }
                break;
            }
            case LayerKind::Dropout:
            case LayerKind::DropConnect: {
                // inverted scaling, so the noise expectation matches point mode
                if (noise_on && l.drop_rate > 0.0) {
                    Tensor<T> mask(x.shape);
                    const T keep_inv = T(1.0 / (1.0 - l.drop_rate));
                    for (auto& m : mask.data)
                        m = rng->bernoulli(l.drop_rate) ? T(0) : keep_inv;
                    y = x;
                    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= mask.data[i];
                    lc.put("mask", std::move(mask));
                } else {
                    y = x;
                }
                break;
            }
            case LayerKind::FlipoutDense: {
                Tensor<T> xm = detail::as_matrix(x, N);
                const std::size_t in = xm.dim(1), out = l.units;
                const Tensor<T>& mu_w = params.get(li, "mu_w");
                const Tensor<T>& mu_b = params.get(li, "mu_b");
                y = detail::matmul(xm, mu_w);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t o = 0; o < out; ++o) y.at2(n, o) += mu_b[o];
                if (noise_on) {
                    const Tensor<T>& rho_w = params.get(li, "rho_w");
                    const Tensor<T>& rho_b = params.get(li, "rho_b");
                    // draw order is fixed: E, s, r, b_eps
                    Tensor<T> E({in, out});
                    for (auto& v : E.data) v = static_cast<T>(rng->normal());
                    Tensor<T> s({N, in});
                    for (auto& v : s.data) v = static_cast<T>(rng->sign());
                    Tensor<T> r({N, out});
                    for (auto& v : r.data) v = static_cast<T>(rng->sign());
                    Tensor<T> b_eps({out});
                    for (auto& v : b_eps.data) v = static_cast<T>(rng->normal());

                    Tensor<T> pert({in, out});  // sigma .* E
                    for (std::size_t i = 0; i < pert.size(); ++i)
                        pert.data[i] = static_cast<T>(softplus(double(rho_w.data[i]))) * E.data[i];
                    Tensor<T> xs = xm;
                    for (std::size_t i = 0; i < xs.size(); ++i) xs.data[i] *= s.data[i];
                    Tensor<T> v2 = detail::matmul(xs, pert);
                    for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t o = 0; o < out; ++o)
                            y.at2(n, o) += v2.at2(n, o) * r.at2(n, o) +
                                           static_cast<T>(softplus(double(rho_b[o]))) * b_eps[o];
                    lc.put("E", std::move(E));
                    lc.put("s", std::move(s));
                    lc.put("r", std::move(r));
                    lc.put("b_eps", std::move(b_eps));
                    lc.put("pert", std::move(pert));
                }
                break;
            }
            case LayerKind::Rbf: {
                Tensor<T> f = detail::as_matrix(x, N);
                const std::size_t n_dim = l.centroid_dim, K = net.classes;
                const Tensor<T>& W = params.get(li, "W");  // [K, n, n]
                const Tensor<T>& e = params.get(li, "e");  // [K, n]
                Tensor<T> z({N, K, n_dim});
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < K; ++c)
                        for (std::size_t i = 0; i < n_dim; ++i) {
                            T acc = 0;
                            for (std::size_t j = 0; j < n_dim; ++j)
                                acc += W.at3(c, i, j) * f.at2(n, j);
                            z.at3(n, c, i) = acc;
                        }
                y = Tensor<T>({N, K});
                const double denom = 2.0 * l.length_scale * l.length_scale;
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < K; ++c) {
                        double d2 = 0;
                        for (std::size_t i = 0; i < n_dim; ++i) {
                            double diff = double(z.at3(n, c, i)) - double(e.at2(c, i));
                            d2 += diff * diff;
                        }
                        y.at2(n, c) = static_cast<T>(std::exp(-(d2 / double(n_dim)) / denom));
                    }
                lc.put("z", std::move(z));
                break;
            }
            case LayerKind::Softmax:
                y = softmax_rows(detail::as_matrix(x, N));
                break;
        }
        if (!y.all_finite())
            throw NumericError(std::string("non-finite output from layer ") + std::to_string(li) +
                               " (" + layer_kind_name(l.kind) + ")");
        lc.output = y;
        x = std::move(y);
    }
    return {std::move(x), std::move(cache)};
}

// Data loss (no KL term) for the configured head.
template <typename T>
T compute_loss(const NetworkSpec& net, const Tensor<T>& outputs, const Tensor<T>& labels) {
    check_same_shape(outputs, labels, "loss");
    const std::size_t N = outputs.dim(0), K = outputs.dim(1);
    T loss = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k) {
            T y = labels.at2(n, k);
            T p = outputs.at2(n, k);
            if (net.loss == LossKind::CategoricalCe) {
                if (y != 0) loss -= y * std::log(std::max(p, T(kLogClipLo)));
            } else {
                loss -= y * std::log(std::max(p, T(kLogClipLo))) +
                        (T(1) - y) * std::log(std::max(T(1) - p, T(kLogClipLo)));
            }
        }
    return loss / T(N);
}

// Gradient of the data loss w.r.t. every parameter, averaged over the batch.
template <typename T>
ParamSet<T> backward(const NetworkSpec& net, const ParamSet<T>& params,
                     const ForwardCache<T>& cache, const Tensor<T>& labels) {
    if (cache.layers.size() != net.layers.size())
        throw StateError("cache does not match network spec");
    const std::size_t N = cache.batch_size;
    if (labels.rank() != 2 || labels.dim(0) != N || labels.dim(1) != net.classes)
        throw DimensionError("labels shape " + labels.shape_str() + " does not match (N,K)");

    ParamSet<T> grads = params.zeros_clone();
    Tensor<T> g;  // gradient w.r.t. current layer input, flows backwards

    // head + loss combined
    {
        const std::size_t li = net.layers.size() - 1;
        const LayerCache<T>& lc = cache.layers[li];
        const Tensor<T>& out = lc.output;
        if (net.layers[li].kind == LayerKind::Softmax) {
            // d(CE o softmax)/dlogits = (p - y) / N
            g = Tensor<T>({N, net.classes});
            for (std::size_t i = 0; i < g.size(); ++i)
                g.data[i] = (out.data[i] - labels.data[i]) / T(N);
        } else {
            // rbf head, binary CE on kernel values
            Tensor<T> gk({N, net.classes});
            for (std::size_t i = 0; i < gk.size(); ++i) {
                double y = labels.data[i], k = out.data[i];
                double d = 0;
                if (k > kLogClipLo) d -= y / k;
                if (1.0 - k > kLogClipLo) d += (1.0 - y) / (1.0 - k);
                gk.data[i] = static_cast<T>(d / double(N));
            }
            const LayerSpec& l = net.layers[li];
            const std::size_t n_dim = l.centroid_dim, K = net.classes;
            const Tensor<T>& W = params.get(li, "W");
            const Tensor<T>& e = params.get(li, "e");
            const Tensor<T>& z = lc.get("z");
            Tensor<T> f = detail::as_matrix(lc.input, N);
            Tensor<T>& gW = grads.get(li, "W");
            Tensor<T>& ge = grads.get(li, "e");
            Tensor<T> gf({N, n_dim});
            const double denom = 2.0 * l.length_scale * l.length_scale;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < K; ++c) {
                    // dK/dd = -K / (2 sigma^2), d = mean squared distance
                    double gd = double(gk.at2(n, c)) *
                                (-double(lc.output.at2(n, c)) / denom);
                    for (std::size_t i = 0; i < n_dim; ++i) {
                        double diff = double(z.at3(n, c, i)) - double(e.at2(c, i));
                        double gz = gd * (2.0 / double(n_dim)) * diff;
                        ge.at2(c, i) -= static_cast<T>(gz);
                        for (std::size_t j = 0; j < n_dim; ++j) {
                            gW.at3(c, i, j) += static_cast<T>(gz * double(f.at2(n, j)));
                            gf.at2(n, j) += static_cast<T>(gz * double(W.at3(c, i, j)));
                        }
                    }
                }
            g = Tensor<T>(lc.input.shape);
            g.data = gf.data;
        }
    }

    // remaining layers, li = L-2 down to 0
    for (std::size_t li = net.layers.size() - 1; li-- > 0;) {
        const LayerSpec& l = net.layers[li];
        const LayerCache<T>& lc = cache.layers[li];
        const Tensor<T>& x = lc.input;
        Tensor<T> gin;
        switch (l.kind) {
            case LayerKind::Conv2d: {
                Tensor<T> gy = g;
                gy.shape = lc.output.shape;
                detail::conv2d_bwd(x, params.get(li, "W"), gy, gin, grads.get(li, "W"),
                                   grads.get(li, "b"));
                break;
            }
            case LayerKind::Dense: {
                Tensor<T> xm = detail::as_matrix(x, N);
                const std::size_t in = xm.dim(1), out = l.units;
                Tensor<T> gz = g;
                gz.shape = {N, out};
                if (l.activation == Activation::Relu) {
                    const Tensor<T>& z = lc.get("z");
                    for (std::size_t i = 0; i < gz.size(); ++i)
                        if (z.data[i] <= T(0)) gz.data[i] = T(0);
                }
                const Tensor<T>& w = params.get(li, "W");
                Tensor<T>& gw = grads.get(li, "W");
                Tensor<T>& gb = grads.get(li, "b");
                Tensor<T> gx({N, in});
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t o = 0; o < out; ++o) {
                        const T gv = gz.at2(n, o);
                        gb[o] += gv;
                        for (std::size_t i = 0; i < in; ++i) {
                            gw.at2(i, o) += gv * xm.at2(n, i);
                            gx.at2(n, i) += gv * w.at2(i, o);
                        }
                    }
                gin = Tensor<T>(x.shape);
                gin.data = gx.data;
                break;
            }
            case LayerKind::BatchNorm: {
                const std::size_t C = x.dim(1), spatial = x.dim(2) * x.dim(3);
                const Tensor<T>& gamma = params.get(li, "gamma");
                const Tensor<T>& xhat = lc.get("xhat");
                const Tensor<T>& inv_std = lc.get("inv_std");
                Tensor<T> gy = g;
                Tensor<T>& ggamma = grads.get(li, "gamma");
                Tensor<T>& gbeta = grads.get(li, "beta");
                gin = zeros_like(x);
                const T m = T(N * spatial);
                for (std::size_t c = 0; c < C; ++c) {
                    T sum_gy = 0, sum_gy_xhat = 0;
                    for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t s = 0; s < spatial; ++s) {
                            std::size_t idx = (n * C + c) * spatial + s;
                            sum_gy += gy.data[idx];
                            sum_gy_xhat += gy.data[idx] * xhat.data[idx];
                        }
                    ggamma[c] += sum_gy_xhat;
                    gbeta[c] += sum_gy;
                    for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t s = 0; s < spatial; ++s) {
                            std::size_t idx = (n * C + c) * spatial + s;
                            if (cache.mode == ForwardMode::Train) {
                                gin.data[idx] =
                                    gamma[c] * inv_std[c] / m *
                                    (m * gy.data[idx] - sum_gy - xhat.data[idx] * sum_gy_xhat);
                            } else {
                                // running statistics are constants
                                gin.data[idx] = gamma[c] * inv_std[c] * gy.data[idx];
                            }
                        }
                }
                break;
            }
            case LayerKind::Square:
                gin = g;
                for (std::size_t i = 0; i < gin.size(); ++i)
                    gin.data[i] = g.data[i] * T(2) * x.data[i];
                gin.shape = x.shape;
                break;
            case LayerKind::Log:
                gin = g;
                for (std::size_t i = 0; i < gin.size(); ++i)
                    gin.data[i] = x.data[i] > T(kLogFloor) ? g.data[i] / x.data[i] : T(0);
                gin.shape = x.shape;
                break;
            case LayerKind::AvgPool: {
                const std::size_t C = x.dim(1);
                const std::size_t OH = lc.output.dim(2), OW = lc.output.dim(3);
                Tensor<T> gy = g;
                gy.shape = lc.output.shape;
                gin = zeros_like(x);
                const T inv = T(1) / T(l.pool_h * l.pool_w);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t oh = 0; oh < OH; ++oh)
                            for (std::size_t ow = 0; ow < OW; ++ow) {
                                const T gv = gy.at4(n, c, oh, ow) * inv;
                                for (std::size_t ph = 0; ph < l.pool_h; ++ph)
                                    for (std::size_t pw = 0; pw < l.pool_w; ++pw)
                                        gin.at4(n, c, oh * l.stride_h + ph,
                                                ow * l.stride_w + pw) += gv;
                            }
                break;
            }
            case LayerKind::Dropout:
            case LayerKind::DropConnect: {
                gin = g;
                gin.shape = x.shape;
                if (cache.mode != ForwardMode::Point && l.drop_rate > 0.0) {
                    const Tensor<T>& mask = lc.get("mask");
                    for (std::size_t i = 0; i < gin.size(); ++i) gin.data[i] *= mask.data[i];
                }
                break;
            }
            case LayerKind::FlipoutDense: {
                Tensor<T> xm = detail::as_matrix(x, N);
                const std::size_t in = xm.dim(1), out = l.units;
                Tensor<T> gy = g;
                gy.shape = {N, out};
                const Tensor<T>& mu_w = params.get(li, "mu_w");
                Tensor<T>& gmu_w = grads.get(li, "mu_w");
                Tensor<T>& gmu_b = grads.get(li, "mu_b");
                Tensor<T> gx({N, in});
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t o = 0; o < out; ++o) {
                        const T gv = gy.at2(n, o);
                        gmu_b[o] += gv;
                        for (std::size_t i = 0; i < in; ++i) {
                            gmu_w.at2(i, o) += gv * xm.at2(n, i);
                            gx.at2(n, i) += gv * mu_w.at2(i, o);
                        }
                    }
                if (cache.mode != ForwardMode::Point) {
                    const Tensor<T>& E = lc.get("E");
                    const Tensor<T>& s = lc.get("s");
                    const Tensor<T>& r = lc.get("r");
                    const Tensor<T>& b_eps = lc.get("b_eps");
                    const Tensor<T>& pert = lc.get("pert");
                    const Tensor<T>& rho_w = params.get(li, "rho_w");
                    const Tensor<T>& rho_b = params.get(li, "rho_b");
                    Tensor<T>& grho_w = grads.get(li, "rho_w");
                    Tensor<T>& grho_b = grads.get(li, "rho_b");
                    for (std::size_t n = 0; n < N; ++n)
                        for (std::size_t o = 0; o < out; ++o) {
                            const T gvr = gy.at2(n, o) * r.at2(n, o);
                            for (std::size_t i = 0; i < in; ++i) {
                                const T u = xm.at2(n, i) * s.at2(n, i);
                                // d pert_{io} / d rho = sigmoid(rho) * E
                                const double sig =
                                    1.0 / (1.0 + std::exp(-double(rho_w.at2(i, o))));
                                grho_w.at2(i, o) +=
                                    static_cast<T>(double(gvr * u * E.at2(i, o)) * sig);
                                gx.at2(n, i) += gvr * pert.at2(i, o) * s.at2(n, i);
                            }
                        }
                    for (std::size_t o = 0; o < out; ++o) {
                        T sum_g = 0;
                        for (std::size_t n = 0; n < N; ++n) sum_g += gy.at2(n, o);
                        const double sig = 1.0 / (1.0 + std::exp(-double(rho_b[o])));
                        grho_b[o] += static_cast<T>(double(sum_g * b_eps[o]) * sig);
                    }
                }
                gin = Tensor<T>(x.shape);
                gin.data = gx.data;
                break;
            }
            case LayerKind::Rbf:
            case LayerKind::Softmax:
                throw StateError("output head cannot appear mid-network");
        }
        g = std::move(gin);
    }
    return grads;
}

// Max relative error between analytic gradients and central finite
// differences. Analytic side runs in 64-bit; the difference quotient is
// evaluated in extended precision so its rounding noise stays below the
// comparison floor. Stochastic layers are pinned by re-seeding the rng
// identically for every forward evaluation.
inline double check_gradients(const NetworkSpec& net, const ParamSet<double>& params,
                              const Tensor<double>& batch, const Tensor<double>& labels,
                              double eps = 1e-5, uint64_t noise_seed = 1234) {
    const Tensor<long double> batch_x = batch.cast<long double>();
    const Tensor<long double> labels_x = labels.cast<long double>();
    auto loss_at = [&](const ParamSet<double>& p) {
        ParamSet<long double> pc = p.cast<long double>();  // train mode mutates running stats
        RngStream rng(noise_seed);
        auto [out, cache] = forward(net, pc, batch_x, ForwardMode::Train, &rng);
        (void)cache;
        return compute_loss(net, out, labels_x);
    };
    ParamSet<double> pc = params;
    RngStream rng(noise_seed);
    auto [out, cache] = forward(net, pc, batch, ForwardMode::Train, &rng);
    (void)out;
    ParamSet<double> analytic = backward(net, params, cache, labels);

    double max_rel = 0;
    ParamSet<double> work = params;
    for (std::size_t li = 0; li < params.per_layer.size(); ++li)
        for (std::size_t pi = 0; pi < params.per_layer[li].size(); ++pi) {
            if (!params.per_layer[li][pi].trainable) continue;
            auto& wt = work.per_layer[li][pi].value;
            const auto& at = analytic.per_layer[li][pi].value;
            for (std::size_t i = 0; i < wt.size(); ++i) {
                const double orig = wt.data[i];
                wt.data[i] = orig + eps;
                const double lp = loss_at(work);
                wt.data[i] = orig - eps;
                const double lm = loss_at(work);
                wt.data[i] = orig;
                const double num = (lp - lm) / (2.0 * eps);
                const double ana = at.data[i];
                const double rel = std::abs(ana - num) /
                                   std::max({std::abs(ana), std::abs(num), 1e-8});
                max_rel = std::max(max_rel, rel);
            }
        }
    return max_rel;
}

}  // namespace uqnet
