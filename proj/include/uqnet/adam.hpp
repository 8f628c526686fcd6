#pragma once

#include <cmath>
#include <cstdint>

#include "uqnet/params.hpp"

namespace uqnet {

template <typename T>
struct AdamState {
    ParamSet<T> m, v;
    std::uint64_t t = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState init(const ParamSet<T>& params, double lr = 1e-4) {
        AdamState st;
        st.m = params.zeros_clone();
        st.v = params.zeros_clone();
        st.lr = lr;
        return st;
    }
};

// Bias-corrected Adam update on every trainable tensor; non-trainable ones
// (batchnorm running stats) are left alone.
template <typename T>
void adam_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamState<T>& state) {
    if (!params.shapes_match(grads) || !params.shapes_match(state.m))
        throw StateError("adam: parameter/gradient/state shapes disagree");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, double(state.t));
    for (std::size_t li = 0; li < params.per_layer.size(); ++li)
        for (std::size_t pi = 0; pi < params.per_layer[li].size(); ++pi) {
            if (!params.per_layer[li][pi].trainable) continue;
            auto& p = params.per_layer[li][pi].value;
            const auto& g = grads.per_layer[li][pi].value;
            auto& m = state.m.per_layer[li][pi].value;
            auto& v = state.v.per_layer[li][pi].value;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = g.data[i];
                m.data[i] = T(state.beta1 * double(m.data[i]) + (1.0 - state.beta1) * gi);
                v.data[i] = T(state.beta2 * double(v.data[i]) + (1.0 - state.beta2) * gi * gi);
                const double mhat = double(m.data[i]) / bc1;
                const double vhat = double(v.data[i]) / bc2;
                p.data[i] = T(double(p.data[i]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
            }
        }
}

}  // namespace uqnet
