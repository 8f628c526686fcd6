#pragma once

#include <string>
#include <vector>

#include "uqnet/data.hpp"
#include "uqnet/measures.hpp"
#include "uqnet/network.hpp"

namespace uqnet {

inline constexpr std::size_t kDefaultPasses = 50;

template <typename T = float>
struct TrainedModel {
    NetworkSpec spec;
    ParamSet<T> params;
};

// One trained network plus its inference behaviour. Standard baselines
// (dropout, dropconnect) keep stochastic_inference off and are evaluated
// with a single point forward.
template <typename T = float>
struct StochasticModel {
    TrainedModel<T> model;
    std::string variant;
    std::size_t default_passes = kDefaultPasses;
    bool stochastic_inference = false;
};

template <typename T = float>
struct Ensemble {
    std::vector<TrainedModel<T>> members;
};

// T stochastic forward passes stacked into PredictionSamples. Variants
// without stochastic inference produce T identical slices.
template <typename T>
PredictionSamples mc_sample_predictions(const StochasticModel<T>& model, const Tensor<T>& batch,
                                        std::size_t passes, RngStream& rng) {
    if (passes == 0) throw ConfigError("mc sampling needs at least one forward pass");
    const std::size_t N = batch.dim(0), K = model.model.spec.classes;
    PredictionSamples samples;
    samples.method = model.variant;
    samples.probs = Tensor<double>({passes, N, K});
    ParamSet<T> params = model.model.params;  // point/stochastic modes leave it untouched
    const bool stochastic =
        model.stochastic_inference && model.model.spec.has_stochastic_layers();
    if (!stochastic) {
        auto [out, cache] = forward(model.model.spec, params, batch, ForwardMode::Point, nullptr);
        for (std::size_t t = 0; t < passes; ++t)
            for (std::size_t i = 0; i < out.size(); ++i)
                samples.probs.data[t * out.size() + i] = double(out.data[i]);
        return samples;
    }
    for (std::size_t t = 0; t < passes; ++t) {
        auto [out, cache] =
            forward(model.model.spec, params, batch, ForwardMode::Stochastic, &rng);
        for (std::size_t i = 0; i < out.size(); ++i)
            samples.probs.data[t * out.size() + i] = double(out.data[i]);
    }
    return samples;
}

// Slice t is member t's point forward; member disagreement carries the
// epistemic signal.
template <typename T>
PredictionSamples ensemble_predictions(const Ensemble<T>& ens, const Tensor<T>& batch) {
    if (ens.members.empty()) throw ConfigError("ensemble has no members");
    const std::size_t N = batch.dim(0), K = ens.members.front().spec.classes;
    PredictionSamples samples;
    samples.method = "ensembles";
    samples.probs = Tensor<double>({ens.members.size(), N, K});
    for (std::size_t t = 0; t < ens.members.size(); ++t) {
        ParamSet<T> params = ens.members[t].params;
        auto [out, cache] =
            forward(ens.members[t].spec, params, batch, ForwardMode::Point, nullptr);
        for (std::size_t i = 0; i < out.size(); ++i)
            samples.probs.data[t * out.size() + i] = double(out.data[i]);
    }
    return samples;
}

struct DuqPrediction {
    std::vector<std::size_t> predicted_class;
    std::vector<double> uncertainty;  // -max kernel, higher = reject first
    Tensor<double> kernel;            // [N, K]
};

template <typename T>
DuqPrediction duq_predict(const TrainedModel<T>& model, const Tensor<T>& batch) {
    if (model.spec.layers.empty() || model.spec.layers.back().kind != LayerKind::Rbf)
        throw ConfigError("duq prediction requires an rbf head");
    ParamSet<T> params = model.params;
    auto [out, cache] = forward(model.spec, params, batch, ForwardMode::Point, nullptr);
    const std::size_t N = out.dim(0), K = out.dim(1);
    DuqPrediction pred;
    pred.kernel = Tensor<double>({N, K});
    for (std::size_t i = 0; i < out.size(); ++i) pred.kernel.data[i] = double(out.data[i]);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (pred.kernel.at2(n, k) > pred.kernel.at2(n, best)) best = k;
        pred.predicted_class.push_back(best);
        pred.uncertainty.push_back(-pred.kernel.at2(n, best));
    }
    return pred;
}

}  // namespace uqnet
