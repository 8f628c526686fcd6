#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "uqnet/adam.hpp"
#include "uqnet/evaluation.hpp"
#include "uqnet/inference.hpp"
#include "uqnet/kl_mixture.hpp"
#include "uqnet/network.hpp"
#include "uqnet/shallow_convnet.hpp"

namespace uqnet {

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;  // early stopping on validation loss
    double learning_rate = 1e-4;
    std::size_t kl_samples = 1;  // per adam step, flipout only
    std::size_t ensemble_size = 10;
    std::size_t passes = kDefaultPasses;  // T
    MixturePrior prior;
    ConvNetOptions net;
};

// Trained model(s) for one method. Single-model methods have one member;
// "ensembles" has config.ensemble_size of them.
struct TrainedMethod {
    std::string method;
    std::vector<TrainedModel<float>> members;
    std::vector<std::size_t> stopped_epochs;  // per member, 1-based best epoch
};

namespace train_detail {

inline Tensor<float> one_hot(const std::vector<std::uint8_t>& labels, std::size_t k) {
    Tensor<float> y({labels.size(), k});
    for (std::size_t i = 0; i < labels.size(); ++i) y.at2(i, labels[i]) = 1.0f;
    return y;
}

inline Tensor<float> slice_batch(const EpochSet& set, const std::vector<std::size_t>& order,
                                 std::size_t begin, std::size_t end) {
    const std::size_t C = set.channels(), S = set.timesteps();
    Tensor<float> batch({end - begin, C, S});
    for (std::size_t i = begin; i < end; ++i)
        std::copy(set.data.data.begin() + std::ptrdiff_t(order[i] * C * S),
                  set.data.data.begin() + std::ptrdiff_t((order[i] + 1) * C * S),
                  batch.data.begin() + std::ptrdiff_t((i - begin) * C * S));
    return batch;
}

inline Tensor<float> slice_labels(const EpochSet& set, const std::vector<std::size_t>& order,
                                  std::size_t begin, std::size_t end, std::size_t k) {
    Tensor<float> y({end - begin, k});
    for (std::size_t i = begin; i < end; ++i) y.at2(i - begin, set.labels[order[i]]) = 1.0f;
    return y;
}

// flipout KL term: estimate plus pathwise gradients accumulated into grads,
// weighted by 1/N_train
inline double add_kl_terms(const NetworkSpec& net, const ParamSet<float>& params,
                           ParamSet<float>& grads, const MixturePrior& prior, double weight,
                           std::size_t samples, RngStream& rng) {
    double kl = 0;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        if (net.layers[li].kind != LayerKind::FlipoutDense) continue;
        kl += kl_mixture_grad(params.get(li, "mu_w"), params.get(li, "rho_w"), prior, rng,
                              samples, weight, grads.get(li, "mu_w"), grads.get(li, "rho_w"));
        kl += kl_mixture_grad(params.get(li, "mu_b"), params.get(li, "rho_b"), prior, rng,
                              samples, weight, grads.get(li, "mu_b"), grads.get(li, "rho_b"));
    }
    return kl;
}

}  // namespace train_detail

struct TrainResult {
    TrainedModel<float> model;
    std::size_t best_epoch = 0;  // 1-based
};

// Minibatch Adam with early stopping on validation loss; restores the best
// parameters seen.
inline TrainResult train_model(const NetworkSpec& net, const EpochSet& train,
                               const EpochSet& validation, const TrainConfig& cfg,
                               RngStream& rng) {
    if (train.trials() == 0 || validation.trials() == 0)
        throw DataError("training needs nonempty train and validation sets");
    net.validate();

    ParamSet<float> params = init_params<float>(net, rng);
    AdamState<float> adam = AdamState<float>::init(params, cfg.learning_rate);
    const std::size_t n_train = train.trials();
    const double kl_weight = 1.0 / double(n_train);
    const bool has_flipout = [&] {
        for (const auto& l : net.layers)
            if (l.kind == LayerKind::FlipoutDense) return true;
        return false;
    }();

    const Tensor<float> val_batch = [&] {
        std::vector<std::size_t> idx(validation.trials());
        std::iota(idx.begin(), idx.end(), 0);
        return train_detail::slice_batch(validation, idx, 0, idx.size());
    }();
    const Tensor<float> val_labels = train_detail::one_hot(validation.labels, net.classes);

    ParamSet<float> best_params = params;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0, since_best = 0;

    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (std::size_t begin = 0; begin < n_train; begin += cfg.batch_size) {
            const std::size_t end = std::min(begin + cfg.batch_size, n_train);
            Tensor<float> batch = train_detail::slice_batch(train, order, begin, end);
            Tensor<float> labels = train_detail::slice_labels(train, order, begin, end,
                                                              net.classes);
            auto [out, cache] = forward(net, params, batch, ForwardMode::Train, &rng);
            ParamSet<float> grads = backward(net, params, cache, labels);
            if (has_flipout)
                train_detail::add_kl_terms(net, params, grads, cfg.prior, kl_weight,
                                           cfg.kl_samples, rng);
            adam_step(params, grads, adam);
        }
        // deterministic validation loss
        auto [val_out, val_cache] =
            forward(net, params, val_batch, ForwardMode::Point, nullptr);
        double val_loss = compute_loss(net, val_out, val_labels);
        if (val_loss < best_val) {
            best_val = val_loss;
            best_params = params;
            best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    return {TrainedModel<float>{net, std::move(best_params)}, best_epoch};
}

// Trains one of the seven methods on a LOSO split. Ensemble members differ
// only by initialization seed and shuffle order.
inline TrainedMethod train_method(const std::string& method, const Split& split,
                                  const TrainConfig& cfg, RngStream& rng) {
    const auto& names = method_names();
    if (std::find(names.begin(), names.end(), method) == names.end())
        throw ConfigError("unknown method: " + method);
    if (split.train.trials() == 0) throw DataError("empty training split");

    const std::size_t C = split.train.channels(), S = split.train.timesteps();
    const std::size_t K = split.train.classes;

    TrainedMethod out;
    out.method = method;
    if (method == "ensembles") {
        auto net = build_shallow_convnet("ensemble_member", C, S, K, cfg.net);
        if (cfg.ensemble_size < 2) throw ConfigError("ensemble size must be >= 2");
        for (std::size_t m = 0; m < cfg.ensemble_size; ++m) {
            RngStream member_rng = RngStream::child(rng.engine()(), m);
            auto res = train_model(net, split.train, split.validation, cfg, member_rng);
            out.members.push_back(std::move(res.model));
            out.stopped_epochs.push_back(res.best_epoch);
        }
    } else {
        auto net = build_shallow_convnet(method, C, S, K, cfg.net);
        auto res = train_model(net, split.train, split.validation, cfg, rng);
        out.members.push_back(std::move(res.model));
        out.stopped_epochs.push_back(res.best_epoch);
    }
    return out;
}

// Inference behaviour per method name.
inline bool method_is_mc(const std::string& method) {
    return method == "mc_dropout" || method == "mc_dropconnect" || method == "flipout" ||
           method == "ensembles";
}

inline PredictionSamples method_predictions(const TrainedMethod& trained,
                                            const Tensor<float>& batch, std::size_t passes,
                                            RngStream& rng) {
    if (trained.method == "duq")
        throw ConfigError("duq produces kernel certainties, not prediction samples");
    if (trained.method == "ensembles") {
        Ensemble<float> ens{trained.members};
        return ensemble_predictions(ens, batch);
    }
    StochasticModel<float> model;
    model.model = trained.members.front();
    model.variant = trained.method;
    model.stochastic_inference = method_is_mc(trained.method);
    // standard baselines: a single point forward
    const std::size_t T = model.stochastic_inference ? passes : 1;
    return mc_sample_predictions(model, batch, T, rng);
}

}  // namespace uqnet
