#include <cmath>

#include "doctest.h"
#include "uqnet/training.hpp"

using namespace uqnet;

namespace {

// strongly separable toy set: class k puts a large oscillation on channel k
EpochSet toy_set(std::size_t per_class, std::uint64_t seed, std::uint8_t subject = 0) {
    const std::size_t K = 3, C = 3, S = 32;
    EpochSet set;
    set.classes = K;
    set.sampling_rate = 128.0f;
    set.channel_names = {"A", "B", "C"};
    set.data = Tensor<float>({per_class * K, C, S});
    RngStream rng(seed);
    std::size_t i = 0;
    for (std::size_t cls = 0; cls < K; ++cls)
        for (std::size_t rep = 0; rep < per_class; ++rep, ++i) {
            const double phase = rng.uniform() * 2.0 * M_PI;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < S; ++t) {
                    double v = 0.1 * rng.normal();
                    if (c == cls) v += 2.0 * std::sin(0.5 * double(t) + phase);
                    set.data.at3(i, c, t) = float(v);
                }
            set.labels.push_back(std::uint8_t(cls));
            set.subject_ids.push_back(subject);
        }
    return set;
}

ConvNetOptions tiny_net() {
    ConvNetOptions opt;
    opt.temporal_filters = 4;
    opt.spatial_filters = 4;
    opt.temporal_kernel = 7;
    opt.pool_size = 8;
    opt.pool_stride = 4;
    opt.flipout_units = 5;
    opt.duq_dim = 8;
    return opt;
}

TrainConfig fast_config() {
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.max_epochs = 60;
    cfg.patience = 15;
    cfg.learning_rate = 1e-3;
    cfg.ensemble_size = 2;
    cfg.passes = 8;
    cfg.net = tiny_net();
    return cfg;
}

bool params_equal(const ParamSet<float>& a, const ParamSet<float>& b) {
    if (a.per_layer.size() != b.per_layer.size()) return false;
    for (std::size_t li = 0; li < a.per_layer.size(); ++li) {
        if (a.per_layer[li].size() != b.per_layer[li].size()) return false;
        for (std::size_t p = 0; p < a.per_layer[li].size(); ++p)
            if (a.per_layer[li][p].value.data != b.per_layer[li][p].value.data) return false;
    }
    return true;
}

Split toy_split(std::uint64_t seed) {
    Split split;
    split.train = toy_set(20, seed);
    split.validation = toy_set(6, seed + 1);
    split.within_population = toy_set(8, seed + 2);
    return split;
}

}  // namespace

TEST_CASE("every method learns a separable toy problem") {
    auto split = toy_split(301);
    auto cfg = fast_config();
    for (const auto& method : method_names()) {
        CAPTURE(method);
        RngStream rng(42);
        auto trained = train_method(method, split, cfg, rng);
        CHECK(trained.method == method);
        CHECK(trained.members.size() == (method == "ensembles" ? cfg.ensemble_size : 1));
        for (auto e : trained.stopped_epochs) CHECK(e >= 1);

        const auto& test = split.within_population;
        double acc;
        if (method == "duq") {
            auto pred = duq_predict(trained.members.front(), test.data);
            acc = accuracy(pred.predicted_class, test.labels);
        } else {
            RngStream prng(7);
            auto samples = method_predictions(trained, test.data, cfg.passes, prng);
            acc = accuracy(classify(samples), test.labels);
        }
        CHECK(acc > 0.9);
    }
}

TEST_CASE("training is deterministic given the seed") {
    auto split = toy_split(55);
    auto cfg = fast_config();
    cfg.max_epochs = 5;
    cfg.patience = 5;
    RngStream r1(9), r2(9), r3(10);
    auto a = train_method("mc_dropout", split, cfg, r1);
    auto b = train_method("mc_dropout", split, cfg, r2);
    auto c = train_method("mc_dropout", split, cfg, r3);
    CHECK(params_equal(a.members.front().params, b.members.front().params));  // bitwise
    CHECK_FALSE(params_equal(a.members.front().params, c.members.front().params));
}

TEST_CASE("ensemble members differ from each other") {
    auto split = toy_split(77);
    auto cfg = fast_config();
    cfg.max_epochs = 3;
    cfg.patience = 3;
    cfg.ensemble_size = 3;
    RngStream rng(4);
    auto trained = train_method("ensembles", split, cfg, rng);
    REQUIRE(trained.members.size() == 3);
    for (std::size_t m = 1; m < 3; ++m)
        CHECK_FALSE(params_equal(trained.members[0].params, trained.members[m].params));
}

TEST_CASE("train_method input validation") {
    auto split = toy_split(11);
    auto cfg = fast_config();
    RngStream rng(1);
    CHECK_THROWS_AS(train_method("bayes_by_backprop", split, cfg, rng), ConfigError);
    cfg.ensemble_size = 1;
    CHECK_THROWS_AS(train_method("ensembles", split, cfg, rng), ConfigError);

    Split empty;
    empty.train.classes = 3;
    CHECK_THROWS_AS(train_method("dropout", empty, fast_config(), rng), DataError);
}

TEST_CASE("method_predictions pass counts follow the inference mode") {
    auto split = toy_split(23);
    auto cfg = fast_config();
    cfg.max_epochs = 2;
    cfg.patience = 2;

    SUBCASE("standard baselines collapse to a single point forward") {
        for (const std::string method : {"dropout", "dropconnect"}) {
            CAPTURE(method);
            RngStream rng(8);
            auto trained = train_method(method, split, cfg, rng);
            RngStream prng(1);
            auto samples =
                method_predictions(trained, split.within_population.data, 50, prng);
            CHECK(samples.passes() == 1);
        }
    }
    SUBCASE("mc methods honor the requested pass count") {
        RngStream rng(8);
        auto trained = train_method("mc_dropconnect", split, cfg, rng);
        RngStream prng(1);
        auto samples = method_predictions(trained, split.within_population.data, 13, prng);
        CHECK(samples.passes() == 13);
    }
    SUBCASE("duq has no sampling path") {
        RngStream rng(8);
        auto trained = train_method("duq", split, cfg, rng);
        RngStream prng(1);
        CHECK_THROWS_AS(
            method_predictions(trained, split.within_population.data, 5, prng), ConfigError);
    }
}

TEST_CASE("early stopping restores the best-validation parameters") {
    auto split = toy_split(31);
    auto cfg = fast_config();
    cfg.max_epochs = 40;
    cfg.patience = 4;
    RngStream rng(2);
    auto net = build_shallow_convnet("dropout", 3, 32, 3, cfg.net);
    auto res = train_model(net, split.train, split.validation, cfg, rng);
    CHECK(res.best_epoch >= 1);
    CHECK(res.best_epoch <= cfg.max_epochs);

    // the restored parameters reproduce the best validation loss on re-eval
    std::vector<std::size_t> idx(split.validation.trials());
    std::iota(idx.begin(), idx.end(), 0);
    auto batch = train_detail::slice_batch(split.validation, idx, 0, idx.size());
    auto labels = train_detail::one_hot(split.validation.labels, 3);
    ParamSet<float> params = res.model.params;
    auto [out, cache] = forward(net, params, batch, ForwardMode::Point, nullptr);
    float loss = compute_loss(net, out, labels);
    CHECK(std::isfinite(loss));
    CHECK(loss < std::log(3.0f));  // better than the uniform predictor
}
