#include <cmath>

#include "doctest.h"
#include "uqnet/inference.hpp"
#include "uqnet/measures.hpp"
#include "uqnet/shallow_convnet.hpp"

using namespace uqnet;

namespace {

// features -> rbf head directly (dense identity in front)
NetworkSpec rbf_net(std::size_t n_dim, std::size_t k, double sigma) {
    NetworkSpec net;
    net.channels = 1;
    net.timesteps = n_dim;
    net.classes = k;
    net.loss = LossKind::BinaryCe;
    net.layers.push_back(LayerSpec::dense(n_dim));
    net.layers.push_back(LayerSpec::rbf(n_dim, sigma));
    net.validate();
    return net;
}

// identity feature extractor, identity projections
ParamSet<double> identity_rbf_params(const NetworkSpec& net, std::size_t n_dim, std::size_t k) {
    RngStream rng(1);
    auto params = init_params<double>(net, rng);
    auto& w0 = params.get(0, "W");
    for (auto& v : w0.data) v = 0.0;
    for (std::size_t i = 0; i < n_dim; ++i) w0.at2(i, i) = 1.0;
    for (auto& v : params.get(0, "b").data) v = 0.0;
    auto& w1 = params.get(1, "W");
    for (auto& v : w1.data) v = 0.0;
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < n_dim; ++i) w1.at3(c, i, i) = 1.0;
    for (auto& v : params.get(1, "e").data) v = 0.0;  // all centroids at the origin
    return params;
}

}  // namespace

TEST_CASE("rbf kernel is exactly 1 at the centroid") {
    const std::size_t n_dim = 4, k = 3;
    auto net = rbf_net(n_dim, k, 0.4);
    auto params = identity_rbf_params(net, n_dim, k);
    auto& e = params.get(1, "e");
    for (std::size_t i = 0; i < n_dim; ++i) e.at2(1, i) = double(i) * 0.5;

    Tensor<double> batch({1, 1, n_dim});
    for (std::size_t i = 0; i < n_dim; ++i) batch.at3(0, 0, i) = double(i) * 0.5;
    auto [out, cache] = forward(net, params, batch, ForwardMode::Point, nullptr);
    CHECK(out.at2(0, 1) == 1.0);  // exact
}

TEST_CASE("rbf kernel hits exp(-1) at unit normalized squared distance") {
    const std::size_t n_dim = 4, k = 2;
    const double sigma = 0.4;
    auto net = rbf_net(n_dim, k, sigma);
    auto params = identity_rbf_params(net, n_dim, k);
    // centroid 0 at origin; choose per-dim distance so (1/n)*||d||^2 = 2*sigma^2
    const double d = std::sqrt(2.0 * sigma * sigma);
    Tensor<double> batch({1, 1, n_dim});
    for (std::size_t i = 0; i < n_dim; ++i) batch.at3(0, 0, i) = d;
    auto [out, cache] = forward(net, params, batch, ForwardMode::Point, nullptr);
    CHECK(out.at2(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(out.at2(0, 0) == doctest::Approx(0.367879441).epsilon(1e-8));
}

TEST_CASE("rbf kernel strictly decreases with distance") {
    const std::size_t n_dim = 5, k = 2;
    auto net = rbf_net(n_dim, k, 0.4);
    auto params = identity_rbf_params(net, n_dim, k);
    RngStream rng(3);
    Tensor<double> dir({n_dim});
    for (auto& v : dir.data) v = rng.normal();

    double prev = 1.1;
    for (double scale : {0.0, 0.1, 0.3, 0.7, 1.5, 3.0}) {
        Tensor<double> batch({1, 1, n_dim});
        for (std::size_t i = 0; i < n_dim; ++i) batch.at3(0, 0, i) = scale * dir.data[i];
        auto [out, cache] = forward(net, params, batch, ForwardMode::Point, nullptr);
        CHECK(out.at2(0, 0) < prev);
        prev = out.at2(0, 0);
    }
}

TEST_CASE("duq_predict: class, certainty and tie handling") {
    const std::size_t n_dim = 4, k = 3;
    auto net = rbf_net(n_dim, k, 0.4);
    auto params_d = identity_rbf_params(net, n_dim, k);
    auto& e = params_d.get(1, "e");
    // distinct centroids per class
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < n_dim; ++i) e.at2(c, i) = double(c);
    TrainedModel<float> model{net, params_d.cast<float>()};

    SUBCASE("feature exactly at centroid 2") {
        Tensor<float> batch({1, 1, n_dim}, std::vector<float>(n_dim, 2.0f));
        auto pred = duq_predict(model, batch);
        CHECK(pred.predicted_class[0] == 2);
        CHECK(pred.uncertainty[0] == doctest::Approx(-1.0).epsilon(1e-12));
    }
    SUBCASE("equidistant features tie to the lowest class index") {
        // centroids at 0,1,2 per dim; feature at 1 is equidistant from 0 and 2
        Tensor<float> batch({1, 1, n_dim}, std::vector<float>(n_dim, 1.0f));
        auto pred = duq_predict(model, batch);
        CHECK(pred.predicted_class[0] == 1);  // exact hit on centroid 1
        // move to 0.5: equidistant between centroids 0 and 1
        Tensor<float> batch2({1, 1, n_dim}, std::vector<float>(n_dim, 0.5f));
        auto pred2 = duq_predict(model, batch2);
        CHECK(pred2.predicted_class[0] == 0);
    }
    SUBCASE("uncertainty ordering matches a direct distance oracle") {
        RngStream rng(11);
        const std::size_t N = 20;
        Tensor<float> batch({N, 1, n_dim});
        for (auto& v : batch.data) v = float(rng.normal() * 2.0);
        auto pred = duq_predict(model, batch);
        for (std::size_t n = 0; n < N; ++n) {
            // brute-force kernel recomputation
            double best = -1e300;
            for (std::size_t c = 0; c < k; ++c) {
                double d2 = 0;
                for (std::size_t i = 0; i < n_dim; ++i) {
                    double diff = double(batch.at3(n, 0, i)) - double(c);
                    d2 += diff * diff;
                }
                best = std::max(best, std::exp(-(d2 / double(n_dim)) / (2 * 0.4 * 0.4)));
            }
            CHECK(pred.uncertainty[n] == doctest::Approx(-best).epsilon(1e-5));
        }
    }
    SUBCASE("non-rbf model is rejected") {
        NetworkSpec soft;
        soft.channels = 1;
        soft.timesteps = 4;
        soft.classes = 3;
        soft.layers.push_back(LayerSpec::dense(3));
        soft.layers.push_back(LayerSpec::softmax());
        soft.validate();
        RngStream rng(1);
        TrainedModel<float> m2{soft, init_params<float>(soft, rng)};
        Tensor<float> batch({1, 1, 4});
        CHECK_THROWS_AS(duq_predict(m2, batch), ConfigError);
    }
}

TEST_CASE("mc sampling of a deterministic variant gives identical slices") {
    NetworkSpec net;
    net.channels = 1;
    net.timesteps = 5;
    net.classes = 3;
    net.layers.push_back(LayerSpec::dropout(0.2));
    net.layers.push_back(LayerSpec::dense(3));
    net.layers.push_back(LayerSpec::softmax());
    net.validate();
    RngStream rng(9);
    StochasticModel<float> model;
    model.model = {net, init_params<float>(net, rng)};
    model.variant = "dropout";
    model.stochastic_inference = false;  // standard baseline

    Tensor<float> batch({4, 1, 5});
    for (auto& v : batch.data) v = float(rng.normal());
    RngStream sample_rng(2);
    auto samples = mc_sample_predictions(model, batch, 50, sample_rng);
    CHECK(samples.passes() == 50);
    for (std::size_t t = 1; t < 50; ++t)
        for (std::size_t i = 0; i < 12; ++i)
            CHECK(samples.probs.data[t * 12 + i] == samples.probs.data[i]);  // bitwise
    // downstream: MI exactly collapses
    auto mi = mutual_information(samples);
    for (double v : mi) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("mc sampling rejects T = 0 and is seed-reproducible") {
    NetworkSpec net;
    net.channels = 1;
    net.timesteps = 5;
    net.classes = 2;
    net.layers.push_back(LayerSpec::dropout(0.3));
    net.layers.push_back(LayerSpec::dense(2));
    net.layers.push_back(LayerSpec::softmax());
    net.validate();
    RngStream rng(4);
    StochasticModel<float> model;
    model.model = {net, init_params<float>(net, rng)};
    model.variant = "mc_dropout";
    model.stochastic_inference = true;

    Tensor<float> batch({3, 1, 5});
    for (auto& v : batch.data) v = float(rng.normal());
    RngStream r0(42);
    CHECK_THROWS_AS(mc_sample_predictions(model, batch, 0, r0), ConfigError);
    RngStream r1(42), r2(42);
    auto s1 = mc_sample_predictions(model, batch, 10, r1);
    auto s2 = mc_sample_predictions(model, batch, 10, r2);
    CHECK(s1.probs.data == s2.probs.data);  // bitwise
}

TEST_CASE("single linear layer + dropout: MC mean approaches the point forward") {
    NetworkSpec net;
    net.channels = 1;
    net.timesteps = 4;
    net.classes = 2;
    net.layers.push_back(LayerSpec::dropout(0.4));
    net.layers.push_back(LayerSpec::dense(2));
    net.layers.push_back(LayerSpec::softmax());
    net.validate();
    RngStream rng(12);
    auto params = init_params<double>(net, rng);
    Tensor<double> batch({1, 1, 4});
    for (auto& v : batch.data) v = rng.normal();

    // compare at the dense layer output (linear in the dropout mask)
    auto [pt, pc] = forward(net, params, batch, ForwardMode::Point, nullptr);
    auto point_z = pc.layers[1].output;

    const int calls = 10000;
    Tensor<double> mean = zeros_like(point_z);
    Tensor<double> m2 = zeros_like(point_z);
    RngStream noise(77);
    for (int c = 0; c < calls; ++c) {
        auto [out, cache] = forward(net, params, batch, ForwardMode::Stochastic, &noise);
        const auto& z = cache.layers[1].output;
        for (std::size_t i = 0; i < z.size(); ++i) {
            double d = z.data[i] - mean.data[i];
            mean.data[i] += d / double(c + 1);
            m2.data[i] += d * (z.data[i] - mean.data[i]);
        }
    }
    for (std::size_t i = 0; i < point_z.size(); ++i) {
        double se = std::sqrt(m2.data[i] / double(calls - 1)) / std::sqrt(double(calls));
        CHECK(std::abs(mean.data[i] - point_z.data[i]) <= 3.0 * se);
    }
}

TEST_CASE("ensemble predictions") {
    NetworkSpec net;
    net.channels = 1;
    net.timesteps = 5;
    net.classes = 3;
    net.layers.push_back(LayerSpec::dense(3));
    net.layers.push_back(LayerSpec::softmax());
    net.validate();
    RngStream rng(3);

    SUBCASE("identical members give zero mutual information") {
        auto params = init_params<float>(net, rng);
        Ensemble<float> ens;
        for (int m = 0; m < 10; ++m) ens.members.push_back({net, params});
        Tensor<float> batch({4, 1, 5});
        for (auto& v : batch.data) v = float(rng.normal());
        auto samples = ensemble_predictions(ens, batch);
        CHECK(samples.passes() == 10);
        auto mi = mutual_information(samples);
        for (double v : mi) CHECK(std::abs(v) < 1e-12);
    }
    SUBCASE("mean over members equals the manual member average") {
        Ensemble<float> ens;
        for (int m = 0; m < 4; ++m) ens.members.push_back({net, init_params<float>(net, rng)});
        Tensor<float> batch({3, 1, 5});
        for (auto& v : batch.data) v = float(rng.normal());
        auto samples = ensemble_predictions(ens, batch);
        auto mean = mean_probs(samples);
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t k = 0; k < 3; ++k) {
                double manual = 0;
                for (std::size_t t = 0; t < 4; ++t) manual += samples.probs.at3(t, n, k);
                manual /= 4.0;
                CHECK(std::abs(mean.at2(n, k) - manual) < 1e-12);
            }
    }
    SUBCASE("member order does not change the mean") {
        Ensemble<float> ens;
        for (int m = 0; m < 4; ++m) ens.members.push_back({net, init_params<float>(net, rng)});
        Tensor<float> batch({2, 1, 5});
        for (auto& v : batch.data) v = float(rng.normal());
        auto m1 = mean_probs(ensemble_predictions(ens, batch));
        std::reverse(ens.members.begin(), ens.members.end());
        auto m2 = mean_probs(ensemble_predictions(ens, batch));
        for (std::size_t i = 0; i < m1.size(); ++i)
            CHECK(std::abs(m1.data[i] - m2.data[i]) < 1e-12);
    }
    SUBCASE("empty ensemble is rejected") {
        Ensemble<float> ens;
        Tensor<float> batch({1, 1, 5});
        CHECK_THROWS_AS(ensemble_predictions(ens, batch), ConfigError);
    }
}
