#include "doctest.h"
#include "uqnet/network.hpp"
#include "uqnet/shallow_convnet.hpp"

using namespace uqnet;

namespace {

ConvNetOptions reduced_options() {
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

Tensor<double> random_batch(std::vector<std::size_t> shape, RngStream& rng) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.normal();
    return t;
}

Tensor<double> one_hot_labels(std::size_t n, std::size_t k, RngStream& rng) {
    Tensor<double> y({n, k});
    for (std::size_t i = 0; i < n; ++i) y.at2(i, rng.index(k)) = 1.0;
    return y;
}

double check_variant(const char* variant, std::size_t channels = 3, std::size_t timesteps = 60) {
    auto net = build_shallow_convnet(variant, channels, timesteps, 4, reduced_options());
    RngStream rng(31);
    auto params = init_params<double>(net, rng);
    auto batch = random_batch({4, channels, timesteps}, rng);
    auto labels = one_hot_labels(4, 4, rng);
    return check_gradients(net, params, batch, labels);
}

}  // namespace

TEST_CASE("linear-only toy net gradients") {
    NetworkSpec net;
    net.channels = 1;
    net.timesteps = 6;
    net.classes = 3;
    net.layers.push_back(LayerSpec::dense(4));
    net.layers.push_back(LayerSpec::dense(3));
    net.layers.push_back(LayerSpec::softmax());
    net.validate();
    RngStream rng(3);
    auto params = init_params<double>(net, rng);
    auto batch = random_batch({5, 1, 6}, rng);
    auto labels = one_hot_labels(5, 3, rng);
    CHECK(check_gradients(net, params, batch, labels) < 1e-7);
}

TEST_CASE("per-layer-kind gradient checks") {
    // one small net per layer kind that is not covered by the full variants
    RngStream rng(13);

    SUBCASE("conv2d + avgpool + square + log") {
        NetworkSpec net;
        net.channels = 3;
        net.timesteps = 20;
        net.classes = 2;
        net.layers.push_back(LayerSpec::conv2d(2, 1, 5));
        net.layers.push_back(LayerSpec::conv2d(2, 3, 1));
        net.layers.push_back(LayerSpec::square());
        net.layers.push_back(LayerSpec::avgpool(1, 4, 1, 2));
        net.layers.push_back(LayerSpec::log_act());
        net.layers.push_back(LayerSpec::dense(2));
        net.layers.push_back(LayerSpec::softmax());
        net.validate();
        auto params = init_params<double>(net, rng);
        auto batch = random_batch({3, 3, 20}, rng);
        auto labels = one_hot_labels(3, 2, rng);
        CHECK(check_gradients(net, params, batch, labels) < 1e-4);
    }
    SUBCASE("batchnorm (train statistics)") {
        NetworkSpec net;
        net.channels = 2;
        net.timesteps = 10;
        net.classes = 2;
        net.layers.push_back(LayerSpec::conv2d(3, 1, 3));
        net.layers.push_back(LayerSpec::batchnorm());
        net.layers.push_back(LayerSpec::dense(2));
        net.layers.push_back(LayerSpec::softmax());
        net.validate();
        auto params = init_params<double>(net, rng);
        auto batch = random_batch({4, 2, 10}, rng);
        auto labels = one_hot_labels(4, 2, rng);
        CHECK(check_gradients(net, params, batch, labels) < 1e-4);
    }
    SUBCASE("dropout and dropconnect under a pinned mask") {
        NetworkSpec net;
        net.channels = 1;
        net.timesteps = 8;
        net.classes = 3;
        net.layers.push_back(LayerSpec::dense(6, Activation::Relu));
        net.layers.push_back(LayerSpec::dropout(0.3));
        net.layers.push_back(LayerSpec::dense(6));
        net.layers.push_back(LayerSpec::dropconnect(0.2));
        net.layers.push_back(LayerSpec::dense(3));
        net.layers.push_back(LayerSpec::softmax());
        net.validate();
        auto params = init_params<double>(net, rng);
        auto batch = random_batch({4, 1, 8}, rng);
        auto labels = one_hot_labels(4, 3, rng);
        CHECK(check_gradients(net, params, batch, labels) < 1e-4);
    }
    SUBCASE("flipout dense under a pinned perturbation") {
        NetworkSpec net;
        net.channels = 1;
        net.timesteps = 6;
        net.classes = 2;
        net.layers.push_back(LayerSpec::dense(4, Activation::Relu));
        net.layers.push_back(LayerSpec::flipout_dense(4));
        net.layers.push_back(LayerSpec::flipout_dense(2));
        net.layers.push_back(LayerSpec::softmax());
        net.validate();
        auto params = init_params<double>(net, rng);
        auto batch = random_batch({3, 1, 6}, rng);
        auto labels = one_hot_labels(3, 2, rng);
        CHECK(check_gradients(net, params, batch, labels) < 1e-4);
    }
    SUBCASE("rbf head with binary cross-entropy") {
        NetworkSpec net;
        net.channels = 1;
        net.timesteps = 5;
        net.classes = 3;
        net.loss = LossKind::BinaryCe;
        net.layers.push_back(LayerSpec::dense(6, Activation::Relu));
        net.layers.push_back(LayerSpec::rbf(6, 0.4));
        net.validate();
        auto params = init_params<double>(net, rng);
        auto batch = random_batch({4, 1, 5}, rng);
        auto labels = one_hot_labels(4, 3, rng);
        CHECK(check_gradients(net, params, batch, labels) < 1e-4);
    }
}

TEST_CASE("full mc_dropout variant at reduced dims") {
    CHECK(check_variant("mc_dropout") < 1e-4);
}

TEST_CASE("full mc_dropconnect variant at reduced dims") {
    CHECK(check_variant("mc_dropconnect") < 1e-4);
}

TEST_CASE("full flipout variant at reduced dims") {
    CHECK(check_variant("flipout") < 1e-4);
}

TEST_CASE("full duq variant at reduced dims") {
    CHECK(check_variant("duq") < 1e-4);
}

TEST_CASE("zero batch and zero labels stay finite") {
    auto net = build_shallow_convnet("mc_dropout", 3, 60, 4, reduced_options());
    RngStream rng(9);
    auto params = init_params<double>(net, rng);
    Tensor<double> batch({2, 3, 60});
    Tensor<double> labels({2, 4});
    double err = check_gradients(net, params, batch, labels);
    CHECK(std::isfinite(err));
}
