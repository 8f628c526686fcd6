#include <cmath>

#include "doctest.h"
#include "uqnet/kl_mixture.hpp"
#include "uqnet/network.hpp"

using namespace uqnet;

namespace {

// single flipout layer net: [N, in] -> flipout(out) -> softmax
NetworkSpec flipout_net(std::size_t in, std::size_t out) {
    NetworkSpec net;
    net.channels = 1;
    net.timesteps = in;
    net.classes = out;
    net.layers.push_back(LayerSpec::flipout_dense(out));
    net.layers.push_back(LayerSpec::softmax());
    net.validate();
    return net;
}

// raw flipout layer output (before softmax) for one stochastic call
Tensor<double> flipout_layer_output(const NetworkSpec& net, ParamSet<double>& params,
                                    const Tensor<double>& batch, ForwardMode mode,
                                    RngStream* rng) {
    auto [out, cache] = forward(net, params, batch, mode, rng);
    return cache.layers[0].output;
}

}  // namespace

TEST_CASE("flipout with zero-variance posterior is deterministic x*mu + b") {
    auto net = flipout_net(3, 2);
    RngStream rng(1);
    auto params = init_params<double>(net, rng);
    for (auto& v : params.get(0, "rho_w").data) v = -40.0;  // sigma ~ 0
    for (auto& v : params.get(0, "rho_b").data) v = -40.0;
    Tensor<double> batch({2, 1, 3}, {0.5, -1.0, 2.0, 1.0, 0.0, -0.5});

    const auto& mu_w = params.get(0, "mu_w");
    const auto& mu_b = params.get(0, "mu_b");
    Tensor<double> first;
    for (int call = 0; call < 5; ++call) {
        RngStream r(100 + call);
        auto out = flipout_layer_output(net, params, batch, ForwardMode::Stochastic, &r);
        if (call == 0)
            first = out;
        else
            for (std::size_t i = 0; i < out.size(); ++i)
                CHECK(out.data[i] == doctest::Approx(first.data[i]).epsilon(1e-15));
    }
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 2; ++o) {
            double ref = mu_b[o];
            for (std::size_t i = 0; i < 3; ++i) ref += batch.at3(n, 0, i) * mu_w.at2(i, o);
            CHECK(first.at2(n, o) == doctest::Approx(ref).epsilon(1e-12));
        }
}

TEST_CASE("flipout MC mean is unbiased: 10000 calls vs mu forward") {
    auto net = flipout_net(4, 3);
    RngStream rng(7);
    auto params = init_params<double>(net, rng);
    const double sigma_target = 0.3;
    for (auto& v : params.get(0, "rho_w").data) v = softplus_inv(sigma_target);
    for (auto& v : params.get(0, "rho_b").data) v = softplus_inv(sigma_target);
    Tensor<double> batch({2, 1, 4});
    for (auto& v : batch.data) v = rng.normal();

    auto point = flipout_layer_output(net, params, batch, ForwardMode::Point, nullptr);

    const int calls = 10000;
    Tensor<double> mean = zeros_like(point);
    Tensor<double> m2 = zeros_like(point);
    RngStream noise(55);
    for (int c = 0; c < calls; ++c) {
        auto out = flipout_layer_output(net, params, batch, ForwardMode::Stochastic, &noise);
        for (std::size_t i = 0; i < out.size(); ++i) {
            double d = out.data[i] - mean.data[i];
            mean.data[i] += d / double(c + 1);
            m2.data[i] += d * (out.data[i] - mean.data[i]);
        }
    }
    for (std::size_t i = 0; i < point.size(); ++i) {
        double se = std::sqrt(m2.data[i] / double(calls - 1)) / std::sqrt(double(calls));
        CHECK(std::abs(mean.data[i] - point.data[i]) <= 3.0 * se);
    }
}

TEST_CASE("flipout decorrelates identical rows via sign vectors") {
    auto net = flipout_net(4, 3);
    RngStream rng(9);
    auto params = init_params<double>(net, rng);
    for (auto& v : params.get(0, "rho_w").data) v = softplus_inv(0.5);
    Tensor<double> batch({2, 1, 4});
    for (std::size_t i = 0; i < 4; ++i) {
        batch.at3(0, 0, i) = double(i) + 1.0;
        batch.at3(1, 0, i) = double(i) + 1.0;  // identical rows
    }
    RngStream noise(3);
    int differing = 0;
    const int calls = 200;
    for (int c = 0; c < calls; ++c) {
        auto out = flipout_layer_output(net, params, batch, ForwardMode::Stochastic, &noise);
        for (std::size_t o = 0; o < 3; ++o)
            if (out.at2(0, o) != out.at2(1, o)) {
                ++differing;
                break;
            }
    }
    CHECK(differing > calls * 9 / 10);
}

TEST_CASE("kl is exactly zero when posterior equals a collapsed prior") {
    MixturePrior prior;
    prior.pi = 0.0;  // pure N(0,1)
    Tensor<double> mu({5});
    Tensor<double> rho({5}, softplus_inv(1.0));
    RngStream rng(2);
    double kl = kl_mixture_mc(mu, rho, prior, rng, 500);
    CHECK(std::abs(kl) < 1e-10);
}

TEST_CASE("kl against 1-D quadrature of the mixture integral") {
    MixturePrior prior;  // pi = 0.1, sigmas 1.0 / 2.5
    Tensor<double> mu({1});
    Tensor<double> rho({1}, softplus_inv(1.0));

    // Simpson quadrature of int q (log q - log p)
    auto integrand = [&](double theta) {
        double log_q = MixturePrior::log_normal(theta, 1.0);
        return std::exp(log_q) * (log_q - prior.log_density(theta));
    };
    const double a = -12.0, b = 12.0;
    const int steps = 20000;  // even
    const double h = (b - a) / steps;
    double quad = integrand(a) + integrand(b);
    for (int i = 1; i < steps; ++i) quad += integrand(a + i * h) * (i % 2 ? 4.0 : 2.0);
    quad *= h / 3.0;

    const std::size_t S = 10000;
    RngStream rng(31);
    double mc = kl_mixture_mc(mu, rho, prior, rng, S);

    // standard error from an independent sampling pass
    RngStream rng2(77);
    double acc = 0, acc2 = 0;
    for (std::size_t s = 0; s < S; ++s) {
        double theta = rng2.normal();
        double v = MixturePrior::log_normal(theta, 1.0) - prior.log_density(theta);
        acc += v;
        acc2 += v * v;
    }
    double var = (acc2 - acc * acc / double(S)) / double(S - 1);
    double se = std::sqrt(var / double(S));
    CHECK(std::abs(mc - quad) <= 3.0 * se);
}

TEST_CASE("kl estimate is nonnegative within MC error for random posteriors") {
    MixturePrior prior;
    RngStream rng(13);
    for (int rep = 0; rep < 30; ++rep) {
        Tensor<double> mu({3});
        Tensor<double> rho({3});
        for (auto& v : mu.data) v = rng.normal();
        for (auto& v : rho.data) v = softplus_inv(0.3 + rng.uniform() * 1.5);
        double kl = kl_mixture_mc(mu, rho, prior, rng, 4000);
        // per-weight KL >= 0; allow a small MC error margin
        CHECK(kl > -0.05);
    }
}

TEST_CASE("kl rejects a zero sample count") {
    MixturePrior prior;
    Tensor<double> mu({1});
    Tensor<double> rho({1});
    RngStream rng(1);
    CHECK_THROWS_AS(kl_mixture_mc(mu, rho, prior, rng, 0), ConfigError);
}

TEST_CASE("kl pathwise gradient matches finite differences") {
    MixturePrior prior;
    Tensor<double> mu({2}, {0.3, -0.7});
    Tensor<double> rho({2}, {softplus_inv(0.5), softplus_inv(1.2)});
    const std::size_t S = 40;
    const uint64_t seed = 19;

    Tensor<double> gmu({2}), grho({2});
    {
        RngStream rng(seed);
        kl_mixture_grad(mu, rho, prior, rng, S, 1.0, gmu, grho);
    }
    auto value = [&](const Tensor<double>& m, const Tensor<double>& r) {
        // same S and seed: frozen noise realization
        RngStream rng(seed);
        double total = 0;
        for (std::size_t i = 0; i < m.size(); ++i) {
            double sigma = softplus(r.data[i]);
            double acc = 0;
            for (std::size_t s = 0; s < S; ++s) {
                double eps = rng.normal();
                double theta = m.data[i] + sigma * eps;
                acc += MixturePrior::log_normal(eps, 1.0) - std::log(sigma) -
                       prior.log_density(theta);
            }
            total += acc / double(S);
        }
        return total;
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < 2; ++i) {
        Tensor<double> mp = mu, mm = mu;
        mp.data[i] += h;
        mm.data[i] -= h;
        double num = (value(mp, rho) - value(mm, rho)) / (2 * h);
        CHECK(gmu.data[i] == doctest::Approx(num).epsilon(1e-5));

        Tensor<double> rp = rho, rm = rho;
        rp.data[i] += h;
        rm.data[i] -= h;
        num = (value(mu, rp) - value(mu, rm)) / (2 * h);
        CHECK(grho.data[i] == doctest::Approx(num).epsilon(1e-5));
    }
}
