#pragma once

#include <cmath>
#include <cstddef>

#include "uqnet/errors.hpp"
#include "uqnet/params.hpp"
#include "uqnet/rng.hpp"
#include "uqnet/tensor.hpp"

namespace uqnet {

// Scale-mixture prior (1-pi) N(0, sigma1^2) + pi N(0, sigma2^2).
struct MixturePrior {
    double pi = 0.1;
    double sigma1 = 1.0;
    double sigma2 = 2.5;

    double log_density(double theta) const {
        const double l1 = log_normal(theta, sigma1);
        const double l2 = log_normal(theta, sigma2);
        const double a = std::log1p(-pi) + l1;
        const double b = (pi > 0 ? std::log(pi) + l2 : -1e300);
        const double m = std::max(a, b);
        return m + std::log(std::exp(a - m) + std::exp(b - m));
    }

    // d/dtheta log p(theta)
    double log_density_grad(double theta) const {
        const double w1 = (1.0 - pi) * std::exp(log_normal(theta, sigma1));
        const double w2 = pi * std::exp(log_normal(theta, sigma2));
        const double p = w1 + w2;
        return (w1 * (-theta / (sigma1 * sigma1)) + w2 * (-theta / (sigma2 * sigma2))) / p;
    }

    static double log_normal(double x, double sigma) {
        return -0.5 * std::log(2.0 * M_PI) - std::log(sigma) - 0.5 * (x / sigma) * (x / sigma);
    }
};

// Monte Carlo KL(q || p) for a mean-field Gaussian posterior q = N(mu,
// softplus(rho)^2) against the mixture prior, summed over all weights:
// mean_s[ log q(theta_s) - log p(theta_s) ] with theta_s ~ q.
template <typename T>
double kl_mixture_mc(const Tensor<T>& mu, const Tensor<T>& rho, const MixturePrior& prior,
                     RngStream& rng, std::size_t samples) {
    if (samples == 0) throw ConfigError("kl_mixture_mc: sample count must be >= 1");
    check_same_shape(mu, rho, "kl_mixture_mc");
    double total = 0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double m = mu.data[i];
        const double sigma = softplus(double(rho.data[i]));
        double acc = 0;
        for (std::size_t s = 0; s < samples; ++s) {
            const double eps = rng.normal();
            const double theta = m + sigma * eps;
            // log q(theta) depends only on eps
            const double log_q = MixturePrior::log_normal(eps, 1.0) - std::log(sigma);
            acc += log_q - prior.log_density(theta);
        }
        total += acc / double(samples);
    }
    return total;
}

// Pathwise gradient of the same MC estimate, accumulated into gmu/grho with
// the given weight. Used to add the (KL / N_train) term during flipout
// training.
template <typename T>
double kl_mixture_grad(const Tensor<T>& mu, const Tensor<T>& rho, const MixturePrior& prior,
                       RngStream& rng, std::size_t samples, double weight, Tensor<T>& gmu,
                       Tensor<T>& grho) {
    if (samples == 0) throw ConfigError("kl_mixture_grad: sample count must be >= 1");
    double total = 0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double m = mu.data[i];
        const double rho_i = rho.data[i];
        const double sigma = softplus(rho_i);
        const double dsigma_drho = 1.0 / (1.0 + std::exp(-rho_i));
        double val = 0, gm = 0, gs = 0;
        for (std::size_t s = 0; s < samples; ++s) {
            const double eps = rng.normal();
            const double theta = m + sigma * eps;
            const double log_q = MixturePrior::log_normal(eps, 1.0) - std::log(sigma);
            const double dlogp = prior.log_density_grad(theta);
            val += log_q - prior.log_density(theta);
            // theta = m + sigma*eps; log q(theta; m, sigma) reduces to a
            // function of eps and sigma only
            gm += -dlogp;
            gs += -1.0 / sigma - dlogp * eps;
        }
        total += val / double(samples);
        gmu.data[i] += T(weight * gm / double(samples));
        grho.data[i] += T(weight * gs / double(samples) * dsigma_drho);
    }
    return total;
}

}  // namespace uqnet
