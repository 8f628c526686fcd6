#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "uqnet/errors.hpp"
#include "uqnet/tensor.hpp"

namespace uqnet {

// T forward passes x N trials x K class probabilities. All entropy measures
// run in 64-bit regardless of training precision.
struct PredictionSamples {
    Tensor<double> probs;  // [T, N, K]
    std::string method;

    std::size_t passes() const { return probs.dim(0); }
    std::size_t trials() const { return probs.dim(1); }
    std::size_t classes() const { return probs.dim(2); }

    void validate() const {
        if (probs.rank() != 3 || probs.dim(0) == 0)
            throw DataError("prediction samples must be (T >= 1, N, K)");
        for (double v : probs.data)
            if (v < 0.0 || v > 1.0 + 1e-9)
                throw DataError("prediction sample probability outside [0,1]");
    }
};

namespace measures_detail {

inline double xlogx(double p) {
    p = std::clamp(p, 1e-12, 1.0);
    return p * std::log(p);
}

}  // namespace measures_detail

// mean over the T axis, [N, K]
inline Tensor<double> mean_probs(const PredictionSamples& s) {
    const std::size_t T = s.passes(), N = s.trials(), K = s.classes();
    Tensor<double> m({N, K});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < K; ++k) m.at2(n, k) += s.probs.at3(t, n, k);
    for (auto& v : m.data) v /= double(T);
    return m;
}

// total uncertainty: H of the mean probabilities, in nats
inline std::vector<double> predictive_entropy(const PredictionSamples& s) {
    Tensor<double> m = mean_probs(s);
    const std::size_t N = s.trials(), K = s.classes();
    std::vector<double> h(N);
    for (std::size_t n = 0; n < N; ++n) {
        double acc = 0;
        for (std::size_t k = 0; k < K; ++k)
            if (m.at2(n, k) > 0) acc -= measures_detail::xlogx(m.at2(n, k));
        h[n] = acc;
    }
    return h;
}

// aleatoric part: mean over passes of the per-pass entropy
inline std::vector<double> expected_entropy(const PredictionSamples& s) {
    const std::size_t T = s.passes(), N = s.trials(), K = s.classes();
    std::vector<double> h(N);
    for (std::size_t n = 0; n < N; ++n) {
        double acc = 0;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t k = 0; k < K; ++k)
                if (s.probs.at3(t, n, k) > 0) acc -= measures_detail::xlogx(s.probs.at3(t, n, k));
        h[n] = acc / double(T);
    }
    return h;
}

// epistemic part: predictive minus expected entropy
inline std::vector<double> mutual_information(const PredictionSamples& s) {
    std::vector<double> pe = predictive_entropy(s);
    std::vector<double> ee = expected_entropy(s);
    for (std::size_t n = 0; n < pe.size(); ++n) pe[n] -= ee[n];
    return pe;
}

// argmax of the mean probabilities, lowest index on ties
inline std::vector<std::size_t> classify(const PredictionSamples& s) {
    Tensor<double> m = mean_probs(s);
    const std::size_t N = s.trials(), K = s.classes();
    std::vector<std::size_t> cls(N);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if (m.at2(n, k) > m.at2(n, best)) best = k;
        cls[n] = best;
    }
    return cls;
}

struct UncertaintyScores {
    std::vector<double> predictive_entropy;
    std::vector<double> expected_entropy;
    std::vector<double> mutual_information;
    std::vector<std::size_t> predicted_class;
    Tensor<double> mean_probs;
};

inline UncertaintyScores compute_scores(const PredictionSamples& s) {
    UncertaintyScores out;
    out.predictive_entropy = predictive_entropy(s);
    out.expected_entropy = expected_entropy(s);
    out.mutual_information = mutual_information(s);
    out.predicted_class = classify(s);
    out.mean_probs = mean_probs(s);
    return out;
}

}  // namespace uqnet
