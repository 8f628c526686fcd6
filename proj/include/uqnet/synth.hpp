#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "uqnet/data.hpp"
#include "uqnet/errors.hpp"
#include "uqnet/rng.hpp"

namespace uqnet {

// Synthetic cross-subject population. Class-specific band-limited sources
// are mixed into channels by a per-subject mixing matrix; the perturbation
// scale controls the epistemic (subject) shift, the noise scale the
// aleatoric floor.
struct PopulationConfig {
    std::size_t subjects = 5;
    std::size_t trials_per_class = 24;  // per subject
    std::size_t channels = 6;
    std::size_t timesteps = 64;
    std::size_t classes = 4;
    double sampling_rate = 128.0;
    double mixing_perturbation = 0.3;  // epistemic shift knob
    double observation_noise = 0.5;    // aleatoric knob
    std::uint64_t seed = 0;

    void validate() const {
        if (subjects < 1 || trials_per_class < 1 || channels < 1 || timesteps < 1 ||
            classes < 1)
            throw ConfigError("population config counts must be >= 1");
        if (mixing_perturbation < 0 || observation_noise < 0)
            throw ConfigError("population config scales must be >= 0");
        if (sampling_rate <= 0) throw ConfigError("sampling rate must be > 0");
        if (subjects > 255 || classes > 255)
            throw ConfigError("subject and class ids must fit in u8");
    }
};

namespace synth_detail {

inline constexpr std::size_t kSources = 6;

// source oscillation frequencies, spread across the 8-30 Hz band
inline double source_freq(std::size_t j) {
    return 8.0 + (30.0 - 8.0) * double(j) / double(kSources - 1);
}

// class-dependent per-source amplitude, peaked at a class-specific source
inline double class_amplitude(std::size_t cls, std::size_t classes, std::size_t j) {
    const double peak =
        classes > 1 ? double(cls) * double(kSources - 1) / double(classes - 1) : 0.0;
    const double d = (double(j) - peak) / 0.8;
    return 0.25 + std::exp(-0.5 * d * d);
}

}  // namespace synth_detail

// Mixing matrix for one subject: shared base plus a subject-specific
// Gaussian perturbation of the configured scale.
inline Tensor<double> subject_mixing(const PopulationConfig& cfg, std::size_t subject) {
    using namespace synth_detail;
    Tensor<double> m({cfg.channels, kSources});
    RngStream base = RngStream::child(cfg.seed, 0);
    const double norm = 1.0 / std::sqrt(double(kSources));
    for (auto& v : m.data) v = base.normal() * norm;
    if (cfg.mixing_perturbation > 0) {
        RngStream pert = RngStream::child(cfg.seed, 1000 + subject);
        for (auto& v : m.data) v += cfg.mixing_perturbation * pert.normal() * norm;
    }
    return m;
}

inline EpochSet synthesize_population(const PopulationConfig& cfg) {
    using namespace synth_detail;
    cfg.validate();
    const std::size_t trials_per_subject = cfg.trials_per_class * cfg.classes;
    const std::size_t n = cfg.subjects * trials_per_subject;

    EpochSet set;
    set.classes = std::uint16_t(cfg.classes);
    set.sampling_rate = float(cfg.sampling_rate);
    for (std::size_t c = 0; c < cfg.channels; ++c)
        set.channel_names.push_back("SYN" + std::to_string(c));
    set.data = Tensor<float>({n, cfg.channels, cfg.timesteps});

    std::size_t trial = 0;
    std::vector<double> src(kSources * cfg.timesteps);
    for (std::size_t subj = 0; subj < cfg.subjects; ++subj) {
        Tensor<double> mixing = subject_mixing(cfg, subj);
        for (std::size_t cls = 0; cls < cfg.classes; ++cls)
            for (std::size_t rep = 0; rep < cfg.trials_per_class; ++rep, ++trial) {
                RngStream rng = RngStream::child(cfg.seed, 1000000 + trial);
                for (std::size_t j = 0; j < kSources; ++j) {
                    const double phase = rng.uniform() * 2.0 * M_PI;
                    const double amp = class_amplitude(cls, cfg.classes, j);
                    const double w = 2.0 * M_PI * source_freq(j) / cfg.sampling_rate;
                    for (std::size_t t = 0; t < cfg.timesteps; ++t)
                        src[j * cfg.timesteps + t] = amp * std::sin(w * double(t) + phase);
                }
                for (std::size_t c = 0; c < cfg.channels; ++c)
                    for (std::size_t t = 0; t < cfg.timesteps; ++t) {
                        double acc = 0;
                        for (std::size_t j = 0; j < kSources; ++j)
                            acc += mixing.at2(c, j) * src[j * cfg.timesteps + t];
                        if (cfg.observation_noise > 0)
                            acc += cfg.observation_noise * rng.normal();
                        set.data.at3(trial, c, t) = float(acc);
                    }
                set.labels.push_back(std::uint8_t(cls));
                set.subject_ids.push_back(std::uint8_t(subj));
            }
    }
    set.validate();
    return set;
}

}  // namespace uqnet
