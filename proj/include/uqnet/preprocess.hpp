#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "uqnet/data.hpp"
#include "uqnet/errors.hpp"
#include "uqnet/tensor.hpp"

namespace uqnet {

// Continuous multichannel recording in volts plus trial cue events.
struct RawRecording {
    Tensor<double> signal;  // [C_raw, T_total]
    std::vector<std::string> channel_names;
    double sampling_rate = 0;  // Hz
};

struct TrialEvent {
    std::size_t cue_sample = 0;  // sample index of the trial cue
    std::uint8_t label = 0;
    std::uint8_t subject_id = 0;
};

struct StandardizeConfig {
    double factor_new = 1e-3;
    double eps = 1e-4;
    std::size_t init_block = 1000;
};

// Exponential moving standardization of one channel, causal after the init
// block:
//   m_t = f*x_t + (1-f)*m_{t-1}
//   v_t = f*(x_t - m_t)^2 + (1-f)*v_{t-1}
//   y_t = (x_t - m_t) / max(sqrt(v_t), eps)
// The first init_block samples are standardized with that block's own mean
// and std instead. Recursion state starts at m = x_0, v = 1.
inline std::vector<double> exponential_moving_standardize(const std::vector<double>& x,
                                                          const StandardizeConfig& cfg = {}) {
    if (cfg.factor_new <= 0.0 || cfg.factor_new >= 1.0)
        throw ConfigError("factor_new must be in (0,1)");
    if (cfg.eps <= 0.0) throw ConfigError("eps must be > 0");
    std::vector<double> y(x.size());
    if (x.empty()) return y;
    const double f = cfg.factor_new;
    double m = x[0], v = 1.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
        m = f * x[t] + (1.0 - f) * m;
        const double d = x[t] - m;
        v = f * d * d + (1.0 - f) * v;
        y[t] = d / std::max(std::sqrt(v), cfg.eps);
    }
    const std::size_t block = std::min(cfg.init_block, x.size());
    if (block > 0) {
        double mean = 0;
        for (std::size_t t = 0; t < block; ++t) mean += x[t];
        mean /= double(block);
        double var = 0;
        for (std::size_t t = 0; t < block; ++t) var += (x[t] - mean) * (x[t] - mean);
        var /= double(block);
        const double denom = std::max(std::sqrt(var), cfg.eps);
        for (std::size_t t = 0; t < block; ++t) y[t] = (x[t] - mean) / denom;
    }
    return y;
}

struct PreprocessConfig {
    double pre_cue_seconds = 0.5;   // window starts this long before the cue
    double post_cue_seconds = 4.0;  // trial runs from the cue to trial end
    StandardizeConfig standardize;
};

// Preprocessing chain: drop EOG channels, volts -> microvolts,
// exponential moving standardization on the continuous signal, then epoching
// around each cue. 4.5 s at 250 Hz gives (22, 1125) per trial.
inline EpochSet preprocess(const RawRecording& raw, const std::vector<TrialEvent>& events,
                           std::uint16_t classes, const PreprocessConfig& cfg = {}) {
    if (raw.sampling_rate <= 0) throw DataError("sampling rate must be known and positive");
    if (raw.signal.rank() != 2 || raw.signal.dim(0) != raw.channel_names.size())
        throw DataError("recording shape does not match channel names");

    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < raw.channel_names.size(); ++c)
        if (raw.channel_names[c].rfind("EOG", 0) != 0) keep.push_back(c);

    const std::size_t T = raw.signal.dim(1);
    const std::size_t pre = std::size_t(std::lround(cfg.pre_cue_seconds * raw.sampling_rate));
    const std::size_t post = std::size_t(std::lround(cfg.post_cue_seconds * raw.sampling_rate));
    const std::size_t window = pre + post;

    // standardize the continuous signal per kept channel (after uV conversion)
    std::vector<std::vector<double>> standardized;
    standardized.reserve(keep.size());
    for (std::size_t c : keep) {
        std::vector<double> ch(T);
        for (std::size_t t = 0; t < T; ++t) ch[t] = raw.signal.at2(c, t) * 1e6;
        standardized.push_back(exponential_moving_standardize(ch, cfg.standardize));
    }

    EpochSet set;
    set.classes = classes;
    set.sampling_rate = float(raw.sampling_rate);
    for (std::size_t c : keep) set.channel_names.push_back(raw.channel_names[c]);
    set.data = Tensor<float>({events.size(), keep.size(), window});
    for (std::size_t e = 0; e < events.size(); ++e) {
        const auto& ev = events[e];
        if (ev.cue_sample < pre || ev.cue_sample + post > T)
            throw DataError("trial " + std::to_string(e) + " window [cue-" +
                            std::to_string(pre) + ", cue+" + std::to_string(post) +
                            ") exceeds recording bounds");
        const std::size_t start = ev.cue_sample - pre;
        for (std::size_t c = 0; c < keep.size(); ++c)
            for (std::size_t t = 0; t < window; ++t)
                set.data.at3(e, c, t) = float(standardized[c][start + t]);
        set.labels.push_back(ev.label);
        set.subject_ids.push_back(ev.subject_id);
    }
    set.validate();
    return set;
}

}  // namespace uqnet
