#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "uqnet/data.hpp"
#include "uqnet/errors.hpp"
#include "uqnet/rng.hpp"

namespace uqnet {

// Leave-one-subject-out split with a within-population holdout: the held-out
// subject forms the cross-population set; every remaining subject donates a
// class-stratified fraction to the within-population set, and the rest is
// split into train/validation.
struct Split {
    EpochSet train;
    EpochSet validation;
    EpochSet within_population;
    EpochSet cross_population;
    std::uint8_t held_out_subject = 0;
};

inline Split loso_partition(const EpochSet& data, std::uint8_t held_out_subject,
                            double within_frac, double val_frac, RngStream& rng) {
    data.validate();
    if (within_frac <= 0 || within_frac >= 1 || val_frac <= 0 || val_frac >= 1)
        throw ConfigError("split fractions must be in (0,1)");
    auto subjects = data.subjects();
    if (subjects.size() < 2) throw DataError("LOSO needs at least 2 subjects");
    if (std::find(subjects.begin(), subjects.end(), held_out_subject) == subjects.end())
        throw DataError("held-out subject " + std::to_string(held_out_subject) +
                        " absent from dataset");

    std::vector<std::size_t> cross_idx, within_idx, rest_idx;
    for (std::size_t i = 0; i < data.trials(); ++i)
        if (data.subject_ids[i] == held_out_subject) cross_idx.push_back(i);

    // per remaining subject, per class: shuffle and peel off the within slice
    for (auto subj : subjects) {
        if (subj == held_out_subject) continue;
        for (std::uint16_t cls = 0; cls < data.classes; ++cls) {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < data.trials(); ++i)
                if (data.subject_ids[i] == subj && data.labels[i] == cls) idx.push_back(i);
            if (idx.empty())
                throw DataError("subject " + std::to_string(subj) + " has no trials of class " +
                                std::to_string(cls));
            std::shuffle(idx.begin(), idx.end(), rng.engine());
            std::size_t take = std::size_t(double(idx.size()) * within_frac);
            if (take == 0 && idx.size() > 1) take = 1;
            within_idx.insert(within_idx.end(), idx.begin(), idx.begin() + std::ptrdiff_t(take));
            rest_idx.insert(rest_idx.end(), idx.begin() + std::ptrdiff_t(take), idx.end());
        }
    }

    // remaining pool, class-stratified train/validation split
    std::vector<std::size_t> train_idx, val_idx;
    for (std::uint16_t cls = 0; cls < data.classes; ++cls) {
        std::vector<std::size_t> idx;
        for (std::size_t i : rest_idx)
            if (data.labels[i] == cls) idx.push_back(i);
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        std::size_t take = std::size_t(double(idx.size()) * val_frac);
        if (take == 0 && idx.size() > 1) take = 1;
        val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + std::ptrdiff_t(take));
        train_idx.insert(train_idx.end(), idx.begin() + std::ptrdiff_t(take), idx.end());
    }
    if (train_idx.empty() || val_idx.empty())
        throw DataError("split produced an empty train or validation set");

    // stable trial order inside each set
    std::sort(within_idx.begin(), within_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());

    Split split;
    split.held_out_subject = held_out_subject;
    split.train = data.select(train_idx);
    split.validation = data.select(val_idx);
    split.within_population = data.select(within_idx);
    split.cross_population = data.select(cross_idx);
    return split;
}

inline double accuracy(const std::vector<std::size_t>& predicted,
                       const std::vector<std::uint8_t>& truth) {
    if (predicted.empty() || predicted.size() != truth.size())
        throw DataError("accuracy needs equal nonempty prediction/label arrays");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == truth[i]) ++hits;
    return double(hits) / double(predicted.size());
}

// Tie-corrected rank AUROC: P(score_pos > score_neg) + 0.5 P(equal).
inline double auroc(const std::vector<double>& scores, const std::vector<bool>& positives) {
    if (scores.size() != positives.size() || scores.empty())
        throw DataError("auroc needs equal nonempty score/label arrays");
    std::size_t n_pos = 0;
    for (bool p : positives) n_pos += p ? 1 : 0;
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("auroc undefined with a single class present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // average ranks over tie groups, 1-based
    double rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * double(i + 1 + j);  // mean of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (positives[order[k]]) rank_sum_pos += avg_rank;
        i = j;
    }
    return (rank_sum_pos - 0.5 * double(n_pos) * double(n_pos + 1)) /
           (double(n_pos) * double(n_neg));
}

// AUROC of an uncertainty score at flagging misclassified trials.
inline double misclassification_auroc(const std::vector<double>& scores,
                                      const std::vector<std::size_t>& predicted,
                                      const std::vector<std::uint8_t>& truth) {
    if (predicted.size() != truth.size() || predicted.size() != scores.size())
        throw DataError("misclassification_auroc: length mismatch");
    std::vector<bool> wrong(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) wrong[i] = predicted[i] != truth[i];
    return auroc(scores, wrong);
}

// For each coverage q, retain the ceil(qN) trials with lowest uncertainty
// (ties broken by trial index) and report accuracy on the retained set.
inline std::vector<std::pair<double, double>> rejection_curve(
    const std::vector<double>& scores, const std::vector<bool>& correct,
    const std::vector<double>& coverage_grid) {
    if (coverage_grid.empty()) throw ConfigError("rejection curve needs a nonempty grid");
    if (scores.size() != correct.size() || scores.empty())
        throw DataError("rejection curve: length mismatch or empty input");
    for (double q : coverage_grid)
        if (q <= 0.0 || q > 1.0) throw ConfigError("coverage values must lie in (0,1]");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::vector<std::pair<double, double>> out;
    for (double q : coverage_grid) {
        const std::size_t keep = std::size_t(std::ceil(q * double(scores.size())));
        std::size_t hits = 0;
        for (std::size_t k = 0; k < keep; ++k) hits += correct[order[k]] ? 1 : 0;
        out.emplace_back(q, double(hits) / double(keep));
    }
    return out;
}

struct MeanStd {
    double mean = 0;
    double std = 0;
    bool single_value = false;  // std reported as 0 from one observation
};

inline MeanStd aggregate_mean_std(const std::vector<double>& values) {
    if (values.empty()) throw DataError("cannot aggregate zero values");
    MeanStd out;
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    if (values.size() == 1) {
        out.single_value = true;
        return out;
    }
    double acc = 0;
    for (double v : values) acc += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(acc / double(values.size() - 1));
    return out;
}

}  // namespace uqnet
