#pragma once

#include <atomic>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "uqnet/evaluation.hpp"
#include "uqnet/training.hpp"

namespace uqnet {

// Canonical measure names per method family. Standard baselines run a single
// point forward, so their mutual-information cell does not exist; duq exposes
// one scalar certainty score instead of the entropy triple.
inline std::vector<std::string> measures_for_method(const std::string& method) {
    if (method == "duq") return {"uncertainty"};
    if (method_is_mc(method))
        return {"predictive_entropy", "expected_entropy", "mutual_information"};
    return {"predictive_entropy", "expected_entropy"};
}

// One AUROC cell. Undefined metrics (all-correct predictions) and per-cell
// failures leave value empty with a note, and the run continues.
struct AurocCell {
    std::string measure;
    std::string population;  // "within" or "cross"
    std::optional<double> value;
    std::string note;
};

struct MethodCell {
    std::uint64_t seed = 0;
    std::uint8_t subject = 0;
    std::string method;
    std::optional<double> within_accuracy;
    std::optional<double> cross_accuracy;
    std::vector<AurocCell> aurocs;
    std::vector<std::size_t> stopped_epochs;
    std::string error;  // nonempty if the whole cell failed
};

// Pooled accuracy-rejection curve input per (method, population).
struct CurveAccumulator {
    std::vector<double> scores;
    std::vector<bool> correct;
};

struct ExperimentConfig {
    std::vector<std::string> methods;
    std::vector<std::uint64_t> seeds = {0};
    double within_frac = 0.10;
    double val_frac = 0.10;
    TrainConfig train;
};

struct ExperimentReport {
    ExperimentConfig config;
    std::vector<MethodCell> cells;  // ordered (seed, subject, method)
    std::map<std::pair<std::string, std::string>, CurveAccumulator> curves;

    // aggregate one accuracy column across all defined cells of a method
    MeanStd aggregate_accuracy(const std::string& method, bool within) const {
        std::vector<double> vals;
        for (const auto& c : cells) {
            if (c.method != method) continue;
            const auto& v = within ? c.within_accuracy : c.cross_accuracy;
            if (v) vals.push_back(*v);
        }
        if (vals.empty()) throw DataError("no defined accuracy cells for " + method);
        return aggregate_mean_std(vals);
    }

    std::optional<MeanStd> aggregate_auroc(const std::string& method,
                                           const std::string& measure,
                                           const std::string& population) const {
        std::vector<double> vals;
        for (const auto& c : cells) {
            if (c.method != method) continue;
            for (const auto& a : c.aurocs)
                if (a.measure == measure && a.population == population && a.value)
                    vals.push_back(*a.value);
        }
        if (vals.empty()) return std::nullopt;
        return aggregate_mean_std(vals);
    }
};

namespace experiment_detail {

// fixed derivation of per-cell rng streams from the master seed so the cell
// order (or any future parallelism) cannot change results
inline std::uint64_t cell_salt(std::size_t subj_idx, std::size_t method_idx,
                               std::uint64_t purpose) {
    return purpose * 1000000 + subj_idx * 1000 + method_idx;
}

struct EvalSet {
    const EpochSet* set;
    std::string population;
};

inline void evaluate_standard(const TrainedMethod& trained, const EvalSet& ev,
                              std::size_t passes, RngStream& rng, MethodCell& cell,
                              CurveAccumulator& curve) {
    auto samples = method_predictions(trained, ev.set->data, passes, rng);
    auto predicted = classify(samples);
    double acc = accuracy(predicted, ev.set->labels);
    (ev.population == "within" ? cell.within_accuracy : cell.cross_accuracy) = acc;

    auto add = [&](const std::string& measure, const std::vector<double>& scores) {
        AurocCell a;
        a.measure = measure;
        a.population = ev.population;
        try {
            a.value = misclassification_auroc(scores, predicted, ev.set->labels);
        } catch (const UndefinedMetricError& e) {
            a.note = e.what();
        }
        cell.aurocs.push_back(std::move(a));
    };
    auto pe = predictive_entropy(samples);
    add("predictive_entropy", pe);
    add("expected_entropy", expected_entropy(samples));
    if (method_is_mc(trained.method)) add("mutual_information", mutual_information(samples));

    for (std::size_t i = 0; i < pe.size(); ++i) {
        curve.scores.push_back(pe[i]);
        curve.correct.push_back(predicted[i] == ev.set->labels[i]);
    }
}

inline void evaluate_duq(const TrainedMethod& trained, const EvalSet& ev, MethodCell& cell,
                         CurveAccumulator& curve) {
    auto pred = duq_predict(trained.members.front(), ev.set->data);
    double acc = accuracy(pred.predicted_class, ev.set->labels);
    (ev.population == "within" ? cell.within_accuracy : cell.cross_accuracy) = acc;

    AurocCell a;
    a.measure = "uncertainty";
    a.population = ev.population;
    try {
        a.value = misclassification_auroc(pred.uncertainty, pred.predicted_class,
                                          ev.set->labels);
    } catch (const UndefinedMetricError& e) {
        a.note = e.what();
    }
    cell.aurocs.push_back(std::move(a));

    for (std::size_t i = 0; i < pred.uncertainty.size(); ++i) {
        curve.scores.push_back(pred.uncertainty[i]);
        curve.correct.push_back(pred.predicted_class[i] == ev.set->labels[i]);
    }
}

}  // namespace experiment_detail

// Per-cell building blocks, shared between the in-memory experiment and the
// checkpoint-based train/evaluate commands. The rng derivation depends only
// on (seed, subject index, method index), never on execution order.
inline Split cell_split(const EpochSet& data, const ExperimentConfig& cfg,
                        std::uint64_t seed, std::uint8_t subject, std::size_t si,
                        std::size_t mi) {
    RngStream split_rng = RngStream::child(seed, experiment_detail::cell_salt(si, mi, 1));
    return loso_partition(data, subject, cfg.within_frac, cfg.val_frac, split_rng);
}

inline TrainedMethod cell_train(const Split& split, const ExperimentConfig& cfg,
                                std::uint64_t seed, std::size_t si, std::size_t mi) {
    RngStream train_rng = RngStream::child(seed, experiment_detail::cell_salt(si, mi, 2));
    return train_method(cfg.methods[mi], split, cfg.train, train_rng);
}

inline void cell_evaluate(const TrainedMethod& trained, const Split& split,
                          const ExperimentConfig& cfg, std::uint64_t seed, std::size_t si,
                          std::size_t mi, MethodCell& cell,
                          std::map<std::pair<std::string, std::string>, CurveAccumulator>&
                              curves) {
    experiment_detail::EvalSet evals[2] = {{&split.within_population, "within"},
                                           {&split.cross_population, "cross"}};
    for (const auto& ev : evals) {
        auto& curve = curves[{trained.method, ev.population}];
        if (trained.method == "duq") {
            experiment_detail::evaluate_duq(trained, ev, cell, curve);
        } else {
            RngStream eval_rng = RngStream::child(
                seed, experiment_detail::cell_salt(si, mi, ev.population == "within" ? 3 : 4));
            experiment_detail::evaluate_standard(trained, ev, cfg.train.passes, eval_rng,
                                                 cell, curve);
        }
    }
}

struct CellKey {
    std::uint64_t seed;
    std::uint8_t subject;
    std::size_t si;
    std::size_t mi;
};

// canonical (seed, subject, method) enumeration used by every command
inline std::vector<CellKey> enumerate_cells(const ExperimentConfig& cfg,
                                            const std::vector<std::uint8_t>& subjects) {
    std::vector<CellKey> keys;
    for (std::uint64_t seed : cfg.seeds)
        for (std::size_t si = 0; si < subjects.size(); ++si)
            for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi)
                keys.push_back({seed, subjects[si], si, mi});
    return keys;
}

inline void validate_experiment_inputs(const EpochSet& data, const ExperimentConfig& cfg) {
    data.validate();
    if (cfg.methods.empty()) throw ConfigError("experiment needs at least one method");
    const auto& known = method_names();
    for (const auto& m : cfg.methods)
        if (std::find(known.begin(), known.end(), m) == known.end())
            throw ConfigError("unknown method: " + m);
    if (cfg.seeds.empty()) throw ConfigError("experiment needs at least one seed");
    if (data.subjects().size() < 2) throw DataError("LOSO experiment needs >= 2 subjects");
}

// Full LOSO experiment: for every seed and every held-out subject, partition,
// train each method, and score accuracy plus misclassification AUROC on the
// within- and cross-population sets. Deterministic in the seed list and in
// the job count; per-cell failures are recorded and do not abort the run.
inline ExperimentReport run_experiment(const EpochSet& data, const ExperimentConfig& cfg,
                                       std::size_t jobs = 1) {
    validate_experiment_inputs(data, cfg);
    auto subjects = data.subjects();
    auto keys = enumerate_cells(cfg, subjects);

    std::vector<MethodCell> cells(keys.size());
    using CurveMap = std::map<std::pair<std::string, std::string>, CurveAccumulator>;
    std::vector<CurveMap> fragments(keys.size());

    auto run_cell = [&](std::size_t i) {
        const CellKey& k = keys[i];
        MethodCell cell;
        cell.seed = k.seed;
        cell.subject = k.subject;
        cell.method = cfg.methods[k.mi];
        try {
            auto split = cell_split(data, cfg, k.seed, k.subject, k.si, k.mi);
            auto trained = cell_train(split, cfg, k.seed, k.si, k.mi);
            cell.stopped_epochs = trained.stopped_epochs;
            cell_evaluate(trained, split, cfg, k.seed, k.si, k.mi, cell, fragments[i]);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
        cells[i] = std::move(cell);
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < keys.size(); ++i) run_cell(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(jobs, keys.size()); ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < keys.size();
                     i = next.fetch_add(1))
                    run_cell(i);
            });
        for (auto& t : pool) t.join();
    }

    // canonical-order assembly keeps the output independent of scheduling
    ExperimentReport report;
    report.config = cfg;
    for (const auto& method : cfg.methods)
        for (const char* pop : {"within", "cross"}) report.curves[{method, pop}];
    for (std::size_t i = 0; i < keys.size(); ++i) {
        report.cells.push_back(std::move(cells[i]));
        for (auto& [key, frag] : fragments[i]) {
            auto& dst = report.curves[key];
            dst.scores.insert(dst.scores.end(), frag.scores.begin(), frag.scores.end());
            dst.correct.insert(dst.correct.end(), frag.correct.begin(), frag.correct.end());
        }
    }
    return report;
}

}  // namespace uqnet
