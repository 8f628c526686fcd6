// uqnet command line: generate synthetic data, train the UQ methods over a
// LOSO schedule, evaluate them into report files, and render reports.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "uqnet/checkpoint.hpp"
#include "uqnet/config.hpp"
#include "uqnet/report_io.hpp"

namespace fs = std::filesystem;
using njson = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
    const char* env = std::getenv("UQNET_LOG");
    if (!env) return LogLevel::Info;
    const std::string v = env;
    if (v == "quiet" || v == "0") return LogLevel::Quiet;
    if (v == "debug" || v == "2") return LogLevel::Debug;
    return LogLevel::Info;
}

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::cerr << "uqnet: " << msg << "\n";
}

void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) std::cerr << "uqnet[debug]: " << msg << "\n";
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed_override;
    std::size_t jobs = 1;
};

uqnet::RunConfig load_config(const CommonOpts& opts) {
    auto cfg = uqnet::load_run_config(opts.config_path);
    if (!opts.out_dir.empty()) cfg.output_dir = opts.out_dir;
    if (opts.seed_override) {
        cfg.experiment.seeds = {*opts.seed_override};
        if (cfg.population) cfg.population->seed = *opts.seed_override;
    }
    return cfg;
}

uqnet::EpochSet load_data(const uqnet::RunConfig& cfg) {
    if (cfg.epoc_path) {
        log_debug("loading epochs from " + *cfg.epoc_path);
        return uqnet::load_epochset(*cfg.epoc_path);
    }
    log_debug("synthesizing population, seed " + std::to_string(cfg.population->seed));
    return uqnet::synthesize_population(*cfg.population);
}

fs::path ensure_out_dir(const uqnet::RunConfig& cfg) {
    fs::path dir = cfg.output_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir))
        throw uqnet::ConfigError("cannot create output directory " + dir.string() + ": " +
                                 ec.message());
    return dir;
}

ojson population_sidecar(const uqnet::PopulationConfig& p) {
    ojson j;
    j["subjects"] = p.subjects;
    j["trials_per_class"] = p.trials_per_class;
    j["channels"] = p.channels;
    j["timesteps"] = p.timesteps;
    j["classes"] = p.classes;
    j["sampling_rate"] = p.sampling_rate;
    j["mixing_perturbation"] = p.mixing_perturbation;
    j["observation_noise"] = p.observation_noise;
    j["seed"] = p.seed;
    return j;
}

int cmd_generate(const CommonOpts& opts) {
    auto cfg = load_config(opts);
    if (!cfg.population)
        throw uqnet::ConfigError("generate needs a data.population section");
    auto dir = ensure_out_dir(cfg);
    auto set = uqnet::synthesize_population(*cfg.population);
    uqnet::save_epochset(dir / "population.epoc", set);
    uqnet::report_detail::write_atomic(dir / "population.json",
                                       population_sidecar(*cfg.population).dump(2) + "\n");
    log_info("wrote " + (dir / "population.epoc").string() + " (" +
             std::to_string(set.trials()) + " trials)");
    return 0;
}

fs::path cell_dir(const fs::path& root, std::uint64_t seed, std::uint8_t subject,
                  const std::string& method) {
    return root / ("seed_" + std::to_string(seed)) /
           ("subject_" + std::to_string(int(subject))) / method;
}

int cmd_train(const CommonOpts& opts) {
    auto cfg = load_config(opts);
    auto data = load_data(cfg);
    uqnet::validate_experiment_inputs(data, cfg.experiment);
    auto dir = ensure_out_dir(cfg);
    const fs::path ckpt_root = dir / "checkpoints";
    fs::create_directories(ckpt_root);

    auto subjects = data.subjects();
    auto keys = uqnet::enumerate_cells(cfg.experiment, subjects);
    ojson manifest;
    manifest["seeds"] = cfg.experiment.seeds;
    manifest["methods"] = cfg.experiment.methods;
    ojson jcells = ojson::array();
    bool any_failed = false;

    for (const auto& k : keys) {
        const std::string& method = cfg.experiment.methods[k.mi];
        ojson jc;
        jc["seed"] = k.seed;
        jc["subject"] = k.subject;
        jc["method"] = method;
        try {
            auto split = uqnet::cell_split(data, cfg.experiment, k.seed, k.subject, k.si,
                                           k.mi);
            auto trained = uqnet::cell_train(split, cfg.experiment, k.seed, k.si, k.mi);
            const fs::path cdir = cell_dir(ckpt_root, k.seed, k.subject, method);
            fs::create_directories(cdir);
            for (std::size_t m = 0; m < trained.members.size(); ++m)
                uqnet::save_checkpoint(
                    cdir / ("member_" + std::to_string(m) + ".uqnn"),
                    trained.members[m].params);
            jc["members"] = trained.members.size();
            jc["stopped_epochs"] = trained.stopped_epochs;
            log_info("trained seed " + std::to_string(k.seed) + " subject " +
                     std::to_string(int(k.subject)) + " " + method);
        } catch (const std::exception& e) {
            jc["error"] = e.what();
            any_failed = true;
            log_info("cell failed: " + std::string(e.what()));
        }
        jcells.push_back(std::move(jc));
    }
    manifest["cells"] = std::move(jcells);
    uqnet::report_detail::write_atomic(ckpt_root / "manifest.json",
                                       manifest.dump(2) + "\n");
    log_info("wrote " + (ckpt_root / "manifest.json").string());
    return any_failed ? 1 : 0;
}

// rebuild a TrainedMethod for one cell from its checkpoint directory
uqnet::TrainedMethod load_cell(const fs::path& cdir, const std::string& method,
                               const uqnet::ExperimentConfig& cfg, std::size_t channels,
                               std::size_t timesteps, std::size_t classes) {
    const std::string variant = method == "ensembles" ? "ensemble_member" : method;
    auto net = uqnet::build_shallow_convnet(variant, channels, timesteps, classes,
                                            cfg.train.net);
    const std::size_t members =
        method == "ensembles" ? cfg.train.ensemble_size : std::size_t(1);
    uqnet::TrainedMethod out;
    out.method = method;
    for (std::size_t m = 0; m < members; ++m) {
        const fs::path path = cdir / ("member_" + std::to_string(m) + ".uqnn");
        if (!fs::exists(path))
            throw uqnet::FormatError("missing checkpoint " + path.string());
        out.members.push_back(
            {net, uqnet::load_checkpoint<float>(path, net)});
    }
    return out;
}

int cmd_evaluate(const CommonOpts& opts) {
    auto cfg = load_config(opts);
    auto data = load_data(cfg);
    uqnet::validate_experiment_inputs(data, cfg.experiment);
    auto dir = ensure_out_dir(cfg);
    const fs::path ckpt_root = dir / "checkpoints";

    auto subjects = data.subjects();
    auto keys = uqnet::enumerate_cells(cfg.experiment, subjects);
    uqnet::ExperimentReport report;
    report.config = cfg.experiment;
    for (const auto& method : cfg.experiment.methods)
        for (const char* pop : {"within", "cross"}) report.curves[{method, pop}];
    bool any_failed = false;

    for (const auto& k : keys) {
        const std::string& method = cfg.experiment.methods[k.mi];
        uqnet::MethodCell cell;
        cell.seed = k.seed;
        cell.subject = k.subject;
        cell.method = method;
        try {
            auto split = uqnet::cell_split(data, cfg.experiment, k.seed, k.subject, k.si,
                                           k.mi);
            auto trained = load_cell(cell_dir(ckpt_root, k.seed, k.subject, method), method,
                                     cfg.experiment, data.channels(), data.timesteps(),
                                     data.classes);
            uqnet::cell_evaluate(trained, split, cfg.experiment, k.seed, k.si, k.mi, cell,
                                 report.curves);
            log_debug("evaluated seed " + std::to_string(k.seed) + " subject " +
                      std::to_string(int(k.subject)) + " " + method);
        } catch (const std::exception& e) {
            cell.error = e.what();
            any_failed = true;
            log_info("cell failed: " + std::string(e.what()));
        }
        report.cells.push_back(std::move(cell));
    }

    uqnet::write_report_json(dir / "report.json", report);
    uqnet::write_accuracy_csv(dir / "accuracy.csv", report);
    uqnet::write_auroc_csv(dir / "auroc.csv", report);
    log_info("wrote report.json, accuracy.csv, auroc.csv in " + dir.string());
    return any_failed ? 1 : 0;
}

// Render tables and SVG curves from a previously written report JSON.
std::string pm_from_json(const njson& cell) {
    if (cell.is_null()) return "-";
    return uqnet::report_detail::pct(cell.at("mean").get<double>()) + " ± " +
           uqnet::report_detail::pct(cell.at("std").get<double>());
}

int cmd_report(const std::string& report_path, const std::string& out_dir) {
    std::ifstream is(report_path);
    if (!is) throw uqnet::FormatError("cannot open report " + report_path);
    njson root;
    try {
        is >> root;
    } catch (const njson::exception& e) {
        throw uqnet::FormatError("malformed report JSON: " + std::string(e.what()));
    }
    if (!root.contains("aggregates") || !root.contains("config"))
        throw uqnet::FormatError("report JSON missing aggregates/config sections");

    auto cellw = [](const std::string& s) {
        std::string out = s;
        while (out.size() < 18) out += ' ';
        return out;
    };
    const auto methods = root["config"]["methods"].get<std::vector<std::string>>();
    std::cout << "Accuracy (x100)\n"
              << cellw("method") << cellw("within") << cellw("cross") << "\n";
    for (const auto& m : methods) {
        const auto& agg = root["aggregates"].at(m);
        std::cout << cellw(m) << cellw(pm_from_json(agg.at("within_accuracy")))
                  << cellw(pm_from_json(agg.at("cross_accuracy"))) << "\n";
    }
    for (const char* pop : {"within", "cross"}) {
        std::cout << "\nMisclassification AUROC (x100), " << pop << "-population\n"
                  << cellw("method") << cellw("pred. entropy") << cellw("exp. entropy")
                  << cellw("mutual info") << cellw("uncertainty") << "\n";
        for (const auto& m : methods) {
            const auto& aur = root["aggregates"].at(m).at("auroc");
            std::cout << cellw(m);
            for (const char* measure : {"predictive_entropy", "expected_entropy",
                                        "mutual_information", "uncertainty"}) {
                std::string text = "-";
                if (aur.contains(measure)) text = pm_from_json(aur.at(measure).at(pop));
                std::cout << cellw(text);
            }
            std::cout << "\n";
        }
    }

    // redraw SVGs from the stored curve points
    fs::path dir = out_dir.empty() ? fs::path(report_path).parent_path() : fs::path(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (root.contains("rejection_curves")) {
        for (const char* pop : {"within", "cross"}) {
            std::map<std::string, std::vector<std::pair<double, double>>> curves;
            for (const auto& [method, pops] : root["rejection_curves"].items()) {
                if (!pops.contains(pop)) continue;
                auto& pts = curves[method];
                for (const auto& pt : pops.at(pop))
                    pts.emplace_back(pt.at("coverage").get<double>(),
                                     pt.at("accuracy").get<double>());
            }
            if (curves.empty()) continue;
            const fs::path path = dir / ("rejection_" + std::string(pop) + ".svg");
            uqnet::write_curve_svg(path, curves);
            log_info("wrote " + path.string());
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"uncertainty-aware EEG classifier toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string report_path;

    auto add_common = [&](CLI::App* sub, bool need_config) {
        auto* c = sub->add_option("--config", opts.config_path, "run config JSON");
        if (need_config) c->required();
        sub->add_option("--out", opts.out_dir, "output directory (overrides config)");
        sub->add_option("--seed", opts.seed_override, "master seed (overrides config)");
        sub->add_option("--jobs", opts.jobs, "worker threads")->check(CLI::Range(1, 256));
    };

    auto* generate = app.add_subcommand("generate", "synthesize a population EPOC file");
    add_common(generate, true);
    auto* train = app.add_subcommand("train", "train all (subject, method) cells");
    add_common(train, true);
    auto* evaluate = app.add_subcommand("evaluate", "evaluate checkpoints into reports");
    add_common(evaluate, true);
    auto* report = app.add_subcommand("report", "render a report JSON");
    report->add_option("--report", report_path, "report JSON path")->required();
    report->add_option("--out", opts.out_dir, "directory for SVG output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return cmd_generate(opts);
        if (train->parsed()) return cmd_train(opts);
        if (evaluate->parsed()) return cmd_evaluate(opts);
        if (report->parsed()) return cmd_report(report_path, opts.out_dir);
    } catch (const std::exception& e) {
        std::cerr << "uqnet: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
