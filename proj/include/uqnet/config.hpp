#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "uqnet/experiment.hpp"
#include "uqnet/synth.hpp"

namespace uqnet {

// Run configuration: one JSON document drives every subcommand. Unknown keys
// anywhere in the document are rejected so typos cannot silently fall back
// to defaults.
struct RunConfig {
    std::optional<std::string> epoc_path;          // load data from file, or
    std::optional<PopulationConfig> population;    // synthesize it
    ExperimentConfig experiment;
    std::string output_dir = "out";
};

namespace config_detail {

using json = nlohmann::json;

inline void reject_unknown(const json& obj, const std::set<std::string>& known,
                           const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : obj.items())
        if (!known.count(key)) throw ConfigError("unknown key \"" + key + "\" in " + where);
}

template <typename T>
void read_into(const json& obj, const char* key, T& out) {
    if (auto it = obj.find(key); it != obj.end()) {
        try {
            out = it->get<T>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("bad value type for \"") + key + "\"");
        }
    }
}

inline PopulationConfig parse_population(const json& obj) {
    reject_unknown(obj,
                   {"subjects", "trials_per_class", "channels", "timesteps", "classes",
                    "sampling_rate", "mixing_perturbation", "observation_noise", "seed"},
                   "data.population");
    PopulationConfig cfg;
    read_into(obj, "subjects", cfg.subjects);
    read_into(obj, "trials_per_class", cfg.trials_per_class);
    read_into(obj, "channels", cfg.channels);
    read_into(obj, "timesteps", cfg.timesteps);
    read_into(obj, "classes", cfg.classes);
    read_into(obj, "sampling_rate", cfg.sampling_rate);
    read_into(obj, "mixing_perturbation", cfg.mixing_perturbation);
    read_into(obj, "observation_noise", cfg.observation_noise);
    read_into(obj, "seed", cfg.seed);
    cfg.validate();
    return cfg;
}

inline ConvNetOptions parse_net(const json& obj) {
    reject_unknown(obj,
                   {"temporal_filters", "spatial_filters", "temporal_kernel", "pool_size",
                    "pool_stride", "dropout_rate", "dropconnect_rate", "flipout_units",
                    "duq_dim", "duq_length_scale"},
                   "net");
    ConvNetOptions opt;
    read_into(obj, "temporal_filters", opt.temporal_filters);
    read_into(obj, "spatial_filters", opt.spatial_filters);
    read_into(obj, "temporal_kernel", opt.temporal_kernel);
    read_into(obj, "pool_size", opt.pool_size);
    read_into(obj, "pool_stride", opt.pool_stride);
    read_into(obj, "dropout_rate", opt.dropout_rate);
    read_into(obj, "dropconnect_rate", opt.dropconnect_rate);
    read_into(obj, "flipout_units", opt.flipout_units);
    read_into(obj, "duq_dim", opt.duq_dim);
    read_into(obj, "duq_length_scale", opt.duq_length_scale);
    return opt;
}

inline TrainConfig parse_training(const json& obj, const json* net_obj) {
    reject_unknown(obj,
                   {"batch_size", "max_epochs", "patience", "learning_rate", "kl_samples",
                    "ensemble_size", "passes"},
                   "training");
    TrainConfig cfg;
    read_into(obj, "batch_size", cfg.batch_size);
    read_into(obj, "max_epochs", cfg.max_epochs);
    read_into(obj, "patience", cfg.patience);
    read_into(obj, "learning_rate", cfg.learning_rate);
    read_into(obj, "kl_samples", cfg.kl_samples);
    read_into(obj, "ensemble_size", cfg.ensemble_size);
    read_into(obj, "passes", cfg.passes);
    if (cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.patience == 0)
        throw ConfigError("batch_size, max_epochs and patience must be >= 1");
    if (cfg.learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
    if (cfg.passes == 0) throw ConfigError("passes must be >= 1");
    if (net_obj) cfg.net = parse_net(*net_obj);
    return cfg;
}

}  // namespace config_detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
    using config_detail::read_into;
    using config_detail::reject_unknown;
    reject_unknown(root, {"data", "methods", "seeds", "split", "training", "net",
                          "output_dir"},
                   "config root");

    RunConfig cfg;
    auto data_it = root.find("data");
    if (data_it == root.end()) throw ConfigError("config needs a \"data\" section");
    reject_unknown(*data_it, {"epoc_path", "population"}, "data");
    if (data_it->contains("epoc_path") == data_it->contains("population"))
        throw ConfigError("data needs exactly one of epoc_path or population");
    if (data_it->contains("epoc_path"))
        cfg.epoc_path = data_it->at("epoc_path").get<std::string>();
    else
        cfg.population = config_detail::parse_population(data_it->at("population"));

    auto methods_it = root.find("methods");
    if (methods_it == root.end() || !methods_it->is_array() || methods_it->empty())
        throw ConfigError("config needs a nonempty \"methods\" array");
    const auto& known = method_names();
    for (const auto& m : *methods_it) {
        std::string name = m.get<std::string>();
        if (std::find(known.begin(), known.end(), name) == known.end())
            throw ConfigError("unknown method: " + name);
        cfg.experiment.methods.push_back(std::move(name));
    }

    if (auto it = root.find("seeds"); it != root.end()) {
        if (!it->is_array() || it->empty())
            throw ConfigError("\"seeds\" must be a nonempty array");
        cfg.experiment.seeds = it->get<std::vector<std::uint64_t>>();
    }

    if (auto it = root.find("split"); it != root.end()) {
        reject_unknown(*it, {"within_frac", "val_frac"}, "split");
        read_into(*it, "within_frac", cfg.experiment.within_frac);
        read_into(*it, "val_frac", cfg.experiment.val_frac);
    }
    const double wf = cfg.experiment.within_frac, vf = cfg.experiment.val_frac;
    if (wf <= 0 || wf >= 1 || vf <= 0 || vf >= 1)
        throw ConfigError("split fractions must be in (0,1)");

    auto net_it = root.find("net");
    auto train_it = root.find("training");
    cfg.experiment.train = config_detail::parse_training(
        train_it != root.end() ? *train_it : nlohmann::json::object(),
        net_it != root.end() ? &*net_it : nullptr);

    read_into(root, "output_dir", cfg.output_dir);
    return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json root;
    try {
        is >> root;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    return parse_run_config(root);
}

}  // namespace uqnet
