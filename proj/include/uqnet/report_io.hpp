#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "uqnet/experiment.hpp"

namespace uqnet {

inline const std::vector<double>& coverage_grid() {
    static const std::vector<double> grid = {0.1, 0.2, 0.3, 0.4, 0.5,
                                             0.6, 0.7, 0.8, 0.9, 1.0};
    return grid;
}

namespace report_detail {

// fixed-point "73.05" rendering of a [0,1] value scaled by 100
inline std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
    return buf;
}

inline std::string pct_pm(const MeanStd& ms) {
    return pct(ms.mean) + " ± " + pct(ms.std);
}

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
        os << content;
        if (!os) throw FormatError("write failure on " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace report_detail

inline nlohmann::ordered_json report_to_json(const ExperimentReport& report) {
    using json = nlohmann::ordered_json;
    json root;
    json cfg;
    cfg["methods"] = report.config.methods;
    cfg["seeds"] = report.config.seeds;
    cfg["within_frac"] = report.config.within_frac;
    cfg["val_frac"] = report.config.val_frac;
    cfg["passes"] = report.config.train.passes;
    cfg["ensemble_size"] = report.config.train.ensemble_size;
    cfg["batch_size"] = report.config.train.batch_size;
    cfg["max_epochs"] = report.config.train.max_epochs;
    cfg["patience"] = report.config.train.patience;
    cfg["learning_rate"] = report.config.train.learning_rate;
    root["config"] = cfg;

    json cells = json::array();
    for (const auto& c : report.cells) {
        json jc;
        jc["seed"] = c.seed;
        jc["subject"] = c.subject;
        jc["method"] = c.method;
        jc["within_accuracy"] = c.within_accuracy ? json(*c.within_accuracy) : json(nullptr);
        jc["cross_accuracy"] = c.cross_accuracy ? json(*c.cross_accuracy) : json(nullptr);
        json aurocs = json::array();
        for (const auto& a : c.aurocs) {
            json ja;
            ja["measure"] = a.measure;
            ja["population"] = a.population;
            ja["auroc"] = a.value ? json(*a.value) : json(nullptr);
            if (!a.note.empty()) ja["note"] = a.note;
            aurocs.push_back(std::move(ja));
        }
        jc["aurocs"] = std::move(aurocs);
        jc["stopped_epochs"] = c.stopped_epochs;
        if (!c.error.empty()) jc["error"] = c.error;
        cells.push_back(std::move(jc));
    }
    root["cells"] = std::move(cells);

    json aggregates;
    for (const auto& method : report.config.methods) {
        json jm;
        auto acc_json = [&](bool within) -> json {
            try {
                auto ms = report.aggregate_accuracy(method, within);
                return {{"mean", ms.mean}, {"std", ms.std}, {"single_value", ms.single_value}};
            } catch (const DataError&) {
                return nullptr;
            }
        };
        jm["within_accuracy"] = acc_json(true);
        jm["cross_accuracy"] = acc_json(false);
        json jaur;
        for (const auto& measure : measures_for_method(method)) {
            json jp;
            for (const char* pop : {"within", "cross"}) {
                auto ms = report.aggregate_auroc(method, measure, pop);
                jp[pop] = ms ? json{{"mean", ms->mean},
                                    {"std", ms->std},
                                    {"single_value", ms->single_value}}
                             : json(nullptr);
            }
            jaur[measure] = std::move(jp);
        }
        jm["auroc"] = std::move(jaur);
        aggregates[method] = std::move(jm);
    }
    root["aggregates"] = std::move(aggregates);

    json curves;
    for (const auto& [key, acc] : report.curves) {
        if (acc.scores.empty()) continue;
        auto curve = rejection_curve(acc.scores, acc.correct, coverage_grid());
        json jc = json::array();
        for (const auto& [q, a] : curve) jc.push_back({{"coverage", q}, {"accuracy", a}});
        curves[key.first][key.second] = std::move(jc);
    }
    root["rejection_curves"] = std::move(curves);
    return root;
}

inline void write_report_json(const std::filesystem::path& path,
                              const ExperimentReport& report) {
    report_detail::write_atomic(path, report_to_json(report).dump(2) + "\n");
}

// accuracy.csv: one row per defined (seed, subject, method) cell, values x100
inline void write_accuracy_csv(const std::filesystem::path& path,
                               const ExperimentReport& report) {
    std::ostringstream os;
    os << "seed,subject,method,within_acc,cross_acc\n";
    for (const auto& c : report.cells) {
        if (!c.error.empty()) continue;
        os << c.seed << "," << int(c.subject) << "," << c.method << ","
           << (c.within_accuracy ? report_detail::pct(*c.within_accuracy) : "-") << ","
           << (c.cross_accuracy ? report_detail::pct(*c.cross_accuracy) : "-") << "\n";
    }
    report_detail::write_atomic(path, os.str());
}

// auroc.csv: one row per applicable (seed, subject, method, measure,
// population); undefined cells render as "-", inapplicable measures (MI for
// the standard baselines) have no row at all
inline void write_auroc_csv(const std::filesystem::path& path,
                            const ExperimentReport& report) {
    std::ostringstream os;
    os << "seed,subject,method,measure,population,auroc\n";
    for (const auto& c : report.cells) {
        if (!c.error.empty()) continue;
        for (const auto& a : c.aurocs)
            os << c.seed << "," << int(c.subject) << "," << c.method << "," << a.measure
               << "," << a.population << ","
               << (a.value ? report_detail::pct(*a.value) : "-") << "\n";
    }
    report_detail::write_atomic(path, os.str());
}

// accuracy-rejection plot: one polyline per method
inline void write_curve_svg(
    const std::filesystem::path& path,
    const std::map<std::string, std::vector<std::pair<double, double>>>& curves) {
    const int W = 640, H = 480, ML = 60, MR = 20, MT = 20, MB = 50;
    const double px = double(W - ML - MR), py = double(H - MT - MB);
    auto x_of = [&](double cov) { return double(ML) + cov * px; };
    auto y_of = [&](double acc) { return double(MT) + (1.0 - acc) * py; };

    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2"};
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
       << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
       << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
       << H - MB << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\""
       << H - MB << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << (ML + W - MR) / 2 << "\" y=\"" << H - 12
       << "\" text-anchor=\"middle\" font-size=\"14\">coverage</text>\n"
       << "<text x=\"16\" y=\"" << (MT + H - MB) / 2
       << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 "
       << (MT + H - MB) / 2 << ")\">accuracy on retained</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double v = 0.25 * i;
        char tick[16];
        std::snprintf(tick, sizeof(tick), "%.2f", v);
        os << "<text x=\"" << x_of(v) << "\" y=\"" << H - MB + 18
           << "\" text-anchor=\"middle\" font-size=\"11\">" << tick << "</text>\n";
    }

    std::size_t color = 0;
    double legend_y = MT + 16;
    for (const auto& [method, curve] : curves) {
        if (curve.empty()) continue;
        const char* stroke = palette[color++ % 7];
        os << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"2\" points=\"";
        for (const auto& [q, a] : curve) os << x_of(q) << "," << y_of(a) << " ";
        os << "\"/>\n";
        os << "<text x=\"" << W - MR - 160 << "\" y=\"" << legend_y
           << "\" font-size=\"12\" fill=\"" << stroke << "\">" << method << "</text>\n";
        legend_y += 16;
    }
    os << "</svg>\n";
    report_detail::write_atomic(path, os.str());
}

// one SVG per population: pooled accuracy-rejection curve per method
inline void write_rejection_svg(const std::filesystem::path& path,
                                const ExperimentReport& report,
                                const std::string& population) {
    std::map<std::string, std::vector<std::pair<double, double>>> curves;
    for (const auto& [key, acc] : report.curves) {
        if (key.second != population || acc.scores.empty()) continue;
        curves[key.first] = rejection_curve(acc.scores, acc.correct, coverage_grid());
    }
    write_curve_svg(path, curves);
}

// console grids in mean +/- std style, values x100, "-" for missing cells
inline void render_report(const ExperimentReport& report, std::ostream& os) {
    auto cellw = [](const std::string& s) {
        std::string out = s;
        while (out.size() < 18) out += ' ';
        return out;
    };
    os << "Accuracy (x100)\n";
    os << cellw("method") << cellw("within") << cellw("cross") << "\n";
    for (const auto& method : report.config.methods) {
        std::string within = "-", cross = "-";
        try {
            within = report_detail::pct_pm(report.aggregate_accuracy(method, true));
        } catch (const DataError&) {
        }
        try {
            cross = report_detail::pct_pm(report.aggregate_accuracy(method, false));
        } catch (const DataError&) {
        }
        os << cellw(method) << cellw(within) << cellw(cross) << "\n";
    }
    for (const char* pop : {"within", "cross"}) {
        os << "\nMisclassification AUROC (x100), " << pop << "-population\n";
        os << cellw("method") << cellw("pred. entropy") << cellw("exp. entropy")
           << cellw("mutual info") << cellw("uncertainty") << "\n";
        for (const auto& method : report.config.methods) {
            os << cellw(method);
            for (const char* measure : {"predictive_entropy", "expected_entropy",
                                        "mutual_information", "uncertainty"}) {
                auto ms = report.aggregate_auroc(method, measure, pop);
                os << cellw(ms ? report_detail::pct_pm(*ms) : "-");
            }
            os << "\n";
        }
    }
}

}  // namespace uqnet
