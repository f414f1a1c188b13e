#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "relnet/train.hpp"

namespace relnet {

struct AblationCell {
    std::string variant;
    std::uint64_t seed = 0;
    bool diverged = false;
    EvalReport eval;
    double final_train_loss = 0.0;
    double wall_seconds = 0.0;
};

struct AblationReport {
    int prediction_day_offset = 0;
    std::vector<std::string> variants;  // column order as configured
    std::vector<std::uint64_t> seeds;
    std::vector<std::vector<AblationCell>> cells; // [seed][variant]
    std::map<std::string, double> mean_r2;
    std::map<std::string, double> stddev_r2;
    std::map<std::string, double> deltas; // adjacent-column improvements
    std::vector<std::string> warnings;
};

inline unsigned ablation_thread_cap() {
    if (const char* env = std::getenv("RELNET_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

// Trains every (seed, variant) cell on the same split and evaluates on the
// same test set. Per seed, all variants are built from that seed, so shared
// substructures start from identical values and the comparison is not
// initialization noise. Cells are independent and fan out across threads.
inline AblationReport run_ablation(const RelationalDataset& data, const Split& split,
                                   const std::vector<ModelConfig>& model_configs,
                                   const TrainConfig& train_cfg,
                                   const std::vector<std::uint64_t>& seeds, int day_offset = 0,
                                   unsigned threads = 0) {
    if (model_configs.empty()) throw config_error("run_ablation: no model configs");
    if (seeds.empty()) throw config_error("run_ablation: need at least one seed");
    for (const ModelConfig& mc : model_configs) mc.validate();
    train_cfg.validate();

    AblationReport report;
    report.prediction_day_offset = day_offset;
    report.seeds = seeds;
    for (const ModelConfig& mc : model_configs) report.variants.push_back(variant_name(mc.variant));
    report.cells.assign(seeds.size(), std::vector<AblationCell>(model_configs.size()));

    struct Job {
        std::size_t si, vi;
    };
    std::vector<Job> jobs;
    for (std::size_t si = 0; si < seeds.size(); ++si)
        for (std::size_t vi = 0; vi < model_configs.size(); ++vi) jobs.push_back({si, vi});

    auto run_cell = [&](const Job& job) {
        std::uint64_t seed = seeds[job.si];
        AblationCell& cell = report.cells[job.si][job.vi];
        cell.variant = report.variants[job.vi];
        cell.seed = seed;
        RelNetModel model(model_configs[job.vi], seed);
        TrainConfig tc = train_cfg;
        tc.seed = seed;
        TrainReport tr = train(model, data, split.train_idx, tc);
        cell.diverged = tr.diverged;
        cell.wall_seconds = tr.wall_seconds;
        if (!tr.epoch_losses.empty()) cell.final_train_loss = tr.epoch_losses.back().total;
        if (!tr.diverged) cell.eval = evaluate_r2(model, data, split.test_idx, day_offset);
    };

    unsigned n_threads = threads == 0 ? ablation_thread_cap() : threads;
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(jobs.size()));
    if (n_threads <= 1) {
        for (const Job& job : jobs) run_cell(job);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < n_threads; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t i = next.fetch_add(1);
                    if (i >= jobs.size()) return;
                    run_cell(jobs[i]);
                }
            });
        for (auto& th : pool) th.join();
    }

    // aggregate over surviving seeds per arm
    for (std::size_t vi = 0; vi < report.variants.size(); ++vi) {
        std::vector<double> r2s;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            const AblationCell& cell = report.cells[si][vi];
            if (cell.diverged) {
                report.warnings.push_back("arm " + cell.variant + " seed " +
                                          std::to_string(cell.seed) +
                                          " diverged; excluded from aggregation");
                continue;
            }
            r2s.push_back(cell.eval.r_squared);
        }
        // duplicate variant names: last write wins, values are identical anyway
        std::string key = report.variants[vi];
        if (r2s.empty()) {
            report.warnings.push_back("arm " + key + ": every seed diverged");
            continue;
        }
        double mean = 0.0;
        for (double v : r2s) mean += v;
        mean /= static_cast<double>(r2s.size());
        double var = 0.0;
        for (double v : r2s) var += (v - mean) * (v - mean);
        report.mean_r2[key] = mean;
        report.stddev_r2[key] = std::sqrt(var / static_cast<double>(r2s.size()));
    }
    for (std::size_t vi = 1; vi < report.variants.size(); ++vi) {
        const std::string& a = report.variants[vi - 1];
        const std::string& b = report.variants[vi];
        if (report.mean_r2.count(a) && report.mean_r2.count(b) && a != b)
            report.deltas[b + "-" + a] = report.mean_r2[b] - report.mean_r2[a];
    }
    return report;
}

inline json ablation_report_to_json(const AblationReport& r) {
    json cells = json::array();
    for (const auto& row : r.cells) {
        json jrow = json::array();
        for (const AblationCell& c : row) {
            jrow.push_back(json{{"variant", c.variant},
                                {"seed", c.seed},
                                {"diverged", c.diverged},
                                {"eval", eval_report_to_json(c.eval)},
                                {"final_train_loss", c.final_train_loss},
                                {"wall_seconds", c.wall_seconds}});
        }
        cells.push_back(jrow);
    }
    return json{{"prediction_day_offset", r.prediction_day_offset},
                {"variants", r.variants},
                {"seeds", r.seeds},
                {"cells", cells},
                {"mean_r_squared", r.mean_r2},
                {"stddev_r_squared", r.stddev_r2},
                {"deltas", r.deltas},
                {"warnings", r.warnings}};
}

// Plain-text grid: one row per scenario, columns in DNN, DNN+MTL,
// DNN+RN+MTL order, a signed delta row underneath.
inline std::string render_ablation_table(const std::vector<AblationReport>& scenarios) {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%8.4f", v);
        return std::string(buf);
    };
    std::string out;
    if (scenarios.empty()) return out;
    const AblationReport& first = scenarios.front();
    std::vector<std::string> display;
    for (const std::string& v : first.variants) display.push_back(variant_display_name(variant_from_name(v)));

    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-12s", "scenario");
    out += buf;
    for (const std::string& name : display) {
        std::snprintf(buf, sizeof(buf), "  %10s", name.c_str());
        out += buf;
    }
    out += "\n";
    for (const AblationReport& sc : scenarios) {
        std::string label = std::to_string(sc.prediction_day_offset) + " days";
        std::snprintf(buf, sizeof(buf), "%-12s", label.c_str());
        out += buf;
        for (const std::string& v : sc.variants) {
            if (sc.mean_r2.count(v)) {
                std::snprintf(buf, sizeof(buf), "  %10s", fmt(sc.mean_r2.at(v)).c_str());
                out += buf;
            } else {
                std::snprintf(buf, sizeof(buf), "  %10s", "n/a");
                out += buf;
            }
        }
        out += "\n";
        std::snprintf(buf, sizeof(buf), "%-12s", "  delta");
        out += buf;
        for (std::size_t vi = 0; vi < sc.variants.size(); ++vi) {
            std::string cell;
            if (vi > 0) {
                std::string key = sc.variants[vi] + "-" + sc.variants[vi - 1];
                if (sc.deltas.count(key)) {
                    char d[32];
                    std::snprintf(d, sizeof(d), "%+8.4f", sc.deltas.at(key));
                    cell = d;
                }
            }
            std::snprintf(buf, sizeof(buf), "  %10s", cell.c_str());
            out += buf;
        }
        out += "\n";
    }
    return out;
}

} // namespace relnet
