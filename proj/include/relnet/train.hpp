#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "relnet/market.hpp"
#include "relnet/model.hpp"
#include "relnet/optimizer.hpp"

namespace relnet {

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    double learning_rate = 2e-5;
    double momentum_coeff = 0.9;
    std::uint64_t seed = 0;
    bool shuffle = true;
    double divergence_threshold = 1e12;

    void validate() const {
        if (epochs == 0) throw config_error("TrainConfig: epochs must be positive");
        if (batch_size == 0) throw config_error("TrainConfig: batch_size must be positive");
        if (learning_rate < 0.0 || !std::isfinite(learning_rate))
            throw config_error("TrainConfig: learning_rate must be finite and >= 0");
        if (momentum_coeff < 0.0 || momentum_coeff >= 1.0)
            throw config_error("TrainConfig: momentum_coeff must be in [0,1)");
        if (divergence_threshold <= 0.0)
            throw config_error("TrainConfig: divergence_threshold must be positive");
    }
};

inline json train_config_to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"momentum_coeff", c.momentum_coeff},
                {"seed", c.seed},
                {"shuffle", c.shuffle},
                {"divergence_threshold", c.divergence_threshold}};
}

// One epoch's loss, summed over the epoch's batches (each batch-sum summed).
struct EpochLoss {
    double total = 0.0, main = 0.0, aux = 0.0, reg = 0.0;
};

struct TrainReport {
    std::vector<EpochLoss> epoch_losses;
    bool diverged = false;
    std::size_t diverged_epoch = 0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    TargetStats train_target_stats;
};

inline json train_report_to_json(const TrainReport& r) {
    json epochs = json::array();
    for (const EpochLoss& e : r.epoch_losses)
        epochs.push_back(json{{"total", e.total}, {"main", e.main}, {"aux", e.aux}, {"reg", e.reg}});
    return json{{"epoch_losses", epochs},
                {"diverged", r.diverged},
                {"diverged_epoch", r.diverged_epoch},
                {"wall_seconds", r.wall_seconds},
                {"seed", r.seed},
                {"train_target_mean", r.train_target_stats.mean},
                {"train_target_stddev", r.train_target_stats.stddev}};
}

// Seeded permutation per epoch. The final short batch stays unless it has
// fewer than 2 samples while batch norm trains, in which case it folds into
// the previous batch.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& idx,
                                                          std::size_t batch_size, bool bn_training,
                                                          RngStream& rng, bool shuffle = true) {
    if (batch_size == 0) throw config_error("make_batches: batch_size must be positive");
    std::vector<std::size_t> order = idx;
    if (shuffle) rng.shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        std::size_t end = std::min(start + batch_size, order.size());
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    if (bn_training && batches.size() >= 2 && batches.back().size() < 2) {
        auto tail = batches.back();
        batches.pop_back();
        batches.back().insert(batches.back().end(), tail.begin(), tail.end());
    }
    return batches;
}

inline bool model_trains_batchnorm(RelNetModel& model) {
    return !model.batchnorm_layers().empty();
}

// Mini-batch training: forward / loss / backward / momentum step, the l2
// gradient applied in the step. Deterministic given (model init seed,
// config.seed). A divergence guard aborts, flagging the epoch, as soon as the
// running loss stops being finite or crosses the threshold.
inline TrainReport train(RelNetModel& model, const RelationalDataset& data,
                         const std::vector<std::size_t>& train_idx, const TrainConfig& cfg) {
    cfg.validate();
    if (train_idx.empty()) throw config_error("train: empty training set");
    bool bn = model_trains_batchnorm(model);
    if (bn && train_idx.size() < 2)
        throw config_error("train: batch norm needs at least 2 training samples");

    auto t0 = std::chrono::steady_clock::now();
    TrainReport report;
    report.seed = cfg.seed;
    report.train_target_stats = target_stats(data, train_idx);

    MomentumOptimizer opt(cfg.learning_rate, cfg.momentum_coeff);
    RngStream shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    std::uint64_t trial = 0;
    ModelCtx ctx;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto batches = make_batches(train_idx, cfg.batch_size, bn, shuffle_rng, cfg.shuffle);
        EpochLoss el;
        for (const auto& bidx : batches) {
            model.set_dropout_trial(trial++);
            Batch batch = make_batch(data.samples, bidx,
                                     model.has_rn() ? model.config().n_related : 0);
            LossParts parts = model.loss(batch, Mode::train, ctx);
            el.total += parts.total;
            el.main += parts.main;
            el.aux += parts.aux;
            el.reg += parts.reg;
            if (!std::isfinite(parts.total) || parts.total > cfg.divergence_threshold) {
                report.diverged = true;
                report.diverged_epoch = epoch;
                report.epoch_losses.push_back(el);
                report.wall_seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                return report;
            }
            model.backward(batch, ctx);
            opt.step(model.params(), model.config().gamma_l2);
        }
        report.epoch_losses.push_back(el);
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// Fraction of epoch transitions where the training loss did not increase.
// A sanity monitor, not a guarantee: callers warn below 0.9, nothing fails.
inline double loss_monotonicity_fraction(const TrainReport& r) {
    if (r.epoch_losses.size() < 2) return 1.0;
    std::size_t ok = 0;
    for (std::size_t i = 1; i < r.epoch_losses.size(); ++i)
        if (r.epoch_losses[i].total <= r.epoch_losses[i - 1].total) ++ok;
    return static_cast<double>(ok) / static_cast<double>(r.epoch_losses.size() - 1);
}

struct EvalReport {
    double r_squared = 0.0;
    double mae = 0.0;
    std::size_t n_samples = 0;
    std::string variant;
    int prediction_day_offset = 0; // metadata label only
};

inline json eval_report_to_json(const EvalReport& r) {
    return json{{"r_squared", r.r_squared},
                {"mae", r.mae},
                {"n_samples", r.n_samples},
                {"variant", r.variant},
                {"prediction_day_offset", r.prediction_day_offset}};
}

// R^2 = 1 - SS_res / SS_tot against the evaluation-set mean.
inline double r2_score(const std::vector<double>& y, const std::vector<double>& y_hat) {
    if (y.size() != y_hat.size() || y.size() < 2)
        throw config_error("r2_score: need >= 2 paired samples");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (ss_tot == 0.0) throw config_error("r2_score: constant targets, R^2 undefined");
    return 1.0 - ss_res / ss_tot;
}

// Inference-mode evaluation (running batch-norm stats, dropout off).
inline EvalReport evaluate_r2(RelNetModel& model, const RelationalDataset& data,
                              const std::vector<std::size_t>& idx, int day_offset = 0) {
    if (idx.size() < 2) throw config_error("evaluate_r2: need at least 2 samples");
    std::vector<double> y, y_hat;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        std::size_t end = std::min(start + chunk, idx.size());
        std::vector<std::size_t> part(idx.begin() + start, idx.begin() + end);
        Batch batch =
            make_batch(data.samples, part, model.has_rn() ? model.config().n_related : 0);
        ModelCtx ctx;
        model.forward(batch, Mode::infer, ctx);
        for (std::size_t r = 0; r < part.size(); ++r) {
            y.push_back(batch.y[r]);
            y_hat.push_back(ctx.y_hat(r, 0));
        }
    }
    EvalReport report;
    report.r_squared = r2_score(y, y_hat);
    double mae = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) mae += std::fabs(y[i] - y_hat[i]);
    report.mae = mae / static_cast<double>(y.size());
    report.n_samples = y.size();
    report.variant = variant_name(model.config().variant);
    report.prediction_day_offset = day_offset;
    return report;
}

} // namespace relnet
