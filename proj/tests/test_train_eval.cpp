#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "relnet/ablation.hpp"
#include "relnet/train.hpp"

using namespace relnet;
using nlohmann::json;

namespace {

RelationalDataset toy_data(std::size_t n_samples, std::size_t dim, std::size_t n_related,
                           std::uint64_t seed) {
    RelationalDataset rd;
    rd.input_dim = dim;
    rd.n_related = n_related;
    RngStream rng(seed);
    for (std::size_t i = 0; i < n_samples; ++i) {
        RelationalSample s;
        s.x.resize(dim);
        for (double& v : s.x) v = rng.normal();
        s.related.assign(n_related, std::vector<double>(dim));
        for (auto& r : s.related)
            for (double& v : r) v = rng.normal();
        // a learnable target: linear in x plus mild noise
        s.y = 0.0;
        for (std::size_t k = 0; k < dim; ++k) s.y += (k % 2 ? 0.5 : -0.25) * s.x[k];
        s.y += rng.normal(0.0, 0.05);
        s.y_aux = 2.0 * s.y + rng.normal(0.0, 0.05);
        rd.samples.push_back(std::move(s));
        rd.release_days.push_back(static_cast<int>(i));
    }
    return rd;
}

std::vector<std::size_t> iota_idx(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

ModelConfig toy_model_config(std::size_t dim, std::size_t n_related) {
    ModelConfig mc;
    mc.input_dim = dim;
    mc.n_related = n_related;
    mc.encoder_depth = 2;
    mc.encoder_width = 12;
    mc.repr_dim = 8;
    mc.relation_depth = 2;
    mc.relation_width = 8;
    mc.aggregate_depth = 2;
    mc.aggregate_width = 8;
    mc.head_depth = 2;
    mc.head_width = 8;
    mc.gamma_l2 = 0.0;
    mc.dropout_keep = 1.0;
    return mc;
}

// y_hat = x for one-dimensional inputs: identity encoder into identity head
RelNetModel identity_predictor() {
    ModelConfig mc;
    mc.input_dim = 1;
    mc.n_related = 0;
    mc.encoder_depth = 1;
    mc.encoder_width = 1;
    mc.repr_dim = 1;
    mc.head_depth = 1;
    mc.head_width = 1;
    mc.variant = Variant::dnn;
    mc.encoder_batchnorm = false;
    mc.block_batchnorm = false;
    mc.gamma_l2 = 0.0;
    RelNetModel model(mc, 0);
    model.params().find("encoder.l0.W")->values = {1.0};
    model.params().find("encoder.l0.b")->values = {0.0};
    model.params().find("head_main.l0.W")->values = {1.0};
    model.params().find("head_main.l0.b")->values = {0.0};
    return model;
}

RelationalDataset scalar_data(const std::vector<double>& xs, const std::vector<double>& ys) {
    RelationalDataset rd;
    rd.input_dim = 1;
    rd.n_related = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        RelationalSample s;
        s.x = {xs[i]};
        s.y = ys[i];
        rd.samples.push_back(s);
        rd.release_days.push_back(static_cast<int>(i));
    }
    return rd;
}

json strip_wall_clock(json j) {
    if (j.is_object()) {
        j.erase("wall_seconds");
        for (auto& [k, v] : j.items()) v = strip_wall_clock(v);
    } else if (j.is_array()) {
        for (auto& v : j) v = strip_wall_clock(v);
    }
    return j;
}

} // namespace

TEST_CASE("make_batches covers the samples exactly once") {
    std::vector<std::size_t> idx = iota_idx(23);
    RngStream rng(5);
    auto batches = make_batches(idx, 64, false, rng);
    CHECK(batches.size() == 1);
    CHECK(batches[0].size() == 23);

    auto small = make_batches(idx, 4, false, rng);
    std::vector<std::size_t> all;
    for (auto& b : small) all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    CHECK(all == idx);
}

TEST_CASE("make_batches folds a lone trailing sample only while batch norm trains") {
    std::vector<std::size_t> idx = iota_idx(5);
    RngStream rng(1);
    auto folded = make_batches(idx, 2, true, rng, false);
    REQUIRE(folded.size() == 2);
    CHECK(folded[0].size() == 2);
    CHECK(folded[1].size() == 3);
    auto plain = make_batches(idx, 2, false, rng, false);
    REQUIRE(plain.size() == 3);
    CHECK(plain[2].size() == 1);
}

TEST_CASE("make_batches shuffles reproducibly per seed") {
    std::vector<std::size_t> idx = iota_idx(16);
    RngStream r1(9), r2(9), r3(10);
    auto a = make_batches(idx, 4, false, r1);
    auto b = make_batches(idx, 4, false, r2);
    auto c = make_batches(idx, 4, false, r3);
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("training with learning rate zero leaves every parameter bitwise unchanged") {
    RelationalDataset rd = toy_data(24, 5, 2, 3);
    RelNetModel model(toy_model_config(5, 2), 7);
    std::vector<std::vector<double>> before;
    for (std::size_t i = 0; i < model.params().count(); ++i)
        before.push_back(model.params().at(i).values);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 8;
    tc.learning_rate = 0.0;
    train(model, rd, iota_idx(24), tc);
    for (std::size_t i = 0; i < model.params().count(); ++i)
        CHECK(model.params().at(i).values == before[i]);
}

TEST_CASE("training is bitwise deterministic given the seeds") {
    RelationalDataset rd = toy_data(30, 5, 2, 4);
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 8;
    tc.learning_rate = 1e-4;
    tc.seed = 11;

    RelNetModel m1(toy_model_config(5, 2), 9);
    RelNetModel m2(toy_model_config(5, 2), 9);
    TrainReport r1 = train(m1, rd, iota_idx(30), tc);
    TrainReport r2 = train(m2, rd, iota_idx(30), tc);
    REQUIRE(r1.epoch_losses.size() == r2.epoch_losses.size());
    for (std::size_t e = 0; e < r1.epoch_losses.size(); ++e)
        CHECK(r1.epoch_losses[e].total == r2.epoch_losses[e].total);
    for (std::size_t i = 0; i < m1.params().count(); ++i)
        CHECK(m1.params().at(i).values == m2.params().at(i).values);
}

TEST_CASE("the divergence guard aborts with the epoch index and a partial report") {
    RelationalDataset rd = toy_data(32, 5, 2, 5);
    RelNetModel model(toy_model_config(5, 2), 1);
    TrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 8;
    tc.learning_rate = 10.0; // hopeless
    TrainReport r = train(model, rd, iota_idx(32), tc);
    CHECK(r.diverged);
    CHECK(r.diverged_epoch < 50);
    CHECK(!r.epoch_losses.empty());
    CHECK(r.epoch_losses.size() == r.diverged_epoch + 1);
}

TEST_CASE("training stores the train-side target statistics for reporting") {
    RelationalDataset rd = scalar_data({1, 2, 3, 4}, {1, 2, 3, 4});
    RelNetModel model = identity_predictor();
    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 4;
    tc.learning_rate = 0.0;
    TrainReport r = train(model, rd, iota_idx(4), tc);
    CHECK(r.train_target_stats.mean == doctest::Approx(2.5));
    CHECK(r.train_target_stats.stddev == doctest::Approx(std::sqrt(1.25)));
}

TEST_CASE("evaluate_r2 reproduces the hand cases to 1e-12") {
    RelNetModel model = identity_predictor();

    // perfect predictions
    RelationalDataset perfect = scalar_data({0, 1, 2, 3}, {0, 1, 2, 3});
    EvalReport p = evaluate_r2(model, perfect, iota_idx(4));
    CHECK(std::fabs(p.r_squared - 1.0) <= 1e-12);
    CHECK(p.mae <= 1e-12);
    CHECK(p.n_samples == 4);

    // mean predictor: constant 1.5 against y = 0..3
    RelationalDataset mean_case = scalar_data({1.5, 1.5, 1.5, 1.5}, {0, 1, 2, 3});
    EvalReport m = evaluate_r2(model, mean_case, iota_idx(4));
    CHECK(std::fabs(m.r_squared - 0.0) <= 1e-12);

    // the 4-point case: SS_res 0.5, SS_tot 5
    RelationalDataset four = scalar_data({0.5, 1.0, 2.5, 3.0}, {0, 1, 2, 3});
    EvalReport f = evaluate_r2(model, four, iota_idx(4));
    CHECK(std::fabs(f.r_squared - 0.9) <= 1e-12);
    CHECK(f.mae == doctest::Approx(0.25)); // (0.5 + 0 + 0.5 + 0) / 4
}

TEST_CASE("r2_score matches a direct evaluation of the formula") {
    CHECK(std::fabs(r2_score({0, 1, 2, 3}, {0.5, 1.0, 2.5, 3.0}) - 0.9) <= 1e-12);
    CHECK_THROWS_AS(r2_score({1, 1, 1}, {1, 2, 3}), config_error); // constant targets
    CHECK_THROWS_AS(r2_score({1}, {1}), config_error);
}

TEST_CASE("evaluation never mutates the model and training never mutates the samples") {
    RelationalDataset rd = toy_data(20, 4, 1, 8);
    RelationalDataset copy = rd;
    ModelConfig mc = toy_model_config(4, 1);
    RelNetModel model(mc, 3);

    std::vector<std::vector<double>> params_before;
    for (std::size_t i = 0; i < model.params().count(); ++i)
        params_before.push_back(model.params().at(i).values);
    evaluate_r2(model, rd, iota_idx(20));
    for (std::size_t i = 0; i < model.params().count(); ++i)
        CHECK(model.params().at(i).values == params_before[i]);

    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.learning_rate = 1e-4;
    train(model, rd, iota_idx(20), tc);
    for (std::size_t i = 0; i < rd.samples.size(); ++i) {
        CHECK(rd.samples[i].x == copy.samples[i].x);
        CHECK(rd.samples[i].related == copy.samples[i].related);
        CHECK(rd.samples[i].y == copy.samples[i].y);
    }
}

TEST_CASE("a small model can memorize a tiny training set") {
    RelationalDataset rd = toy_data(16, 4, 1, 21);
    ModelConfig mc = toy_model_config(4, 1);
    mc.encoder_batchnorm = true;
    RelNetModel model(mc, 2);
    TrainConfig tc;
    tc.epochs = 400;
    tc.batch_size = 16;
    tc.learning_rate = 3e-4;
    tc.seed = 2;
    TrainReport r = train(model, rd, iota_idx(16), tc);
    REQUIRE(!r.diverged);
    EvalReport train_eval = evaluate_r2(model, rd, iota_idx(16));
    CHECK(train_eval.r_squared > 0.9);
    // monitored sanity only: report it, never fail on it
    MESSAGE("loss monotonicity fraction: ", loss_monotonicity_fraction(r));
}

TEST_CASE("run_ablation trains every cell on the same split with common-seed init") {
    RelationalDataset rd = toy_data(40, 4, 2, 31);
    Split split;
    split.split_day = 20;
    for (std::size_t i = 0; i < 40; ++i)
        (i < 28 ? split.train_idx : split.test_idx).push_back(i);

    ModelConfig base = toy_model_config(4, 2);
    std::vector<ModelConfig> arms;
    for (Variant v : {Variant::dnn, Variant::dnn_mtl, Variant::dnn_rn_mtl}) {
        ModelConfig mc = base;
        mc.variant = v;
        arms.push_back(mc);
    }
    // duplicate arm: cells must agree bitwise
    arms.push_back(arms.back());

    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 8;
    tc.learning_rate = 1e-4;
    AblationReport rep = run_ablation(rd, split, arms, tc, {0, 1}, 7, 2);

    REQUIRE(rep.cells.size() == 2);
    REQUIRE(rep.cells[0].size() == 4);
    for (std::size_t si = 0; si < 2; ++si) {
        CHECK(rep.cells[si][2].eval.r_squared == rep.cells[si][3].eval.r_squared);
        CHECK(rep.cells[si][2].final_train_loss == rep.cells[si][3].final_train_loss);
    }
    CHECK(rep.deltas.count("dnn_mtl-dnn") == 1);
    CHECK(rep.deltas.count("dnn_rn_mtl-dnn_mtl") == 1);
    CHECK(rep.mean_r2.size() == 3);
}

TEST_CASE("run_ablation is deterministic and thread-count independent") {
    RelationalDataset rd = toy_data(36, 4, 1, 41);
    Split split;
    split.split_day = 0;
    for (std::size_t i = 0; i < 36; ++i)
        (i < 24 ? split.train_idx : split.test_idx).push_back(i);

    ModelConfig base = toy_model_config(4, 1);
    std::vector<ModelConfig> arms;
    for (Variant v : {Variant::dnn, Variant::dnn_rn_mtl}) {
        ModelConfig mc = base;
        mc.variant = v;
        arms.push_back(mc);
    }
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 8;
    tc.learning_rate = 1e-4;

    AblationReport serial = run_ablation(rd, split, arms, tc, {0, 1, 2}, 7, 1);
    AblationReport threaded = run_ablation(rd, split, arms, tc, {0, 1, 2}, 7, 2);
    CHECK(strip_wall_clock(ablation_report_to_json(serial)) ==
          strip_wall_clock(ablation_report_to_json(threaded)));
}

TEST_CASE("a diverging arm is excluded from aggregation with a warning") {
    RelationalDataset rd = toy_data(30, 4, 1, 51);
    Split split;
    for (std::size_t i = 0; i < 30; ++i)
        (i < 20 ? split.train_idx : split.test_idx).push_back(i);

    ModelConfig base = toy_model_config(4, 1);
    base.variant = Variant::dnn;
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 8;
    tc.learning_rate = 10.0; // diverges
    AblationReport rep = run_ablation(rd, split, {base}, tc, {0, 1}, 7, 1);
    CHECK(!rep.warnings.empty());
    CHECK(rep.mean_r2.count("dnn") == 0);
    CHECK(rep.cells[0][0].diverged);
}

TEST_CASE("the rendered table carries the canonical column order and a signed delta row") {
    RelationalDataset rd = toy_data(30, 4, 1, 61);
    Split split;
    for (std::size_t i = 0; i < 30; ++i)
        (i < 20 ? split.train_idx : split.test_idx).push_back(i);
    ModelConfig base = toy_model_config(4, 1);
    std::vector<ModelConfig> arms;
    for (Variant v : {Variant::dnn, Variant::dnn_mtl, Variant::dnn_rn_mtl}) {
        ModelConfig mc = base;
        mc.variant = v;
        arms.push_back(mc);
    }
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.learning_rate = 1e-4;
    AblationReport rep = run_ablation(rd, split, arms, tc, {0}, 7, 1);
    std::string table = render_ablation_table({rep});
    auto p_dnn = table.find("DNN");
    auto p_mtl = table.find("DNN+MTL");
    auto p_rn = table.find("DNN+RN+MTL");
    REQUIRE(p_dnn != std::string::npos);
    REQUIRE(p_mtl != std::string::npos);
    REQUIRE(p_rn != std::string::npos);
    CHECK(p_dnn < p_mtl);
    CHECK(p_mtl < p_rn);
    CHECK(table.find("delta") != std::string::npos);
    CHECK((table.find('+') != std::string::npos || table.find('-') != std::string::npos));
    CHECK(table.find("7 days") != std::string::npos);
}
