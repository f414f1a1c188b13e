// Acceptance suite: one line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "json.hpp"
#include "relnet/ablation.hpp"
#include "relnet/checkpoint.hpp"
#include "relnet/gradcheck_fixtures.hpp"
#include "relnet/market.hpp"
#include "relnet/train.hpp"

using namespace relnet;
using nlohmann::json;

namespace {

int failures = 0;

double now_seconds() {
    static auto start = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void report(int id, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
    std::printf("%s  %d %-22s (%.1fs)  %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), seconds,
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double elapsed() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

int run_cli(const std::string& args, std::string* output = nullptr) {
    std::string cmd = std::string(RELNET_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return -1;
    char buf[4096];
    std::string out;
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) out.append(buf, n);
    int status = pclose(pipe);
    if (output) *output = out;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
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

char fmt_buf[256];
const char* fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    std::snprintf(fmt_buf, sizeof(fmt_buf), pattern, a, b, c);
    return fmt_buf;
}

// ---- criterion 1: gradient fidelity through the CLI ----

void criterion_gradient_fidelity() {
    Timer t;
    std::string out;
    int code = run_cli("gradcheck --tolerance 1e-4 --step 1e-5", &out);
    double secs = t.elapsed();
    bool pass = code == 0 && secs < 60.0;
    std::string detail = code == 0 ? "all layer types and the composed model under 1e-4"
                                   : "gradcheck exit code " + std::to_string(code);
    if (secs >= 60.0) detail += " (over the 1 minute budget)";
    report(1, "gradient-fidelity", pass, detail, secs);
}

// ---- criterion 2: permutation invariance over 100 random models ----

double rel_diff(const Matrix& a, const Matrix& b) {
    double scale = 1.0, diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max(scale, std::fabs(a.data()[i]));
        diff = std::max(diff, std::fabs(a.data()[i] - b.data()[i]));
    }
    return diff / scale;
}

void criterion_permutation_invariance() {
    Timer t;
    double worst_anchored = 0.0, worst_allpairs = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        ModelConfig mc;
        mc.input_dim = 5;
        mc.n_related = 3;
        mc.encoder_depth = 2;
        mc.encoder_width = 8;
        mc.repr_dim = 6;
        mc.relation_depth = 2;
        mc.relation_width = 6;
        mc.aggregate_depth = 2;
        mc.aggregate_width = 6;
        mc.head_depth = 2;
        mc.head_width = 6;
        mc.dropout_keep = 1.0;
        RelNetModel anchored(mc, seed);
        ModelConfig mc2 = mc;
        mc2.rn_mode = RnMode::all_pairs;
        RelNetModel allpairs(mc2, seed);

        RngStream rng(derive_seed(seed, "inputs"));
        Batch b;
        b.x = Matrix(2, 5);
        for (double& v : b.x.data()) v = rng.normal();
        b.related.assign(3, Matrix(2, 5));
        for (auto& m : b.related)
            for (double& v : m.data()) v = rng.normal();
        b.y.assign(2, 0.0);
        b.y_aux.assign(2, 0.0);

        ModelCtx ctx;
        anchored.forward(b, Mode::infer, ctx);
        Matrix base = ctx.y_hat;
        Batch p = b;
        std::swap(p.related[0], p.related[2]);
        anchored.forward(p, Mode::infer, ctx);
        worst_anchored = std::max(worst_anchored, rel_diff(base, ctx.y_hat));
        std::rotate(p.related.begin(), p.related.begin() + 1, p.related.end());
        anchored.forward(p, Mode::infer, ctx);
        worst_anchored = std::max(worst_anchored, rel_diff(base, ctx.y_hat));

        allpairs.forward(b, Mode::infer, ctx);
        Matrix base_ap = ctx.y_hat;
        // permute all 4 objects, including the main slot
        Batch q = b;
        q.x = b.related[1];
        q.related[0] = b.related[2];
        q.related[1] = b.x;
        q.related[2] = b.related[0];
        allpairs.forward(q, Mode::infer, ctx);
        worst_allpairs = std::max(worst_allpairs, rel_diff(base_ap, ctx.y_hat));
        Batch q2 = b;
        std::swap(q2.x, q2.related[0]);
        allpairs.forward(q2, Mode::infer, ctx);
        worst_allpairs = std::max(worst_allpairs, rel_diff(base_ap, ctx.y_hat));
    }
    bool pass = worst_anchored < 1e-9 && worst_allpairs < 1e-9;
    report(2, "permutation-invariance", pass,
           fmt("worst anchored %.2e, worst all-pairs %.2e (bound 1e-9)", worst_anchored,
               worst_allpairs),
           t.elapsed());
}

// ---- criterion 3: R^2 oracle on the hand cases ----

void criterion_r2_oracle() {
    Timer t;
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
    RelNetModel model(mc, 0);
    model.params().find("encoder.l0.W")->values = {1.0};
    model.params().find("head_main.l0.W")->values = {1.0};

    auto scalar_data = [](std::vector<double> xs, std::vector<double> ys) {
        RelationalDataset rd;
        rd.input_dim = 1;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            RelationalSample s;
            s.x = {xs[i]};
            s.y = ys[i];
            rd.samples.push_back(s);
            rd.release_days.push_back(static_cast<int>(i));
        }
        return rd;
    };
    std::vector<std::size_t> idx = {0, 1, 2, 3};

    RelationalDataset perfect = scalar_data({0, 1, 2, 3}, {0, 1, 2, 3});
    double e1 = std::fabs(evaluate_r2(model, perfect, idx).r_squared - 1.0);
    RelationalDataset mean_case = scalar_data({1.5, 1.5, 1.5, 1.5}, {0, 1, 2, 3});
    double e2 = std::fabs(evaluate_r2(model, mean_case, idx).r_squared - 0.0);
    RelationalDataset four = scalar_data({0.5, 1.0, 2.5, 3.0}, {0, 1, 2, 3});
    double e3 = std::fabs(evaluate_r2(model, four, idx).r_squared - 0.9);

    bool pass = e1 <= 1e-12 && e2 <= 1e-12 && e3 <= 1e-12;
    report(3, "r2-oracle", pass,
           fmt("perfect off by %.1e, mean by %.1e, 4-point by %.1e (bound 1e-12)", e1, e2, e3),
           t.elapsed());
}

// ---- criterion 4: MTL degeneracy at lambda 0 ----

void criterion_mtl_degeneracy() {
    Timer t;
    ModelConfig mtl;
    mtl.input_dim = 6;
    mtl.n_related = 0;
    mtl.encoder_depth = 4;
    mtl.encoder_width = 10;
    mtl.repr_dim = 8;
    mtl.head_depth = 2;
    mtl.head_width = 8;
    mtl.variant = Variant::dnn_mtl;
    mtl.lambda_aux = 0.0;
    mtl.gamma_l2 = 0.0;
    mtl.dropout_keep = 1.0; // stochastic layers off
    ModelConfig plain = mtl;
    plain.variant = Variant::dnn;

    RelNetModel a(mtl, 42), b(plain, 42);
    RngStream rng(17);
    Batch batch;
    batch.x = Matrix(6, 6);
    for (double& v : batch.x.data()) v = rng.normal();
    batch.y.resize(6);
    batch.y_aux.resize(6);
    for (auto& v : batch.y) v = rng.normal();
    for (auto& v : batch.y_aux) v = rng.normal();

    ModelCtx ctx;
    a.loss(batch, Mode::train, ctx);
    a.backward(batch, ctx);
    b.loss(batch, Mode::train, ctx);
    b.backward(batch, ctx);

    double worst = 0.0;
    for (std::size_t i = 0; i < b.params().count(); ++i) {
        const ParamTensor& t2 = b.params().at(i);
        const ParamTensor* other = a.params().find(t2.name);
        if (!other) continue;
        for (std::size_t j = 0; j < t2.size(); ++j)
            worst = std::max(worst, std::fabs(t2.grads[j] - other->grads[j]));
    }
    report(4, "mtl-degeneracy", worst <= 1e-12,
           fmt("worst shared/main-head grad gap %.2e (bound 1e-12)", worst), t.elapsed());
}

// ---- criterion 5: memorization capacity ----

void criterion_memorization() {
    Timer t;
    GeneratorConfig gc;
    gc.num_series = 200;
    gc.horizon_days = 200;
    gc.seed = 5;
    MarketDataset ds = generate_market(gc);
    RelationalDataset rd = build_relational_dataset(ds, 3);
    std::vector<std::size_t> idx(32);
    for (std::size_t i = 0; i < 32; ++i) idx[i] = i;

    int succeeded = 0;
    std::size_t epochs_used = 0;
    for (std::uint64_t seed : {0, 1, 2}) {
        ModelConfig mc;
        mc.input_dim = ds.encoder.input_dim();
        mc.n_related = 3;
        mc.encoder_depth = 4;
        mc.encoder_width = 32;
        mc.repr_dim = 16;
        mc.relation_depth = 3;
        mc.relation_width = 16;
        mc.aggregate_depth = 3;
        mc.aggregate_width = 16;
        mc.head_depth = 2;
        mc.head_width = 16;
        mc.lambda_aux = 0.3;
        mc.gamma_l2 = 0.0;
        mc.dropout_keep = 1.0;
        RelNetModel model(mc, seed);

        bool hit = false;
        std::size_t chunk = 250, total = 0;
        while (total < 2000) {
            TrainConfig tc;
            tc.epochs = chunk;
            tc.batch_size = 32;
            tc.learning_rate = 1e-4;
            tc.seed = seed + 100 * total;
            TrainReport tr = train(model, rd, idx, tc);
            total += chunk;
            if (tr.diverged) break;
            EvalReport er = evaluate_r2(model, rd, idx);
            if (er.r_squared >= 0.99) {
                hit = true;
                break;
            }
        }
        epochs_used = std::max(epochs_used, total);
        if (hit) ++succeeded;
    }
    double secs = t.elapsed();
    bool pass = succeeded >= 2 && secs < 300.0;
    report(5, "memorization", pass,
           fmt("train R^2 >= 0.99 for %g of 3 seeds within %g epochs (need 2)",
               static_cast<double>(succeeded), static_cast<double>(epochs_used)),
           secs);
}

// ---- criteria 6 and 7: the ablation and its null control ----

std::vector<ModelConfig> ablation_arms(std::size_t input_dim, std::vector<Variant> variants) {
    std::vector<ModelConfig> arms;
    for (Variant v : variants) {
        ModelConfig mc; // defaults: widths 64/32, lambda 0.5, gamma 0.03, keep 0.85
        mc.input_dim = input_dim;
        mc.encoder_depth = 6; // scaled down from 15 for desk runtime
        mc.variant = v;
        arms.push_back(mc);
    }
    return arms;
}

TrainConfig ablation_train_config() {
    TrainConfig tc;
    tc.epochs = 400;
    tc.batch_size = 64;
    tc.learning_rate = 2e-5;
    tc.momentum_coeff = 0.9;
    return tc;
}

void criterion_ablation_ordering() {
    Timer t;
    GeneratorConfig gc; // the default market: 2500 series, planted competition
    MarketDataset ds = generate_market(gc);
    RelationalDataset rd = build_relational_dataset(ds, 3);
    Split split = temporal_split(ds, 1095);
    AblationReport rep =
        run_ablation(rd, split, ablation_arms(ds.encoder.input_dim(),
                                              {Variant::dnn, Variant::dnn_mtl, Variant::dnn_rn_mtl}),
                     ablation_train_config(), {0, 1, 2}, 7);
    double secs = t.elapsed();
    bool have = rep.mean_r2.count("dnn") && rep.mean_r2.count("dnn_mtl") &&
                rep.mean_r2.count("dnn_rn_mtl");
    double d1 = have ? rep.mean_r2["dnn_mtl"] - rep.mean_r2["dnn"] : -1.0;
    double d2 = have ? rep.mean_r2["dnn_rn_mtl"] - rep.mean_r2["dnn_mtl"] : -1.0;
    bool pass = have && d1 >= 0.01 && d2 >= 0.01 && secs < 1800.0;
    std::string detail =
        have ? fmt("mean R^2 %.3f / %.3f / %.3f", rep.mean_r2["dnn"], rep.mean_r2["dnn_mtl"],
                   rep.mean_r2["dnn_rn_mtl"])
             : "an arm diverged on every seed";
    if (have) detail += fmt("; deltas +%.3f, +%.3f (need >= 0.01 each)", d1, d2);
    report(6, "ablation-ordering", pass, detail, secs);
}

void criterion_null_structure() {
    Timer t;
    GeneratorConfig gc;
    gc.competition_strength = 0.0;
    MarketDataset ds = generate_market(gc);
    RelationalDataset rd = build_relational_dataset(ds, 3);
    Split split = temporal_split(ds, 1095);
    AblationReport rep = run_ablation(
        rd, split, ablation_arms(ds.encoder.input_dim(), {Variant::dnn_mtl, Variant::dnn_rn_mtl}),
        ablation_train_config(), {0, 1, 2, 3, 4}, 7);
    bool have = rep.mean_r2.count("dnn_mtl") && rep.mean_r2.count("dnn_rn_mtl");
    double delta = have ? rep.mean_r2["dnn_rn_mtl"] - rep.mean_r2["dnn_mtl"] : 1.0;
    bool pass = have && delta < 0.02;
    report(7, "null-structure", pass,
           have ? fmt("RN minus MTL on a no-competition market: %+.3f (bound < 0.02)", delta)
                : "an arm diverged on every seed",
           t.elapsed());
}

// ---- criterion 8: CLI-level determinism of the ablation report ----

void criterion_determinism() {
    Timer t;
    std::string ds = "acc_det.jsonl";
    int g = run_cli("generate --num-series 120 --horizon-days 300 --seed 13 --out " + ds);
    std::string args = "ablate --dataset " + ds +
                       " --seeds 0,1 --epochs 3 --batch-size 16 --encoder-depth 2 "
                       "--encoder-width 8 --repr-dim 8 --relation-depth 2 --relation-width 8 "
                       "--aggregate-depth 2 --aggregate-width 8 --head-depth 2 --head-width 8 "
                       "--split-day 200";
    args += " --report acc_det.json";
    int a = run_cli(args);
    std::string first = slurp("acc_det.json");
    int b = run_cli(args);
    std::string second = slurp("acc_det.json");
    bool pass = false;
    std::string detail = "ablate could not run";
    if (g == 0 && a == 0 && b == 0) {
        json ja = strip_wall_clock(json::parse(first));
        json jb = strip_wall_clock(json::parse(second));
        pass = ja == jb;
        detail = pass ? "two ablate runs agree byte for byte outside wall-clock fields"
                      : "reports differ beyond wall-clock fields";
    }
    for (const char* f : {"acc_det.jsonl", "acc_det.json", "acc_det.txt"}) std::remove(f);
    report(8, "determinism", pass, detail, t.elapsed());
}

// ---- criterion 9: exact round-trips ----

void criterion_round_trip() {
    Timer t;
    GeneratorConfig gc;
    gc.num_series = 300;
    gc.horizon_days = 400;
    gc.seed = 23;
    MarketDataset ds = generate_market(gc);
    save_dataset(ds, "acc_rt.jsonl");
    MarketDataset loaded = load_dataset("acc_rt.jsonl");
    std::remove("acc_rt.jsonl");
    bool ds_ok = loaded.records == ds.records;

    // a briefly trained model exercises parameters and running stats
    RelationalDataset rd = build_relational_dataset(ds, 2);
    ModelConfig mc;
    mc.input_dim = ds.encoder.input_dim();
    mc.n_related = 2;
    mc.encoder_depth = 3;
    mc.encoder_width = 12;
    mc.repr_dim = 8;
    mc.relation_depth = 2;
    mc.relation_width = 8;
    mc.aggregate_depth = 2;
    mc.aggregate_width = 8;
    mc.head_depth = 2;
    mc.head_width = 8;
    RelNetModel model(mc, 3);
    std::vector<std::size_t> idx(64);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 16;
    tc.learning_rate = 1e-5;
    train(model, rd, idx, tc);

    save_checkpoint(model, "acc_rt.ckpt.json");
    RelNetModel restored = load_checkpoint("acc_rt.ckpt.json");
    std::remove("acc_rt.ckpt.json");
    bool ckpt_ok = true;
    for (std::size_t i = 0; i < model.params().count(); ++i) {
        const ParamTensor& p = model.params().at(i);
        ckpt_ok = ckpt_ok && restored.params().find(p.name)->values == p.values;
    }
    auto bn_a = model.batchnorm_layers();
    auto bn_b = restored.batchnorm_layers();
    for (std::size_t i = 0; i < bn_a.size(); ++i) {
        ckpt_ok = ckpt_ok && bn_a[i]->running_mean == bn_b[i]->running_mean;
        ckpt_ok = ckpt_ok && bn_a[i]->running_var == bn_b[i]->running_var;
    }
    Batch batch = make_batch(rd.samples, idx, 2);
    ModelCtx c1, c2;
    model.forward(batch, Mode::infer, c1);
    restored.forward(batch, Mode::infer, c2);
    ckpt_ok = ckpt_ok && c1.y_hat == c2.y_hat;

    report(9, "round-trip", ds_ok && ckpt_ok,
           std::string(ds_ok ? "dataset exact" : "dataset MISMATCH") +
               (ckpt_ok ? ", checkpoint exact" : ", checkpoint MISMATCH"),
           t.elapsed());
}

} // namespace

int main() {
    std::printf("acceptance suite\n");
    criterion_gradient_fidelity();
    criterion_permutation_invariance();
    criterion_r2_oracle();
    criterion_mtl_degeneracy();
    criterion_memorization();
    criterion_ablation_ordering();
    criterion_null_structure();
    criterion_determinism();
    criterion_round_trip();
    std::printf("%s (%d of 9 criteria failed, %.1fs total)\n", failures == 0 ? "OK" : "FAILED",
                failures, now_seconds());
    return failures == 0 ? 0 : 1;
}
