#include <cstdio>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "relnet/ablation.hpp"
#include "relnet/checkpoint.hpp"
#include "relnet/gradcheck_fixtures.hpp"
#include "relnet/market.hpp"
#include "relnet/runconfig.hpp"
#include "relnet/train.hpp"

using namespace relnet;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitGradcheck = 5;

// The merged option space: generator + model + training + paths + command
// specifics. Precedence is flag > config file > built-in default.
struct Options {
    GeneratorConfig gen;
    ModelConfig model;
    TrainConfig train;

    std::string variant = variant_name(ModelConfig{}.variant);
    std::string rn_mode = rn_mode_name(ModelConfig{}.rn_mode);

    std::uint64_t seed = 0;
    std::string config_path;
    std::string dataset_path;
    std::string checkpoint_path = "model.ckpt.json";
    std::string report_path;
    std::string out_path;

    int split_day = 1095;
    int offset = 7;
    std::string seeds = "0,1,2";
    std::string offsets;
    double tolerance = 1e-4;
    double fd_step = 1e-5;
    std::string layer = "all";
};

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "num_series", "horizon_days", "genre_cardinality", "director_cardinality",
        "actor_cardinality", "competition_strength", "competition_window_days", "noise_std",
        "aux_noise_std", "seed",
        "variant", "rn_mode", "n_related", "encoder_depth", "encoder_width", "repr_dim",
        "relation_depth", "relation_width", "aggregate_depth", "aggregate_width", "head_depth",
        "head_width", "lambda_aux", "gamma_l2", "dropout_keep", "encoder_batchnorm",
        "block_batchnorm",
        "epochs", "batch_size", "learning_rate", "momentum_coeff", "shuffle",
        "divergence_threshold",
        "dataset", "checkpoint", "report", "out",
        "split_day", "offset", "seeds", "offsets", "tolerance", "step", "layer"};
    return keys;
}

// Binds one option key to a CLI flag handle and a target; applies the config
// file value only when the flag was not given.
class Merger {
public:
    explicit Merger(CLI::App* cmd) : cmd_(cmd) {}

    template <class T>
    void bind(T& target, const std::string& key, const std::string& flag,
              const std::string& help) {
        CLI::Option* opt = cmd_->add_option(flag, target, help);
        appliers_.push_back([&target, key, opt](const KeyValueFile& file) {
            if (opt->count() > 0 || !file.has(key)) return;
            target = file.get<T>(key);
        });
        echoers_.push_back([&target, key](json& j) { j[key] = target; });
    }

    void apply_file(const KeyValueFile& file) {
        for (auto& f : appliers_) f(file);
    }

    json effective_config() const {
        json j;
        for (auto& e : echoers_) e(j);
        return j;
    }

private:
    CLI::App* cmd_;
    std::vector<std::function<void(const KeyValueFile&)>> appliers_;
    std::vector<std::function<void(json&)>> echoers_;
};

void bind_generator(Merger& m, Options& o) {
    m.bind(o.gen.num_series, "num_series", "--num-series", "number of series to generate");
    m.bind(o.gen.horizon_days, "horizon_days", "--horizon-days", "day range of the catalog");
    m.bind(o.gen.genre_cardinality, "genre_cardinality", "--genre-cardinality", "genre vocabulary size");
    m.bind(o.gen.director_cardinality, "director_cardinality", "--director-cardinality", "director vocabulary size");
    m.bind(o.gen.actor_cardinality, "actor_cardinality", "--actor-cardinality", "lead actor vocabulary size");
    m.bind(o.gen.competition_strength, "competition_strength", "--competition-strength", "audience pressure from overlapping releases");
    m.bind(o.gen.competition_window_days, "competition_window_days", "--competition-window-days", "day window of competitive overlap");
    m.bind(o.gen.noise_std, "noise_std", "--noise-std", "log view-count noise");
    m.bind(o.gen.aux_noise_std, "aux_noise_std", "--aux-noise-std", "popularity index noise");
}

void bind_model(Merger& m, Options& o) {
    m.bind(o.variant, "variant", "--variant", "dnn | dnn_mtl | dnn_rn_mtl");
    m.bind(o.rn_mode, "rn_mode", "--rn-mode", "anchored | all_pairs");
    m.bind(o.model.n_related, "n_related", "--n-related", "related objects per sample");
    m.bind(o.model.encoder_depth, "encoder_depth", "--encoder-depth", "encoder layer count");
    m.bind(o.model.encoder_width, "encoder_width", "--encoder-width", "encoder hidden width");
    m.bind(o.model.repr_dim, "repr_dim", "--repr-dim", "object representation width");
    m.bind(o.model.relation_depth, "relation_depth", "--relation-depth", "relation MLP depth");
    m.bind(o.model.relation_width, "relation_width", "--relation-width", "relation MLP width");
    m.bind(o.model.aggregate_depth, "aggregate_depth", "--aggregate-depth", "aggregator MLP depth");
    m.bind(o.model.aggregate_width, "aggregate_width", "--aggregate-width", "aggregator MLP width");
    m.bind(o.model.head_depth, "head_depth", "--head-depth", "task head depth");
    m.bind(o.model.head_width, "head_width", "--head-width", "task head width");
    m.bind(o.model.lambda_aux, "lambda_aux", "--lambda", "auxiliary loss weight");
    m.bind(o.model.gamma_l2, "gamma_l2", "--gamma", "l2 penalty coefficient");
    m.bind(o.model.dropout_keep, "dropout_keep", "--dropout-keep", "keep probability of encoder dropout");
    m.bind(o.model.encoder_batchnorm, "encoder_batchnorm", "--encoder-batchnorm", "batch norm in encoder hidden layers");
    m.bind(o.model.block_batchnorm, "block_batchnorm", "--block-batchnorm", "batch norm in relation/aggregator/head hidden layers");
}

void bind_train(Merger& m, Options& o) {
    m.bind(o.train.epochs, "epochs", "--epochs", "training epochs");
    m.bind(o.train.batch_size, "batch_size", "--batch-size", "mini-batch size");
    m.bind(o.train.learning_rate, "learning_rate", "--learning-rate", "momentum SGD learning rate");
    m.bind(o.train.momentum_coeff, "momentum_coeff", "--momentum", "momentum coefficient");
    m.bind(o.train.shuffle, "shuffle", "--shuffle", "shuffle training samples each epoch");
    m.bind(o.train.divergence_threshold, "divergence_threshold", "--divergence-threshold", "abort when the epoch loss crosses this");
}

KeyValueFile load_config_file(const Options& o) {
    if (o.config_path.empty()) return KeyValueFile{};
    return KeyValueFile::load(o.config_path, known_keys());
}

ModelConfig resolve_model_config(Options& o, std::size_t input_dim) {
    o.model.input_dim = input_dim;
    o.model.variant = variant_from_name(o.variant);
    o.model.rn_mode = rn_mode_from_name(o.rn_mode);
    o.model.validate();
    return o.model;
}

void write_report(const std::string& path, const json& doc) {
    if (path.empty()) return;
    write_file_atomic(path, doc.dump(2) + "\n");
}

std::string sibling_text_path(const std::string& json_path) {
    auto dot = json_path.rfind('.');
    if (dot == std::string::npos) return json_path + ".txt";
    return json_path.substr(0, dot) + ".txt";
}

int cmd_generate(Options& o, const Merger& m) {
    o.gen.seed = o.seed;
    o.gen.validate();
    if (o.out_path.empty()) throw config_error("generate: --out is required");
    MarketDataset ds = generate_market(o.gen);
    save_dataset(ds, o.out_path);

    double mean = 0.0, var = 0.0, lo = 1e300, hi = -1e300;
    for (const SeriesRecord& r : ds.records) {
        double y = std::log(r.view_count);
        mean += y;
        lo = std::min(lo, y);
        hi = std::max(hi, y);
    }
    mean /= static_cast<double>(ds.records.size());
    for (const SeriesRecord& r : ds.records) {
        double d = std::log(r.view_count) - mean;
        var += d * d;
    }
    var /= static_cast<double>(ds.records.size());
    std::printf("wrote %zu series to %s\n", ds.records.size(), o.out_path.c_str());
    std::printf("log view count: mean %.4f std %.4f min %.4f max %.4f\n", mean, std::sqrt(var), lo,
                hi);
    (void)m;
    return kExitOk;
}

int cmd_train(Options& o, const Merger& m) {
    MarketDataset ds = load_dataset(o.dataset_path);
    ModelConfig mc = resolve_model_config(o, ds.encoder.input_dim());
    RelationalDataset rd = build_relational_dataset(ds, mc.n_related, o.offset > 30);
    Split split = temporal_split(ds, o.split_day);

    RelNetModel model(mc, o.seed);
    TrainConfig tc = o.train;
    tc.seed = o.seed;
    TrainReport report = train(model, rd, split.train_idx, tc);

    json doc{{"effective_config", m.effective_config()},
             {"model_config", model_config_to_json(mc)},
             {"checkpoint", o.checkpoint_path},
             {"train", train_report_to_json(report)}};
    double mono = loss_monotonicity_fraction(report);
    if (mono < 0.9)
        std::fprintf(stderr,
                     "warning: training loss decreased in only %.0f%% of epoch transitions\n",
                     100.0 * mono);
    if (!report.diverged) {
        save_checkpoint(model, o.checkpoint_path);
        EvalReport eval = evaluate_r2(model, rd, split.test_idx, o.offset);
        doc["eval"] = eval_report_to_json(eval);
        write_report(o.report_path, doc);
        std::printf("final train loss %.6f\n", report.epoch_losses.back().total);
        std::printf("test R^2 %.6f on %zu samples\n", eval.r_squared, eval.n_samples);
        return kExitOk;
    }
    write_report(o.report_path, doc);
    std::fprintf(stderr, "training diverged at epoch %zu\n", report.diverged_epoch);
    return kExitDivergence;
}

int cmd_eval(Options& o, const Merger& m) {
    RelNetModel model = load_checkpoint(o.checkpoint_path);
    MarketDataset ds = load_dataset(o.dataset_path);
    if (model.config().input_dim != ds.encoder.input_dim())
        throw config_error("eval: checkpoint input width " +
                           std::to_string(model.config().input_dim) + " vs dataset width " +
                           std::to_string(ds.encoder.input_dim()));
    RelationalDataset rd = build_relational_dataset(ds, model.config().n_related, o.offset > 30);
    Split split = temporal_split(ds, o.split_day);
    EvalReport eval = evaluate_r2(model, rd, split.test_idx, o.offset);
    json doc{{"effective_config", m.effective_config()}, {"eval", eval_report_to_json(eval)}};
    write_report(o.report_path, doc);
    std::printf("test R^2 %.6f on %zu samples\n", eval.r_squared, eval.n_samples);
    return kExitOk;
}

int cmd_ablate(Options& o, const Merger& m) {
    MarketDataset ds = load_dataset(o.dataset_path);
    std::vector<std::uint64_t> seeds = parse_int_list<std::uint64_t>(o.seeds, "seeds");
    std::vector<int> offsets;
    if (!o.offsets.empty())
        offsets = parse_int_list<int>(o.offsets, "offsets");
    else
        offsets = {o.offset};

    ModelConfig base = resolve_model_config(o, ds.encoder.input_dim());
    std::vector<ModelConfig> arms;
    for (Variant v : {Variant::dnn, Variant::dnn_mtl, Variant::dnn_rn_mtl}) {
        ModelConfig mc = base;
        mc.variant = v;
        arms.push_back(mc);
    }
    Split split = temporal_split(ds, o.split_day);

    std::vector<AblationReport> scenarios;
    bool any_divergence = false;
    for (int offset : offsets) {
        RelationalDataset rd = build_relational_dataset(ds, base.n_related, offset > 30);
        AblationReport rep = run_ablation(rd, split, arms, o.train, seeds, offset);
        any_divergence = any_divergence || !rep.warnings.empty();
        scenarios.push_back(std::move(rep));
    }

    json jscenarios = json::array();
    for (const AblationReport& r : scenarios) jscenarios.push_back(ablation_report_to_json(r));
    json doc{{"effective_config", m.effective_config()}, {"scenarios", jscenarios}};
    std::string table = render_ablation_table(scenarios);
    if (!o.report_path.empty()) {
        write_report(o.report_path, doc);
        write_file_atomic(sibling_text_path(o.report_path), table);
    }
    std::fputs(table.c_str(), stdout);
    return any_divergence ? kExitDivergence : kExitOk;
}

struct NamedCheck {
    std::string name;
    GradCheckReport report;
};

int cmd_gradcheck(Options& o, const Merger& m) {
    (void)m;
    std::vector<NamedCheck> checks;
    auto want = [&](const std::string& name) { return o.layer == "all" || o.layer == name; };
    std::uint64_t seed = o.seed;

    if (want("dense")) {
        ParamStore store;
        MlpOptions opt;
        opt.dims = {4, 3};
        opt.hidden_relu = false;
        MlpBlock block = make_mlp(store, "dense", opt, derive_seed(seed, "dense"));
        checks.push_back({"dense", check_block(store, block, 4, o.fd_step, seed)});
    }
    if (want("relu")) {
        ParamStore store;
        MlpOptions opt;
        opt.dims = {4, 6, 3};
        MlpBlock block = make_mlp(store, "relu", opt, derive_seed(seed, "relu"));
        checks.push_back({"relu", check_block(store, block, 4, o.fd_step, seed)});
    }
    if (want("batchnorm")) {
        ParamStore store;
        MlpOptions opt;
        opt.dims = {4, 6, 3};
        opt.hidden_batchnorm = true;
        MlpBlock block = make_mlp(store, "batchnorm", opt, derive_seed(seed, "bn"));
        checks.push_back({"batchnorm", check_block(store, block, 4, o.fd_step, seed)});
    }
    if (want("dropout")) {
        ParamStore store;
        MlpOptions opt;
        opt.dims = {4, 6, 3};
        opt.dropout_keep = 0.7;
        MlpBlock block = make_mlp(store, "dropout", opt, derive_seed(seed, "dropout"));
        block.set_dropout_trial(11);
        checks.push_back({"dropout", check_block(store, block, 4, o.fd_step, seed)});
    }
    if (want("mlp")) {
        ParamStore store;
        MlpOptions opt;
        opt.dims = {5, 8, 6, 2};
        opt.hidden_batchnorm = true;
        opt.dropout_keep = 0.8;
        MlpBlock block = make_mlp(store, "mlp", opt, derive_seed(seed, "mlp"));
        block.set_dropout_trial(7);
        checks.push_back({"mlp", check_block(store, block, 4, o.fd_step, seed)});
    }
    if (want("model")) {
        checks.push_back({"model", check_full_model(o.fd_step, seed)});
    }
    if (checks.empty())
        throw config_error("gradcheck: unknown --layer '" + o.layer +
                           "' (dense | relu | batchnorm | dropout | mlp | model | all)");

    bool ok = true;
    for (const NamedCheck& c : checks) {
        bool pass = c.report.pass(o.tolerance);
        ok = ok && pass;
        std::printf("%-10s %s  max error %.3e  (worst parameter %s)\n", c.name.c_str(),
                    pass ? "pass" : "FAIL", c.report.worst_error, c.report.worst_param.c_str());
    }
    return ok ? kExitOk : kExitGradcheck;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"competitive-market popularity prediction with relation networks"};
    app.require_subcommand(1);
    Options o;

    auto add_shared = [&](CLI::App* cmd, Merger& m) {
        cmd->add_option("--config", o.config_path, "key = value config file");
        m.bind(o.seed, "seed", "--seed", "master seed");
        m.bind(o.out_path, "out", "--out", "output path");
    };

    CLI::App* generate = app.add_subcommand("generate", "write a synthetic market dataset");
    Merger mg(generate);
    add_shared(generate, mg);
    bind_generator(mg, o);

    CLI::App* train_cmd = app.add_subcommand("train", "train one variant on a dataset");
    Merger mt(train_cmd);
    add_shared(train_cmd, mt);
    bind_model(mt, o);
    bind_train(mt, o);
    mt.bind(o.dataset_path, "dataset", "--dataset", "dataset file");
    mt.bind(o.checkpoint_path, "checkpoint", "--checkpoint", "checkpoint output path");
    mt.bind(o.report_path, "report", "--report", "report JSON output path");
    mt.bind(o.split_day, "split_day", "--split-day", "temporal split day");
    mt.bind(o.offset, "offset", "--offset", "days before release the prediction is made");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    Merger me(eval_cmd);
    add_shared(eval_cmd, me);
    me.bind(o.dataset_path, "dataset", "--dataset", "dataset file");
    me.bind(o.checkpoint_path, "checkpoint", "--checkpoint", "checkpoint to evaluate");
    me.bind(o.report_path, "report", "--report", "report JSON output path");
    me.bind(o.split_day, "split_day", "--split-day", "temporal split day");
    me.bind(o.offset, "offset", "--offset", "days before release the prediction is made");

    CLI::App* ablate = app.add_subcommand("ablate", "train and compare the three variants");
    Merger ma(ablate);
    add_shared(ablate, ma);
    bind_model(ma, o);
    bind_train(ma, o);
    ma.bind(o.dataset_path, "dataset", "--dataset", "dataset file");
    ma.bind(o.report_path, "report", "--report", "report JSON output path");
    ma.bind(o.split_day, "split_day", "--split-day", "temporal split day");
    ma.bind(o.seeds, "seeds", "--seeds", "comma-separated seed list");
    ma.bind(o.offsets, "offsets", "--offsets", "comma-separated day offsets (rows of the grid)");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    Merger mch(gradcheck);
    add_shared(gradcheck, mch);
    mch.bind(o.tolerance, "tolerance", "--tolerance", "max relative error accepted");
    mch.bind(o.fd_step, "step", "--step", "central difference step");
    mch.bind(o.layer, "layer", "--layer", "dense | relu | batchnorm | dropout | mlp | model | all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        KeyValueFile file = load_config_file(o);
        if (generate->parsed()) {
            mg.apply_file(file);
            return cmd_generate(o, mg);
        }
        if (train_cmd->parsed()) {
            mt.apply_file(file);
            return cmd_train(o, mt);
        }
        if (eval_cmd->parsed()) {
            me.apply_file(file);
            return cmd_eval(o, me);
        }
        if (ablate->parsed()) {
            ma.apply_file(file);
            return cmd_ablate(o, ma);
        }
        if (gradcheck->parsed()) {
            mch.apply_file(file);
            return cmd_gradcheck(o, mch);
        }
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const io_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    }
    return kExitConfig;
}
