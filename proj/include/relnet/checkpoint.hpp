#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "relnet/model.hpp"

namespace relnet {

using nlohmann::json;

inline json model_config_to_json(const ModelConfig& c) {
    return json{{"input_dim", c.input_dim},
                {"n_related", c.n_related},
                {"encoder_depth", c.encoder_depth},
                {"encoder_width", c.encoder_width},
                {"repr_dim", c.repr_dim},
                {"relation_depth", c.relation_depth},
                {"relation_width", c.relation_width},
                {"aggregate_depth", c.aggregate_depth},
                {"aggregate_width", c.aggregate_width},
                {"head_depth", c.head_depth},
                {"head_width", c.head_width},
                {"lambda_aux", c.lambda_aux},
                {"gamma_l2", c.gamma_l2},
                {"dropout_keep", c.dropout_keep},
                {"variant", variant_name(c.variant)},
                {"rn_mode", rn_mode_name(c.rn_mode)},
                {"encoder_batchnorm", c.encoder_batchnorm},
                {"block_batchnorm", c.block_batchnorm}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.n_related = j.at("n_related").get<std::size_t>();
    c.encoder_depth = j.at("encoder_depth").get<std::size_t>();
    c.encoder_width = j.at("encoder_width").get<std::size_t>();
    c.repr_dim = j.at("repr_dim").get<std::size_t>();
    c.relation_depth = j.at("relation_depth").get<std::size_t>();
    c.relation_width = j.at("relation_width").get<std::size_t>();
    c.aggregate_depth = j.at("aggregate_depth").get<std::size_t>();
    c.aggregate_width = j.at("aggregate_width").get<std::size_t>();
    c.head_depth = j.at("head_depth").get<std::size_t>();
    c.head_width = j.at("head_width").get<std::size_t>();
    c.lambda_aux = j.at("lambda_aux").get<double>();
    c.gamma_l2 = j.at("gamma_l2").get<double>();
    c.dropout_keep = j.at("dropout_keep").get<double>();
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.rn_mode = rn_mode_from_name(j.at("rn_mode").get<std::string>());
    c.encoder_batchnorm = j.at("encoder_batchnorm").get<bool>();
    c.block_batchnorm = j.at("block_batchnorm").get<bool>();
    return c;
}

// Writes a file atomically: temp sibling, then rename.
inline void write_file_atomic(const std::string& path, const std::string& contents) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot open '" + tmp + "' for writing");
        out << contents;
        if (!out) throw io_error("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("rename '" + tmp + "' -> '" + path + "': " + ec.message());
}

inline json checkpoint_to_json(RelNetModel& model) {
    json params = json::array();
    const ParamStore& store = model.params();
    for (std::size_t i = 0; i < store.count(); ++i) {
        const ParamTensor& t = store.at(i);
        params.push_back(json{{"name", t.name}, {"shape", t.shape}, {"values", t.values}});
    }
    json stats = json::array();
    for (BatchNormLayer* bn : model.batchnorm_layers())
        stats.push_back(json{{"name", bn->name}, {"mean", bn->running_mean}, {"var", bn->running_var}});
    json config = model_config_to_json(model.config());
    config["init_seed"] = model.init_seed();
    return json{{"config", config}, {"params", params}, {"running_stats", stats}};
}

inline void save_checkpoint(RelNetModel& model, const std::string& path) {
    write_file_atomic(path, checkpoint_to_json(model).dump(2) + "\n");
}

inline RelNetModel checkpoint_from_json(const json& doc) {
    ModelConfig cfg = model_config_from_json(doc.at("config"));
    std::uint64_t seed = doc.at("config").value("init_seed", std::uint64_t{0});
    RelNetModel model(cfg, seed);

    for (const json& p : doc.at("params")) {
        std::string name = p.at("name").get<std::string>();
        ParamTensor* t = model.params().find(name);
        if (!t) throw io_error("checkpoint parameter '" + name + "' does not exist in this model");
        auto shape = p.at("shape").get<std::vector<std::size_t>>();
        if (shape != t->shape)
            throw io_error("checkpoint parameter '" + name + "' has a different shape");
        auto values = p.at("values").get<std::vector<double>>();
        if (values.size() != t->size())
            throw io_error("checkpoint parameter '" + name + "' has wrong value count");
        t->values = std::move(values);
    }

    auto bns = model.batchnorm_layers();
    for (const json& s : doc.at("running_stats")) {
        std::string name = s.at("name").get<std::string>();
        BatchNormLayer* hit = nullptr;
        for (BatchNormLayer* bn : bns)
            if (bn->name == name) hit = bn;
        if (!hit) throw io_error("checkpoint running stats '" + name + "' have no matching layer");
        auto mean = s.at("mean").get<std::vector<double>>();
        auto var = s.at("var").get<std::vector<double>>();
        if (mean.size() != hit->dim() || var.size() != hit->dim())
            throw io_error("checkpoint running stats '" + name + "' have wrong width");
        hit->running_mean = std::move(mean);
        hit->running_var = std::move(var);
    }
    return model;
}

inline RelNetModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw io_error("checkpoint '" + path + "': " + e.what());
    }
    try {
        return checkpoint_from_json(doc);
    } catch (const json::exception& e) {
        throw io_error("checkpoint '" + path + "': " + e.what());
    }
}

} // namespace relnet
