#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "relnet/layers.hpp"
#include "relnet/matrix.hpp"
#include "relnet/optimizer.hpp"
#include "relnet/param.hpp"

namespace relnet {

enum class Variant { dnn, dnn_mtl, dnn_rn_mtl };
enum class RnMode { anchored, all_pairs };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::dnn: return "dnn";
        case Variant::dnn_mtl: return "dnn_mtl";
        case Variant::dnn_rn_mtl: return "dnn_rn_mtl";
    }
    return "?";
}

inline std::string variant_display_name(Variant v) {
    switch (v) {
        case Variant::dnn: return "DNN";
        case Variant::dnn_mtl: return "DNN+MTL";
        case Variant::dnn_rn_mtl: return "DNN+RN+MTL";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "dnn") return Variant::dnn;
    if (s == "dnn_mtl") return Variant::dnn_mtl;
    if (s == "dnn_rn_mtl") return Variant::dnn_rn_mtl;
    throw config_error("unknown variant '" + s + "' (expected dnn | dnn_mtl | dnn_rn_mtl)");
}

inline RnMode rn_mode_from_name(const std::string& s) {
    if (s == "anchored") return RnMode::anchored;
    if (s == "all_pairs") return RnMode::all_pairs;
    throw config_error("unknown rn_mode '" + s + "' (expected anchored | all_pairs)");
}

inline std::string rn_mode_name(RnMode m) {
    return m == RnMode::anchored ? "anchored" : "all_pairs";
}

struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t n_related = 3;
    std::size_t encoder_depth = 15;
    std::size_t encoder_width = 64;
    std::size_t repr_dim = 32;
    std::size_t relation_depth = 3;
    std::size_t relation_width = 32;
    std::size_t aggregate_depth = 3;
    std::size_t aggregate_width = 32;
    std::size_t head_depth = 2;
    std::size_t head_width = 32;
    double lambda_aux = 0.5;  // weight of the auxiliary task loss
    double gamma_l2 = 0.03;   // l2 penalty coefficient
    double dropout_keep = 0.85;
    Variant variant = Variant::dnn_rn_mtl;
    RnMode rn_mode = RnMode::anchored;
    bool encoder_batchnorm = true; // BN in encoder hidden layers (post-affine, pre-ReLU)
    bool block_batchnorm = true;   // BN in g/f/head hidden layers

    void validate() const {
        auto positive = [](std::size_t v, const char* field) {
            if (v == 0) throw config_error(std::string("ModelConfig: ") + field + " must be positive");
        };
        positive(input_dim, "input_dim");
        positive(encoder_depth, "encoder_depth");
        positive(encoder_width, "encoder_width");
        positive(repr_dim, "repr_dim");
        positive(relation_depth, "relation_depth");
        positive(relation_width, "relation_width");
        positive(aggregate_depth, "aggregate_depth");
        positive(aggregate_width, "aggregate_width");
        positive(head_depth, "head_depth");
        positive(head_width, "head_width");
        if (!std::isfinite(lambda_aux) || lambda_aux < 0.0)
            throw config_error("ModelConfig: lambda_aux must be finite and >= 0");
        if (!std::isfinite(gamma_l2) || gamma_l2 < 0.0)
            throw config_error("ModelConfig: gamma_l2 must be finite and >= 0");
        if (dropout_keep <= 0.0 || dropout_keep > 1.0)
            throw config_error("ModelConfig: dropout_keep must be in (0,1]");
        if (variant == Variant::dnn_rn_mtl && n_related < 1)
            throw config_error("ModelConfig: variant dnn_rn_mtl requires n_related >= 1");
    }
};

// One training example: main object features, n related-object features and
// the two targets (log view count, popularity index).
struct RelationalSample {
    std::vector<double> x;
    std::vector<std::vector<double>> related;
    double y = 0.0;
    double y_aux = 0.0;
};

// Column-stacked batch of samples.
struct Batch {
    Matrix x;                    // [B, input_dim]
    std::vector<Matrix> related; // n matrices of [B, input_dim]
    std::vector<double> y;
    std::vector<double> y_aux;

    std::size_t size() const { return x.rows(); }
};

template <class IndexRange>
inline Batch make_batch(const std::vector<RelationalSample>& samples, const IndexRange& idx,
                        std::size_t n_related) {
    Batch b;
    std::size_t rows = idx.size();
    if (rows == 0) throw config_error("make_batch: empty batch");
    std::size_t dim = samples[idx[0]].x.size();
    b.x = Matrix(rows, dim);
    b.related.assign(n_related, Matrix(rows, dim));
    b.y.resize(rows);
    b.y_aux.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const RelationalSample& s = samples[idx[r]];
        if (s.x.size() != dim) throw config_error("make_batch: inconsistent feature widths");
        if (s.related.size() < n_related)
            throw config_error("make_batch: sample has fewer related objects than requested");
        for (std::size_t j = 0; j < dim; ++j) b.x(r, j) = s.x[j];
        for (std::size_t i = 0; i < n_related; ++i)
            for (std::size_t j = 0; j < dim; ++j) b.related[i](r, j) = s.related[i][j];
        b.y[r] = s.y;
        b.y_aux[r] = s.y_aux;
    }
    return b;
}

struct Prediction {
    double y_hat = 0.0;
    double y_aux_hat = 0.0;
    std::vector<double> relation_vector; // representation the heads read
};

struct LossParts {
    double total = 0.0;
    double main = 0.0;
    double aux = 0.0; // unweighted auxiliary squared error; total = main + lambda*aux + reg
    double reg = 0.0;
};

// Everything one forward pass caches for the matching backward pass.
struct ModelCtx {
    Mode mode = Mode::train;
    bool valid = false;

    // The shared encoder runs once per step on the row-stacked object batch
    // [x; x_1; ...; x_n], and the relation block once on the row-stacked pair
    // batch, so batch normalization sees each population whole, in training
    // and at inference alike.
    BlockCache enc;
    BlockCache rel;
    BlockCache agg;
    BlockCache head_main;
    BlockCache head_aux;

    Matrix o;                // e(x)
    std::vector<Matrix> oi;  // e(x_i)
    Matrix repr;             // what the heads read (r for the RN variant, o otherwise)
    Matrix y_hat;            // [B,1]
    Matrix y_aux_hat;        // [B,1], empty for variant dnn

    // all-pairs bookkeeping: object index pairs and per-row orientation flips
    std::vector<std::pair<std::size_t, std::size_t>> pair_idx;
    std::vector<std::vector<std::uint8_t>> pair_flip;
};

// The composed network: shared encoder e, relation g, aggregator f and task
// heads h / h'. Variant dnn drops g, f and h'; dnn_mtl drops g and f.
class RelNetModel {
public:
    RelNetModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
        cfg_.validate();

        MlpOptions enc;
        enc.dims.push_back(cfg_.input_dim);
        for (std::size_t i = 0; i + 1 < cfg_.encoder_depth; ++i) enc.dims.push_back(cfg_.encoder_width);
        enc.dims.push_back(cfg_.repr_dim);
        enc.hidden_batchnorm = cfg_.encoder_batchnorm;
        enc.dropout_keep = cfg_.dropout_keep;
        encoder_ = make_mlp(store_, "encoder", enc, seed);

        if (has_rn()) {
            MlpOptions rel;
            rel.dims.push_back(2 * cfg_.repr_dim);
            for (std::size_t i = 0; i < cfg_.relation_depth; ++i) rel.dims.push_back(cfg_.relation_width);
            rel.hidden_batchnorm = cfg_.block_batchnorm;
            relation_ = make_mlp(store_, "relation", rel, seed);

            MlpOptions agg;
            agg.dims.push_back(cfg_.relation_width);
            for (std::size_t i = 0; i + 1 < cfg_.aggregate_depth; ++i) agg.dims.push_back(cfg_.aggregate_width);
            agg.dims.push_back(cfg_.repr_dim);
            agg.hidden_batchnorm = cfg_.block_batchnorm;
            aggregate_ = make_mlp(store_, "aggregate", agg, seed);
        }

        MlpOptions head;
        head.dims.push_back(cfg_.repr_dim);
        for (std::size_t i = 0; i + 1 < cfg_.head_depth; ++i) head.dims.push_back(cfg_.head_width);
        head.dims.push_back(1);
        head.hidden_batchnorm = cfg_.block_batchnorm;
        head_main_ = make_mlp(store_, "head_main", head, seed);
        if (has_aux()) head_aux_ = make_mlp(store_, "head_aux", head, seed);
    }

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t init_seed() const { return seed_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }

    bool has_rn() const { return cfg_.variant == Variant::dnn_rn_mtl; }
    bool has_aux() const { return cfg_.variant != Variant::dnn; }

    MlpBlock& encoder() { return encoder_; }
    MlpBlock& relation() { return relation_; }
    MlpBlock& aggregate_block() { return aggregate_; }
    MlpBlock& head_main() { return head_main_; }
    MlpBlock& head_aux() { return head_aux_; }

    void set_dropout_trial(std::uint64_t trial) {
        encoder_.set_dropout_trial(trial);
        relation_.set_dropout_trial(trial);
        aggregate_.set_dropout_trial(trial);
        head_main_.set_dropout_trial(trial);
        head_aux_.set_dropout_trial(trial);
    }

    // o = e(x). The same parameters encode the main and every related object;
    // the salt only decorrelates dropout masks between uses.
    Matrix encode(const Matrix& x, Mode mode, BlockCache& cache, std::uint64_t salt = 0) {
        if (x.cols() != cfg_.input_dim)
            throw config_error("encode: input width " + std::to_string(x.cols()) +
                               ", expected " + std::to_string(cfg_.input_dim));
        return encoder_.forward(x, mode, cache, salt);
    }

    // r_i = g([o | o_i])
    Matrix relation_pair(const Matrix& o, const Matrix& o_i, Mode mode, BlockCache& cache) {
        if (o.cols() != cfg_.repr_dim || o_i.cols() != cfg_.repr_dim)
            throw config_error("relation_pair: representation width mismatch");
        return relation_.forward(hconcat(o, o_i), mode, cache);
    }

    // r = f(sum_i r_i), elementwise sum in index order.
    Matrix aggregate_relations(const std::vector<Matrix>& r_list, Mode mode, BlockCache& cache,
                               Matrix* sum_out = nullptr) {
        if (r_list.empty())
            throw config_error("aggregate_relations: empty relation list");
        Matrix sum = r_list[0];
        for (std::size_t i = 1; i < r_list.size(); ++i) add_inplace(sum, r_list[i]);
        if (sum_out) *sum_out = sum;
        return aggregate_.forward(sum, mode, cache);
    }

    // Original all-pairs form: f(sum over unordered pairs of g(o_i, o_j)).
    // Each pair is presented to g with its two members in lexicographic order
    // of their feature values, so the output does not depend on how the
    // object list happens to be ordered.
    Matrix aggregate_all_pairs(std::vector<Matrix> objects, Mode mode, ModelCtx& ctx) {
        if (objects.size() < 2)
            throw config_error("aggregate_all_pairs: need at least 2 objects");
        std::size_t b = objects[0].rows();
        ctx.pair_idx.clear();
        ctx.pair_flip.clear();
        for (std::size_t i = 0; i < objects.size(); ++i)
            for (std::size_t j = i + 1; j < objects.size(); ++j) ctx.pair_idx.emplace_back(i, j);
        std::size_t n_pairs = ctx.pair_idx.size();
        Matrix pairs(n_pairs * b, 2 * cfg_.repr_dim);
        ctx.pair_flip.assign(n_pairs, std::vector<std::uint8_t>(b, 0));
        for (std::size_t p = 0; p < n_pairs; ++p) {
            auto [i, j] = ctx.pair_idx[p];
            for (std::size_t r = 0; r < b; ++r) {
                const double* a = objects[i].row(r);
                const double* c = objects[j].row(r);
                bool swap = lex_greater(a, c, cfg_.repr_dim);
                ctx.pair_flip[p][r] = swap ? 1 : 0;
                const double* lo = swap ? c : a;
                const double* hi = swap ? a : c;
                double* row = pairs.row(p * b + r);
                for (std::size_t k = 0; k < cfg_.repr_dim; ++k) {
                    row[k] = lo[k];
                    row[cfg_.repr_dim + k] = hi[k];
                }
            }
        }
        Matrix rel_out = relation_.forward(pairs, mode, ctx.rel);
        Matrix sum = row_block(rel_out, 0, b);
        for (std::size_t p = 1; p < n_pairs; ++p) {
            Matrix part = row_block(rel_out, p * b, b);
            add_inplace(sum, part);
        }
        return aggregate_.forward(sum, mode, ctx.agg);
    }

    // Full forward pass. Fills ctx with everything backward() needs.
    void forward(const Batch& batch, Mode mode, ModelCtx& ctx) {
        if (batch.size() == 0) throw config_error("forward: empty batch");
        ctx = ModelCtx{};
        ctx.mode = mode;

        if (has_rn()) {
            if (batch.related.size() < cfg_.n_related)
                throw config_error("forward: batch carries " + std::to_string(batch.related.size()) +
                                   " related objects, model expects " + std::to_string(cfg_.n_related));
            std::size_t b = batch.size();
            std::vector<const Matrix*> parts{&batch.x};
            for (std::size_t i = 0; i < cfg_.n_related; ++i) parts.push_back(&batch.related[i]);
            Matrix encoded = encode(vstack(parts), mode, ctx.enc);
            ctx.o = row_block(encoded, 0, b);
            ctx.oi.resize(cfg_.n_related);
            for (std::size_t i = 0; i < cfg_.n_related; ++i)
                ctx.oi[i] = row_block(encoded, (i + 1) * b, b);

            if (cfg_.rn_mode == RnMode::anchored) {
                // one relation pass over the stacked pair batch [(o,o_1); ...; (o,o_n)]
                Matrix pairs(cfg_.n_related * b, 2 * cfg_.repr_dim);
                for (std::size_t i = 0; i < cfg_.n_related; ++i)
                    for (std::size_t r = 0; r < b; ++r) {
                        double* row = pairs.row(i * b + r);
                        const double* orow = ctx.o.row(r);
                        const double* irow = ctx.oi[i].row(r);
                        for (std::size_t k = 0; k < cfg_.repr_dim; ++k) {
                            row[k] = orow[k];
                            row[cfg_.repr_dim + k] = irow[k];
                        }
                    }
                Matrix rel_out = relation_.forward(pairs, mode, ctx.rel);
                Matrix sum = row_block(rel_out, 0, b);
                for (std::size_t i = 1; i < cfg_.n_related; ++i) {
                    Matrix part = row_block(rel_out, i * b, b);
                    add_inplace(sum, part);
                }
                ctx.repr = aggregate_.forward(sum, mode, ctx.agg);
            } else {
                std::vector<Matrix> objects;
                objects.push_back(ctx.o);
                for (auto& m : ctx.oi) objects.push_back(m);
                ctx.repr = aggregate_all_pairs(std::move(objects), mode, ctx);
            }
        } else {
            ctx.o = encode(batch.x, mode, ctx.enc);
            ctx.repr = ctx.o;
        }

        ctx.y_hat = head_main_.forward(ctx.repr, mode, ctx.head_main);
        if (has_aux()) ctx.y_aux_hat = head_aux_.forward(ctx.repr, mode, ctx.head_aux);
        ctx.valid = true;
    }

    // Joint loss over the batch, summed (not averaged):
    // sum (y_hat - y)^2 + lambda * sum (y_aux_hat - y_aux)^2 + gamma * |theta|^2.
    LossParts loss(const Batch& batch, Mode mode, ModelCtx& ctx) {
        forward(batch, mode, ctx);
        LossParts parts;
        for (std::size_t r = 0; r < batch.size(); ++r) {
            double d = ctx.y_hat(r, 0) - batch.y[r];
            parts.main += d * d;
            if (has_aux()) {
                double da = ctx.y_aux_hat(r, 0) - batch.y_aux[r];
                parts.aux += da * da;
            }
        }
        parts.reg = l2_penalty(store_, cfg_.gamma_l2);
        parts.total = parts.main + cfg_.lambda_aux * parts.aux + parts.reg;
        return parts;
    }

    // Backward pass for the data loss; accumulates into store grads. The l2
    // gradient is added by the optimizer step, not here. The encoder gradient
    // arrives as the sum over its n+1 uses.
    void backward(const Batch& batch, ModelCtx& ctx) {
        if (!ctx.valid) throw config_error("backward: stale or missing forward context");
        ctx.valid = false;
        std::size_t b = batch.size();

        Matrix dy(b, 1), dya;
        for (std::size_t r = 0; r < b; ++r) dy(r, 0) = 2.0 * (ctx.y_hat(r, 0) - batch.y[r]);
        Matrix drepr = head_main_.backward(ctx.head_main, dy);
        if (has_aux()) {
            dya = Matrix(b, 1);
            for (std::size_t r = 0; r < b; ++r)
                dya(r, 0) = 2.0 * cfg_.lambda_aux * (ctx.y_aux_hat(r, 0) - batch.y_aux[r]);
            add_inplace(drepr, head_aux_.backward(ctx.head_aux, dya));
        }

        if (!has_rn()) {
            encoder_.backward(ctx.enc, drepr, /*need_input_grad=*/false);
            return;
        }

        Matrix dsum = aggregate_.backward(ctx.agg, drepr);

        // gradient per object slot, stacked in the same layout as the
        // encoder's forward input [x; x_1; ...; x_n]
        Matrix dstack((cfg_.n_related + 1) * b, cfg_.repr_dim, 0.0);

        if (cfg_.rn_mode == RnMode::anchored) {
            // every pair block of the stacked relation batch receives dsum
            std::vector<const Matrix*> ups(cfg_.n_related, &dsum);
            Matrix dconcat = relation_.backward(ctx.rel, vstack(ups));
            for (std::size_t i = 0; i < cfg_.n_related; ++i) {
                for (std::size_t r = 0; r < b; ++r) {
                    const double* drow = dconcat.row(i * b + r);
                    for (std::size_t k = 0; k < cfg_.repr_dim; ++k) {
                        dstack(r, k) += drow[k];
                        dstack((i + 1) * b + r, k) += drow[cfg_.repr_dim + k];
                    }
                }
            }
        } else {
            std::vector<const Matrix*> ups(ctx.pair_idx.size(), &dsum);
            Matrix dconcat = relation_.backward(ctx.rel, vstack(ups));
            for (std::size_t p = 0; p < ctx.pair_idx.size(); ++p) {
                auto [i, j] = ctx.pair_idx[p];
                const std::vector<std::uint8_t>& flip = ctx.pair_flip[p];
                for (std::size_t r = 0; r < b; ++r) {
                    std::size_t lo = flip[r] ? j : i;
                    std::size_t hi = flip[r] ? i : j;
                    const double* drow = dconcat.row(p * b + r);
                    for (std::size_t k = 0; k < cfg_.repr_dim; ++k) {
                        dstack(lo * b + r, k) += drow[k];
                        dstack(hi * b + r, k) += drow[cfg_.repr_dim + k];
                    }
                }
            }
        }
        encoder_.backward(ctx.enc, dstack, /*need_input_grad=*/false);
    }

    // Inference-mode convenience: per-sample predictions.
    std::vector<Prediction> predict(const Batch& batch, Mode mode = Mode::infer) {
        ModelCtx ctx;
        forward(batch, mode, ctx);
        std::vector<Prediction> out(batch.size());
        for (std::size_t r = 0; r < batch.size(); ++r) {
            out[r].y_hat = ctx.y_hat(r, 0);
            out[r].y_aux_hat = has_aux() ? ctx.y_aux_hat(r, 0) : 0.0;
            out[r].relation_vector.assign(ctx.repr.row(r), ctx.repr.row(r) + ctx.repr.cols());
        }
        return out;
    }

    // Batch-norm layers in definition order; used for checkpoint running stats.
    std::vector<BatchNormLayer*> batchnorm_layers() {
        std::vector<BatchNormLayer*> out;
        for (MlpBlock* blk : {&encoder_, &relation_, &aggregate_, &head_main_, &head_aux_})
            for (auto& l : blk->layers)
                if (l.bn) out.push_back(&*l.bn);
        return out;
    }

private:
    static bool lex_greater(const double* a, const double* b, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
            if (a[k] < b[k]) return false;
            if (a[k] > b[k]) return true;
        }
        return false;
    }

    ModelConfig cfg_;
    std::uint64_t seed_;
    ParamStore store_;
    MlpBlock encoder_, relation_, aggregate_, head_main_, head_aux_;
};

} // namespace relnet
