#pragma once

#include "relnet/gradcheck.hpp"
#include "relnet/model.hpp"

namespace relnet {

// Fixture loss for a bare block: L = 0.5 * sum(out^2), so the backward
// upstream is the output itself.
inline GradCheckReport check_block(ParamStore& store, MlpBlock& block, std::size_t batch,
                                   double step, std::uint64_t seed) {
    Matrix x(batch, block.in_dim());
    RngStream rng(derive_seed(seed, "input"));
    for (double& v : x.data()) v = rng.normal();
    BlockCache cache;
    auto loss_fn = [&] {
        Matrix out = block.forward(x, Mode::train, cache);
        double acc = 0.0;
        for (double v : out.data()) acc += 0.5 * v * v;
        return acc;
    };
    auto grad_fn = [&] {
        Matrix out = block.forward(x, Mode::train, cache);
        block.backward(cache, out);
    };
    return gradient_check(store, loss_fn, grad_fn, step, 100, seed);
}

// The composed model at tiny dims (<= 8), n = 2 related objects, batch 4,
// with dropout frozen, batch norm training, and the l2 term included.
inline GradCheckReport check_full_model(double step, std::uint64_t seed,
                                        RnMode rn_mode = RnMode::anchored) {
    ModelConfig mc;
    mc.input_dim = 7;
    mc.n_related = 2;
    mc.encoder_depth = 3;
    mc.encoder_width = 8;
    mc.repr_dim = 6;
    mc.relation_depth = 2;
    mc.relation_width = 6;
    mc.aggregate_depth = 2;
    mc.aggregate_width = 6;
    mc.head_depth = 2;
    mc.head_width = 6;
    mc.lambda_aux = 0.7;
    mc.gamma_l2 = 0.01;
    mc.dropout_keep = 0.8;
    mc.rn_mode = rn_mode;
    RelNetModel model(mc, derive_seed(seed, "model"));
    model.set_dropout_trial(5);

    RngStream rng(derive_seed(seed, "batch"));
    Batch batch;
    batch.x = Matrix(4, mc.input_dim);
    for (double& v : batch.x.data()) v = rng.normal();
    batch.related.assign(mc.n_related, Matrix(4, mc.input_dim));
    for (auto& m : batch.related)
        for (double& v : m.data()) v = rng.normal();
    batch.y = {0.3, -0.2, 1.0, 0.5};
    batch.y_aux = {0.1, 0.4, -0.3, 0.2};

    ModelCtx ctx;
    auto loss_fn = [&] { return model.loss(batch, Mode::train, ctx).total; };
    auto grad_fn = [&] {
        model.loss(batch, Mode::train, ctx);
        model.backward(batch, ctx);
        add_l2_gradient(model.params(), mc.gamma_l2);
    };
    return gradient_check(model.params(), loss_fn, grad_fn, step, 100, seed);
}

} // namespace relnet
