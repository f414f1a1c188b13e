#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "relnet/matrix.hpp"
#include "relnet/param.hpp"
#include "relnet/rng.hpp"

namespace relnet {

enum class Mode { train, infer };

// He-normal fill: N(0, sqrt(2/fan_in)). The standard choice for ReLU stacks;
// deep plain encoders do not train from naive scales.
inline void he_init(std::vector<double>& values, std::size_t fan_in, RngStream& rng) {
    if (fan_in == 0) throw config_error("he_init: fan_in must be positive");
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : values) v = rng.normal(0.0, stddev);
}

struct DenseLayer {
    ParamTensor* weights = nullptr; // [in_dim, out_dim], row-major
    ParamTensor* bias = nullptr;    // [out_dim]
    std::size_t in_dim = 0, out_dim = 0;
    std::string name;

    Matrix forward(const Matrix& x, Matrix& input_cache) const {
        if (x.cols() != in_dim)
            throw config_error("dense layer '" + name + "': input width " +
                               std::to_string(x.cols()) + ", expected " + std::to_string(in_dim));
        input_cache = x;
        Matrix out(x.rows(), out_dim);
        const std::vector<double>& w = weights->values;
        const std::vector<double>& b = bias->values;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            const double* xr = x.row(r);
            double* orow = out.row(r);
            for (std::size_t j = 0; j < out_dim; ++j) orow[j] = b[j];
            for (std::size_t k = 0; k < in_dim; ++k) {
                double s = xr[k];
                if (s == 0.0) continue;
                const double* wrow = &w[k * out_dim];
                for (std::size_t j = 0; j < out_dim; ++j) orow[j] += s * wrow[j];
            }
        }
        return out;
    }

    // Accumulates dW, db into the param grads; returns gradient w.r.t. input
    // (skipped when the caller has no use for it, e.g. raw feature inputs).
    Matrix backward(const Matrix& input_cache, const Matrix& upstream,
                    bool need_input_grad = true) const {
        if (upstream.cols() != out_dim || upstream.rows() != input_cache.rows())
            throw config_error("dense layer '" + name + "': upstream gradient shape mismatch");
        std::vector<double>& gw = weights->grads;
        std::vector<double>& gb = bias->grads;
        Matrix dx;
        if (need_input_grad) dx = Matrix(input_cache.rows(), in_dim);
        const std::vector<double>& w = weights->values;
        for (std::size_t r = 0; r < upstream.rows(); ++r) {
            const double* g = upstream.row(r);
            const double* xr = input_cache.row(r);
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[j];
            for (std::size_t k = 0; k < in_dim; ++k) {
                double xv = xr[k];
                if (xv != 0.0) {
                    double* gwrow = &gw[k * out_dim];
                    for (std::size_t j = 0; j < out_dim; ++j) gwrow[j] += xv * g[j];
                }
                if (need_input_grad) {
                    const double* wrow = &w[k * out_dim];
                    double acc = 0.0;
                    for (std::size_t j = 0; j < out_dim; ++j) acc += g[j] * wrow[j];
                    dx(r, k) = acc;
                }
            }
        }
        return dx;
    }
};

struct BatchNormLayer {
    ParamTensor* gamma = nullptr; // [dim]
    ParamTensor* beta = nullptr;  // [dim]
    std::vector<double> running_mean, running_var;
    double epsilon = 1e-5;
    double stat_momentum = 0.1;
    std::string name;

    std::size_t dim() const { return running_mean.size(); }

    struct Cache {
        Matrix xhat;
        std::vector<double> inv_std;
        Mode mode = Mode::train;
    };

    // Train mode normalizes by batch statistics (biased variance) and updates
    // running stats: running <- (1-m)*running + m*batch_stat. Infer mode uses
    // running stats only and never mutates them.
    Matrix forward(const Matrix& x, Mode mode, Cache& cache) {
        if (x.cols() != dim())
            throw config_error("batchnorm '" + name + "': input width " + std::to_string(x.cols()) +
                               ", expected " + std::to_string(dim()));
        std::size_t b = x.rows(), d = dim();
        cache.mode = mode;
        cache.inv_std.assign(d, 0.0);
        std::vector<double> mean(d, 0.0);
        if (mode == Mode::train) {
            if (b < 2)
                throw config_error("batchnorm '" + name +
                                   "': train-mode batch of size " + std::to_string(b) +
                                   " rejected (need >= 2 for batch variance)");
            std::vector<double> var(d, 0.0);
            for (std::size_t r = 0; r < b; ++r) {
                const double* xr = x.row(r);
                for (std::size_t j = 0; j < d; ++j) mean[j] += xr[j];
            }
            for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(b);
            for (std::size_t r = 0; r < b; ++r) {
                const double* xr = x.row(r);
                for (std::size_t j = 0; j < d; ++j) {
                    double c = xr[j] - mean[j];
                    var[j] += c * c;
                }
            }
            for (std::size_t j = 0; j < d; ++j) var[j] /= static_cast<double>(b);
            for (std::size_t j = 0; j < d; ++j) {
                cache.inv_std[j] = 1.0 / std::sqrt(var[j] + epsilon);
                running_mean[j] = (1.0 - stat_momentum) * running_mean[j] + stat_momentum * mean[j];
                running_var[j] = (1.0 - stat_momentum) * running_var[j] + stat_momentum * var[j];
            }
        } else {
            mean = running_mean;
            for (std::size_t j = 0; j < d; ++j)
                cache.inv_std[j] = 1.0 / std::sqrt(running_var[j] + epsilon);
        }
        cache.xhat = Matrix(b, d);
        Matrix out(b, d);
        const std::vector<double>& g = gamma->values;
        const std::vector<double>& be = beta->values;
        for (std::size_t r = 0; r < b; ++r) {
            const double* xr = x.row(r);
            double* hr = cache.xhat.row(r);
            double* orw = out.row(r);
            for (std::size_t j = 0; j < d; ++j) {
                hr[j] = (xr[j] - mean[j]) * cache.inv_std[j];
                orw[j] = g[j] * hr[j] + be[j];
            }
        }
        return out;
    }

    Matrix backward(const Cache& cache, const Matrix& upstream) const {
        std::size_t b = upstream.rows(), d = dim();
        if (upstream.cols() != d || cache.xhat.rows() != b)
            throw config_error("batchnorm '" + name + "': backward shape mismatch");
        std::vector<double>& dgamma = gamma->grads;
        std::vector<double>& dbeta = beta->grads;
        const std::vector<double>& g = gamma->values;
        Matrix dx(b, d);
        if (cache.mode == Mode::infer) {
            // fixed affine map
            for (std::size_t r = 0; r < b; ++r) {
                const double* ur = upstream.row(r);
                const double* hr = cache.xhat.row(r);
                for (std::size_t j = 0; j < d; ++j) {
                    dgamma[j] += ur[j] * hr[j];
                    dbeta[j] += ur[j];
                    dx(r, j) = ur[j] * g[j] * cache.inv_std[j];
                }
            }
            return dx;
        }
        // fused train-mode formula for biased batch variance:
        // dx = inv_std/B * (B*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
        std::vector<double> sum_dxhat(d, 0.0), sum_dxhat_xhat(d, 0.0);
        for (std::size_t r = 0; r < b; ++r) {
            const double* ur = upstream.row(r);
            const double* hr = cache.xhat.row(r);
            for (std::size_t j = 0; j < d; ++j) {
                double dxh = ur[j] * g[j];
                sum_dxhat[j] += dxh;
                sum_dxhat_xhat[j] += dxh * hr[j];
                dgamma[j] += ur[j] * hr[j];
                dbeta[j] += ur[j];
            }
        }
        double inv_b = 1.0 / static_cast<double>(b);
        for (std::size_t r = 0; r < b; ++r) {
            const double* ur = upstream.row(r);
            const double* hr = cache.xhat.row(r);
            for (std::size_t j = 0; j < d; ++j) {
                double dxh = ur[j] * g[j];
                dx(r, j) = cache.inv_std[j] * inv_b *
                           (static_cast<double>(b) * dxh - sum_dxhat[j] - hr[j] * sum_dxhat_xhat[j]);
            }
        }
        return dx;
    }
};

// Inverted dropout. The mask is a pure function of (stream seed, trial, salt),
// so a forward pass can be replayed exactly: the training loop advances the
// trial once per batch, finite-difference checks hold it fixed.
struct DropoutLayer {
    double keep_prob = 1.0;
    std::uint64_t stream_seed = 0;
    std::uint64_t trial = 0;
    std::string name;

    struct Cache {
        Matrix mask; // scaled: 1/keep_prob where kept, 0 where dropped
        bool identity = false;
    };

    Matrix forward(const Matrix& x, Mode mode, Cache& cache, std::uint64_t salt = 0) const {
        if (keep_prob <= 0.0 || keep_prob > 1.0)
            throw config_error("dropout '" + name + "': keep_prob must be in (0,1]");
        if (mode == Mode::infer || keep_prob == 1.0) {
            cache.identity = true;
            return x;
        }
        cache.identity = false;
        cache.mask = Matrix(x.rows(), x.cols());
        RngStream rng(derive_seed(stream_seed, "mask", splitmix64(trial * 0x9e37ULL + salt)));
        Matrix out(x.rows(), x.cols());
        double scale = 1.0 / keep_prob;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double m = rng.uniform() < keep_prob ? scale : 0.0;
            cache.mask.data()[i] = m;
            out.data()[i] = x.data()[i] * m;
        }
        return out;
    }

    Matrix backward(const Cache& cache, const Matrix& upstream) const {
        if (cache.identity) return upstream;
        if (!cache.mask.same_shape(upstream))
            throw config_error("dropout '" + name + "': backward shape mismatch");
        Matrix dx(upstream.rows(), upstream.cols());
        for (std::size_t i = 0; i < dx.size(); ++i)
            dx.data()[i] = upstream.data()[i] * cache.mask.data()[i];
        return dx;
    }
};

inline Matrix relu_forward(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    return out;
}

// Subgradient at 0 is 0: gradient passes only where the input was > 0.
inline Matrix relu_backward(const Matrix& pre_activation, const Matrix& upstream) {
    if (!pre_activation.same_shape(upstream))
        throw config_error("relu backward: shape mismatch");
    Matrix dx(upstream.rows(), upstream.cols());
    for (std::size_t i = 0; i < dx.size(); ++i)
        dx.data()[i] = pre_activation.data()[i] > 0.0 ? upstream.data()[i] : 0.0;
    return dx;
}

// One step of an MLP: dense, then optional batch norm, optional ReLU,
// optional dropout.
struct MlpLayer {
    DenseLayer dense;
    std::optional<BatchNormLayer> bn;
    bool relu = false;
    std::optional<DropoutLayer> dropout;
};

struct LayerCache {
    Matrix dense_in;
    BatchNormLayer::Cache bn;
    Matrix relu_in;
    DropoutLayer::Cache dropout;
};

struct BlockCache {
    std::vector<LayerCache> layers;
    Mode mode = Mode::train;
    bool valid = false;
};

// A stack of MlpLayers with chaining dims. The cache for a forward pass is
// caller-owned so one block can be applied several times per step (the shared
// encoder) and each application backpropagated separately.
class MlpBlock {
public:
    std::vector<MlpLayer> layers;

    bool empty() const { return layers.empty(); }
    std::size_t in_dim() const { return layers.front().dense.in_dim; }
    std::size_t out_dim() const { return layers.back().dense.out_dim; }

    Matrix forward(const Matrix& x, Mode mode, BlockCache& cache, std::uint64_t dropout_salt = 0) {
        cache.layers.assign(layers.size(), LayerCache{});
        cache.mode = mode;
        Matrix cur = x;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            MlpLayer& l = layers[i];
            LayerCache& c = cache.layers[i];
            cur = l.dense.forward(cur, c.dense_in);
            if (l.bn) cur = l.bn->forward(cur, mode, c.bn);
            if (l.relu) {
                c.relu_in = cur;
                cur = relu_forward(cur);
            }
            if (l.dropout) cur = l.dropout->forward(cur, mode, c.dropout, dropout_salt);
        }
        cache.valid = true;
        return cur;
    }

    // Accumulates parameter grads, returns gradient w.r.t. the block input.
    // Consumes the cache: a second backward without a fresh forward is stale.
    Matrix backward(BlockCache& cache, const Matrix& upstream, bool need_input_grad = true) {
        if (!cache.valid)
            throw config_error("mlp backward without a prior forward (stale or missing cache)");
        if (cache.layers.size() != layers.size())
            throw config_error("mlp backward: cache does not match block");
        cache.valid = false;
        Matrix cur = upstream;
        for (std::size_t i = layers.size(); i-- > 0;) {
            MlpLayer& l = layers[i];
            LayerCache& c = cache.layers[i];
            if (l.dropout) cur = l.dropout->backward(c.dropout, cur);
            if (l.relu) cur = relu_backward(c.relu_in, cur);
            if (l.bn) cur = l.bn->backward(c.bn, cur);
            cur = l.dense.backward(c.dense_in, cur, i > 0 || need_input_grad);
        }
        return cur;
    }

    // Convenience single-use API backed by an internal cache.
    Matrix forward(const Matrix& x, Mode mode) { return forward(x, mode, own_cache_); }
    Matrix backward(const Matrix& upstream) { return backward(own_cache_, upstream); }

    void set_dropout_trial(std::uint64_t trial) {
        for (auto& l : layers)
            if (l.dropout) l.dropout->trial = trial;
    }

private:
    BlockCache own_cache_;
};

struct MlpOptions {
    std::vector<std::size_t> dims; // [in, hidden..., out]; depth = dims.size()-1
    bool hidden_batchnorm = false;
    bool hidden_relu = true;
    double dropout_keep = 1.0; // < 1 adds dropout after each hidden activation
    double bn_epsilon = 1e-5;
    double bn_momentum = 0.1;
};

// Builds a block and registers its parameters. Each tensor's init stream is
// keyed by (seed, tensor name), so blocks with equal names and shapes start
// identical across model variants built from the same seed.
inline MlpBlock make_mlp(ParamStore& store, const std::string& name, const MlpOptions& opt,
                         std::uint64_t init_seed) {
    if (opt.dims.size() < 2) throw config_error("make_mlp '" + name + "': need at least one layer");
    MlpBlock block;
    std::size_t depth = opt.dims.size() - 1;
    for (std::size_t k = 0; k < depth; ++k) {
        std::size_t in = opt.dims[k], out = opt.dims[k + 1];
        bool hidden = k + 1 < depth;
        MlpLayer layer;
        std::string lname = name + ".l" + std::to_string(k);
        layer.dense.name = lname;
        layer.dense.in_dim = in;
        layer.dense.out_dim = out;
        layer.dense.weights = &store.add(lname + ".W", {in, out}, true);
        layer.dense.bias = &store.add(lname + ".b", {out}, false);
        RngStream wrng(derive_seed(init_seed, layer.dense.weights->name));
        he_init(layer.dense.weights->values, in, wrng);
        if (hidden && opt.hidden_batchnorm) {
            BatchNormLayer bn;
            bn.name = lname + ".bn";
            bn.gamma = &store.add(bn.name + ".gamma", {out}, false);
            bn.beta = &store.add(bn.name + ".beta", {out}, false);
            std::fill(bn.gamma->values.begin(), bn.gamma->values.end(), 1.0);
            bn.running_mean.assign(out, 0.0);
            bn.running_var.assign(out, 1.0);
            bn.epsilon = opt.bn_epsilon;
            bn.stat_momentum = opt.bn_momentum;
            layer.bn = std::move(bn);
        }
        layer.relu = hidden && opt.hidden_relu;
        if (hidden && opt.dropout_keep < 1.0) {
            DropoutLayer dl;
            dl.name = lname + ".dropout";
            dl.keep_prob = opt.dropout_keep;
            dl.stream_seed = derive_seed(init_seed, dl.name);
            layer.dropout = std::move(dl);
        }
        block.layers.push_back(std::move(layer));
    }
    return block;
}

} // namespace relnet
