#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "relnet/param.hpp"

namespace relnet {

// gamma * sum(theta^2) over penalized tensors (dense weights only; biases and
// batch-norm scales stay unconstrained).
inline double l2_penalty(const ParamStore& store, double gamma) {
    if (gamma < 0.0) throw config_error("l2_penalty: gamma must be >= 0");
    if (gamma == 0.0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < store.count(); ++i) {
        const ParamTensor& t = store.at(i);
        if (!t.penalized) continue;
        for (double v : t.values) acc += v * v;
    }
    return gamma * acc;
}

// grads += 2*gamma*theta on penalized tensors. Applied once per step, by the
// optimizer (decoupled from the data-loss backward) or by a gradient checker.
inline void add_l2_gradient(ParamStore& store, double gamma) {
    if (gamma == 0.0) return;
    for (std::size_t i = 0; i < store.count(); ++i) {
        ParamTensor& t = store.at(i);
        if (!t.penalized) continue;
        for (std::size_t j = 0; j < t.size(); ++j) t.grads[j] += 2.0 * gamma * t.values[j];
    }
}

// Classical momentum: v <- mu*v - lr*grad; theta <- theta + v. Grads are
// zeroed after the step.
class MomentumOptimizer {
public:
    MomentumOptimizer(double learning_rate, double momentum_coeff)
        : lr_(learning_rate), mu_(momentum_coeff) {
        if (lr_ < 0.0) throw config_error("MomentumOptimizer: learning_rate must be >= 0");
        if (mu_ < 0.0 || mu_ >= 1.0)
            throw config_error("MomentumOptimizer: momentum_coeff must be in [0,1)");
    }

    void step(ParamStore& store, double gamma_l2 = 0.0) {
        for (std::size_t i = 0; i < store.count(); ++i) {
            ParamTensor& t = store.at(i);
            std::vector<double>& v = velocity_[t.name];
            if (v.empty()) v.assign(t.size(), 0.0);
            if (v.size() != t.size())
                throw config_error("momentum step: velocity/parameter shape mismatch for '" +
                                   t.name + "'");
            bool pen = t.penalized && gamma_l2 != 0.0;
            for (std::size_t j = 0; j < t.size(); ++j) {
                double g = t.grads[j];
                if (pen) g += 2.0 * gamma_l2 * t.values[j];
                v[j] = mu_ * v[j] - lr_ * g;
                t.values[j] += v[j];
                t.grads[j] = 0.0;
            }
        }
    }

    const std::vector<double>* velocity(const std::string& name) const {
        auto it = velocity_.find(name);
        return it == velocity_.end() ? nullptr : &it->second;
    }

    // test hook: preload a velocity buffer (shape is validated at step time)
    void set_velocity(const std::string& name, std::vector<double> v) {
        velocity_[name] = std::move(v);
    }

private:
    double lr_, mu_;
    std::unordered_map<std::string, std::vector<double>> velocity_;
};

} // namespace relnet
