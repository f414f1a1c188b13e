#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "relnet/param.hpp"
#include "relnet/rng.hpp"

namespace relnet {

struct GradCheckEntry {
    std::string param;
    double max_error = 0.0; // relative where the gradient is not tiny, else absolute
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coords_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst_error = 0.0;
    std::string worst_param;
    bool loss_finite = true;

    bool pass(double tolerance) const { return loss_finite && worst_error < tolerance; }
};

// Compares analytic gradients against central differences
// (L(theta+h) - L(theta-h)) / 2h, coordinate by coordinate. `loss_fn` must be
// a pure function of the parameter store contents (dropout trials frozen,
// batch fixed); `grad_fn` must populate store grads for the same loss,
// including any l2 term. For tensors larger than `max_coords` a seeded sample
// of coordinates is checked.
inline GradCheckReport gradient_check(ParamStore& store,
                                      const std::function<double()>& loss_fn,
                                      const std::function<void()>& grad_fn,
                                      double step = 1e-5,
                                      std::size_t max_coords = 100,
                                      std::uint64_t seed = 0) {
    GradCheckReport report;

    if (!std::isfinite(loss_fn())) {
        report.loss_finite = false;
        report.worst_error = std::numeric_limits<double>::infinity();
        report.worst_param = "(loss not finite)";
        return report;
    }

    store.zero_grads();
    grad_fn();
    // snapshot analytic grads before finite differencing clobbers anything
    std::vector<std::vector<double>> analytic(store.count());
    for (std::size_t t = 0; t < store.count(); ++t) analytic[t] = store.at(t).grads;

    for (std::size_t t = 0; t < store.count(); ++t) {
        ParamTensor& tensor = store.at(t);
        GradCheckEntry entry;
        entry.param = tensor.name;

        std::vector<std::size_t> coords(tensor.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (coords.size() > max_coords) {
            RngStream rng(derive_seed(seed, "coords", fnv1a(tensor.name)));
            rng.shuffle(coords);
            coords.resize(max_coords);
        }

        for (std::size_t idx : coords) {
            double saved = tensor.values[idx];
            double plus = saved + step;
            double minus = saved - step;
            tensor.values[idx] = plus;
            double lp = loss_fn();
            tensor.values[idx] = minus;
            double lm = loss_fn();
            tensor.values[idx] = saved;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                report.loss_finite = false;
                report.worst_error = std::numeric_limits<double>::infinity();
                report.worst_param = tensor.name;
                return report;
            }
            double numeric = (lp - lm) / (plus - minus); // actual step after rounding
            double a = analytic[t][idx];
            double denom = std::max(std::fabs(a), std::fabs(numeric));
            double err = denom < 1e-5 ? std::fabs(a - numeric) : std::fabs(a - numeric) / denom;
            if (err >= entry.max_error) {
                entry.max_error = err;
                entry.worst_index = idx;
                entry.analytic = a;
                entry.numeric = numeric;
            }
            ++entry.coords_checked;
        }
        if (entry.max_error >= report.worst_error) {
            report.worst_error = entry.max_error;
            report.worst_param = tensor.name;
        }
        report.entries.push_back(std::move(entry));
    }
    store.zero_grads();
    return report;
}

} // namespace relnet
