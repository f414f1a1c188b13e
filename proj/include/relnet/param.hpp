#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "relnet/errors.hpp"

namespace relnet {

// A named, shaped array of doubles with a paired gradient buffer. The unit of
// trainable state.
struct ParamTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<double> grads;
    bool penalized = false; // true for dense weights: l2 applies

    std::size_t size() const { return values.size(); }

    void zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }
};

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw config_error("ParamTensor: zero extent in shape");
        n *= e;
    }
    return n;
}

// Owns all ParamTensors of one model. Insertion order is stable and defines
// iteration order everywhere (optimizer, checkpoints, gradient checks).
class ParamStore {
public:
    ParamTensor& add(const std::string& name, std::vector<std::size_t> shape, bool penalized) {
        if (by_name_.count(name))
            throw config_error("ParamStore: duplicate parameter name '" + name + "'");
        auto t = std::make_unique<ParamTensor>();
        t->name = name;
        t->shape = std::move(shape);
        t->values.assign(shape_product(t->shape), 0.0);
        t->grads.assign(t->values.size(), 0.0);
        t->penalized = penalized;
        ParamTensor* raw = t.get();
        items_.push_back(std::move(t));
        by_name_[name] = raw;
        return *raw;
    }

    ParamTensor* find(const std::string& name) {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }
    const ParamTensor* find(const std::string& name) const {
        auto it = by_name_.find(name);
        return it == by_name_.end() ? nullptr : it->second;
    }

    std::size_t count() const { return items_.size(); }
    ParamTensor& at(std::size_t i) { return *items_[i]; }
    const ParamTensor& at(std::size_t i) const { return *items_[i]; }

    void zero_grads() {
        for (auto& t : items_) t->zero_grads();
    }

    std::size_t total_values() const {
        std::size_t n = 0;
        for (auto& t : items_) n += t->size();
        return n;
    }

private:
    std::vector<std::unique_ptr<ParamTensor>> items_;
    std::unordered_map<std::string, ParamTensor*> by_name_;
};

} // namespace relnet
