#include "cmc/model/parameters.hpp"

#include <numeric>

#include "cmc/core/error.hpp"

namespace cmc {

std::pair<Index, Index> storage_extent(const std::vector<int>& shape) {
    if (shape.empty()) return {1, 1};
    if (shape.size() == 1) return {1, shape[0]};
    const Index rest = std::accumulate(shape.begin() + 1, shape.end(), Index(1), std::multiplies<>());
    return {shape[0], rest};
}

Index Parameter::numel() const { return var->value.size(); }

nn::Var ParameterStore::add(std::string name, std::vector<int> shape, Matrix init) {
    const auto [rows, cols] = storage_extent(shape);
    if (init.rows() != rows || init.cols() != cols)
        throw InvalidArgument("parameter " + name + ": init matrix does not match its shape");
    if (find(name)) throw InvalidArgument("duplicate parameter " + name);
    auto v = nn::parameter(std::move(init));
    items_.push_back({std::move(name), std::move(shape), v});
    return v;
}

const Parameter* ParameterStore::find(const std::string& name) const {
    for (const auto& p : items_)
        if (p.name == name) return &p;
    return nullptr;
}

Parameter* ParameterStore::find(const std::string& name) {
    for (auto& p : items_)
        if (p.name == name) return &p;
    return nullptr;
}

void ParameterStore::zero_grad() {
    for (auto& p : items_) p.var->grad.resize(0, 0);
}

Index ParameterStore::numel() const {
    Index n = 0;
    for (const auto& p : items_) n += p.numel();
    return n;
}

}  // namespace cmc
