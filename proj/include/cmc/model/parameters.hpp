#pragma once

#include <string>
#include <vector>

#include "cmc/nn/autograd.hpp"

namespace cmc {

/// Named trainable tensor. `shape` is the logical (PyTorch-style) shape;
/// the value matrix is (shape[0], prod(shape[1:])), or (1, n) for vectors.
struct Parameter {
    std::string name;
    std::vector<int> shape;
    nn::Var var;

    Index numel() const;
};

/// Matrix extent used to store a tensor of the given logical shape.
std::pair<Index, Index> storage_extent(const std::vector<int>& shape);

/// Ordered parameter registry; order is registration order.
class ParameterStore {
public:
    nn::Var add(std::string name, std::vector<int> shape, Matrix init);

    const Parameter* find(const std::string& name) const;
    Parameter* find(const std::string& name);

    std::vector<Parameter>& items() { return items_; }
    const std::vector<Parameter>& items() const { return items_; }

    void zero_grad();
    Index numel() const;

private:
    std::vector<Parameter> items_;
};

}  // namespace cmc
