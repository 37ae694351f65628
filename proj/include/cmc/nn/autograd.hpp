#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cmc/core/types.hpp"
#include "cmc/volume/volume.hpp"

namespace cmc::nn {

struct Node;
using Var = std::shared_ptr<Node>;

/// A value in the computation graph. Feature grids are stored token-major:
/// one row per voxel in (t, y, x) order, one column per channel, with
/// `grid` holding the spatial extent. Plain matrices leave `grid` empty.
struct Node {
    Matrix value;
    Matrix grad;
    Shape3 grid{};
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward;

    /// Adds `g` into the gradient, allocating it on first use.
    void accumulate(const Eigen::Ref<const Matrix>& g);
    Index tokens() const { return value.rows(); }
    Index channels() const { return value.cols(); }
};

/// Leaf without gradient.
Var constant(Matrix value, Shape3 grid = {});
/// Leaf that accumulates gradient.
Var parameter(Matrix value);

/// Whether ops record the graph on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (evaluation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Reverse pass from roots whose `grad` is already seeded. Nodes are
/// visited once, in reverse topological order.
void backward(std::span<const Var> roots);

/// Convenience: seed root with d(out)/d(root) = seed and run backward.
void backward(const Var& root, const Matrix& seed);

}  // namespace cmc::nn
