#pragma once

#include <functional>
#include <vector>

#include "cmc/core/random.hpp"
#include "cmc/nn/autograd.hpp"

namespace cmc::testing {

inline Matrix random_matrix(Index r, Index c, Rng& rng, Real scale = 1.0) {
    Matrix m(r, c);
    std::normal_distribution<Real> n(0.0, scale);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

/// Largest relative error between the autograd gradient of
/// L = sum(R .* f(inputs)) and central differences, over every entry of
/// every input. Inputs must be parameter nodes.
inline Real max_grad_error(const std::vector<nn::Var>& inputs, const std::function<nn::Var()>& f, Rng& rng,
                           Real h = 1e-5) {
    nn::Var out = f();
    const Matrix R = random_matrix(out->value.rows(), out->value.cols(), rng);
    for (const auto& in : inputs) in->grad.resize(0, 0);
    nn::backward(out, R);
    auto loss = [&] {
        nn::NoGradGuard guard;
        return (f()->value.array() * R.array()).sum();
    };
    Real worst = 0;
    for (const auto& in : inputs) {
        const Matrix analytic = in->grad.size() ? in->grad : Matrix::Zero(in->value.rows(), in->value.cols());
        Matrix numeric(in->value.rows(), in->value.cols());
        for (Index i = 0; i < in->value.size(); ++i) {
            Real& x = in->value.data()[i];
            const Real keep = x;
            x = keep + h;
            const Real up = loss();
            x = keep - h;
            const Real down = loss();
            x = keep;
            numeric.data()[i] = (up - down) / (2 * h);
        }
        const Real scale = std::max<Real>(numeric.cwiseAbs().maxCoeff(), 1e-3);
        worst = std::max(worst, (analytic - numeric).cwiseAbs().maxCoeff() / scale);
    }
    return worst;
}

}  // namespace cmc::testing
