#pragma once

#include <random>
#include <vector>

#include "cmc/core/random.hpp"
#include "cmc/model/checkpoint.hpp"

namespace cmc::testing {

/// Direct 2D convolution of every slice of a token-major grid.
inline Matrix conv2d_oracle(const Matrix& x, Shape3 g, const Tensor& w, int pad) {
    const int cout = w.shape[0], cin = w.shape[1], k = w.shape[2];
    const int oh = g.height + 2 * pad - k + 1, ow = g.width + 2 * pad - k + 1;
    Matrix y = Matrix::Zero(Index(g.depth) * oh * ow, cout);
    for (int t = 0; t < g.depth; ++t)
        for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx)
                for (int co = 0; co < cout; ++co) {
                    Real acc = 0;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx) {
                                const int sy = yy + dy - pad, sx = xx + dx - pad;
                                if (sy < 0 || sx < 0 || sy >= g.height || sx >= g.width) continue;
                                acc += w.data[((co * cin + ci) * k + dy) * k + dx] *
                                       x((Index(t) * g.height + sy) * g.width + sx, ci);
                            }
                    y((Index(t) * oh + yy) * ow + xx, co) = acc;
                }
    return y;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t{shape, {}};
    t.data.resize(std::size_t(t.numel()));
    std::normal_distribution<Real> n;
    for (auto& v : t.data) v = n(rng);
    return t;
}

}  // namespace cmc::testing
