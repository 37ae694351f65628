#include "cmc/nn/ops.hpp"

#include <cmath>
#include <numbers>

#include "cmc/core/error.hpp"

namespace cmc::nn {

namespace {

Var make(Matrix value, Shape3 grid, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->grid = grid;
    bool track = false;
    for (const auto& p : parents) track = track || (p && (p->requires_grad || p->backward));
    if (grad_enabled() && track) {
        n->parents = std::move(parents);
        n->backward = std::move(fn);
    }
    return n;
}

bool tracked(const Var& v) { return v && (v->requires_grad || v->backward); }

}  // namespace

Var linear(const Var& x, const Var& weight, const Var& bias) {
    if (x->channels() != weight->value.cols())
        throw InvalidArgument("linear: input has " + std::to_string(x->channels()) + " features, weight expects " +
                              std::to_string(weight->value.cols()));
    Matrix y = x->value * weight->value.transpose();
    if (bias) y.rowwise() += bias->value.row(0);
    return make(std::move(y), x->grid, {x, weight, bias}, [x, weight, bias](Node& self) {
        const Matrix& dy = self.grad;
        if (tracked(x)) x->accumulate(dy * weight->value);
        if (tracked(weight)) weight->accumulate(dy.transpose() * x->value);
        if (tracked(bias)) bias->accumulate(dy.colwise().sum());
    });
}

Var add(const Var& a, const Var& b) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw InvalidArgument("add: shape mismatch");
    return make(a->value + b->value, a->grid, {a, b}, [a, b](Node& self) {
        if (tracked(a)) a->accumulate(self.grad);
        if (tracked(b)) b->accumulate(self.grad);
    });
}

Var relu(const Var& x) {
    return make(x->value.cwiseMax(0.0), x->grid, {x}, [x](Node& self) {
        x->accumulate((x->value.array() > 0).select(self.grad, 0.0));
    });
}

Var gelu(const Var& x) {
    const Real inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    Matrix y = (0.5 * x->value.array() * (1.0 + (x->value.array() * inv_sqrt2).unaryExpr([](Real a) { return std::erf(a); }))).matrix();
    return make(std::move(y), x->grid, {x}, [x, inv_sqrt2](Node& self) {
        const auto& v = x->value.array();
        const Real inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        auto d = 0.5 * (1.0 + (v * inv_sqrt2).unaryExpr([](Real a) { return std::erf(a); })) + v * inv_sqrt_2pi * (-0.5 * v.square()).exp();
        x->accumulate((self.grad.array() * d).matrix());
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
    const Index c = x->channels();
    Vector mean = x->value.rowwise().mean();
    Matrix centered = x->value.colwise() - mean;
    Vector inv_std = ((centered.array().square().rowwise().sum() / Real(c)) + eps).rsqrt().matrix();
    Matrix xhat = centered.array().colwise() * inv_std.array();
    Matrix y = (xhat.array().rowwise() * gamma->value.row(0).array()).matrix();
    y.rowwise() += beta->value.row(0);
    return make(std::move(y), x->grid, {x, gamma, beta},
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), c](Node& self) {
                    const Matrix& dy = self.grad;
                    if (tracked(gamma)) gamma->accumulate((dy.array() * xhat.array()).colwise().sum().matrix());
                    if (tracked(beta)) beta->accumulate(dy.colwise().sum());
                    if (!tracked(x)) return;
                    Matrix dxhat = dy.array().rowwise() * gamma->value.row(0).array();
                    Vector m1 = dxhat.rowwise().mean();
                    Vector m2 = (dxhat.array() * xhat.array()).rowwise().sum() / Real(c);
                    Matrix dx = dxhat;
                    dx.colwise() -= m1;
                    dx -= (xhat.array().colwise() * m2.array()).matrix();
                    dx = dx.array().colwise() * inv_std.array();
                    x->accumulate(dx);
                });
}

namespace {

struct ConvGeometry {
    Shape3 in, out;
    Triple k, s, p;
    int cin;
    Index kernel_volume() const { return Index(k[0]) * k[1] * k[2]; }
};

// Column layout: (cin, dt, dy, dx). Out-of-range taps read zero.
Matrix im2col(const Matrix& x, const ConvGeometry& g) {
    const Index cols = g.cin * g.kernel_volume();
    Matrix out = Matrix::Zero(g.out.voxels(), cols);
    for (int ot = 0; ot < g.out.depth; ++ot)
        for (int oy = 0; oy < g.out.height; ++oy)
            for (int ox = 0; ox < g.out.width; ++ox) {
                const Index row = (Index(ot) * g.out.height + oy) * g.out.width + ox;
                Index tap = 0;
                for (int dt = 0; dt < g.k[0]; ++dt)
                    for (int dy = 0; dy < g.k[1]; ++dy)
                        for (int dx = 0; dx < g.k[2]; ++dx, ++tap) {
                            const int it = ot * g.s[0] - g.p[0] + dt;
                            const int iy = oy * g.s[1] - g.p[1] + dy;
                            const int ix = ox * g.s[2] - g.p[2] + dx;
                            if (it < 0 || it >= g.in.depth || iy < 0 || iy >= g.in.height || ix < 0 ||
                                ix >= g.in.width)
                                continue;
                            const Index src = (Index(it) * g.in.height + iy) * g.in.width + ix;
                            for (int c = 0; c < g.cin; ++c) out(row, c * g.kernel_volume() + tap) = x(src, c);
                        }
            }
    return out;
}

void col2im(const Matrix& cols, const ConvGeometry& g, Matrix& dx) {
    for (int ot = 0; ot < g.out.depth; ++ot)
        for (int oy = 0; oy < g.out.height; ++oy)
            for (int ox = 0; ox < g.out.width; ++ox) {
                const Index row = (Index(ot) * g.out.height + oy) * g.out.width + ox;
                Index tap = 0;
                for (int dt = 0; dt < g.k[0]; ++dt)
                    for (int dy = 0; dy < g.k[1]; ++dy)
                        for (int dx_ = 0; dx_ < g.k[2]; ++dx_, ++tap) {
                            const int it = ot * g.s[0] - g.p[0] + dt;
                            const int iy = oy * g.s[1] - g.p[1] + dy;
                            const int ix = ox * g.s[2] - g.p[2] + dx_;
                            if (it < 0 || it >= g.in.depth || iy < 0 || iy >= g.in.height || ix < 0 ||
                                ix >= g.in.width)
                                continue;
                            const Index dst = (Index(it) * g.in.height + iy) * g.in.width + ix;
                            for (int c = 0; c < g.cin; ++c) dx(dst, c) += cols(row, c * g.kernel_volume() + tap);
                        }
            }
}

}  // namespace

Var conv3d(const Var& x, const Var& weight, const Var& bias, Triple kernel, Triple stride, Triple padding) {
    ConvGeometry g{x->grid, {}, kernel, stride, padding, int(x->channels())};
    if (x->grid.voxels() != x->tokens()) throw InvalidArgument("conv3d: input is not a grid");
    if (weight->value.cols() != g.cin * g.kernel_volume())
        throw InvalidArgument("conv3d: weight expects " + std::to_string(weight->value.cols()) +
                              " taps*channels, input gives " + std::to_string(g.cin * g.kernel_volume()));
    g.out = {conv_out(g.in.depth, kernel[0], stride[0], padding[0]),
             conv_out(g.in.height, kernel[1], stride[1], padding[1]),
             conv_out(g.in.width, kernel[2], stride[2], padding[2])};
    if (g.out.depth < 1 || g.out.height < 1 || g.out.width < 1)
        throw InvalidArgument("conv3d: input " + g.in.str() + " too small for kernel");
    Matrix cols = im2col(x->value, g);
    Matrix y = cols * weight->value.transpose();
    if (bias) y.rowwise() += bias->value.row(0);
    // Columns are recomputed in backward rather than kept alive.
    return make(std::move(y), g.out, {x, weight, bias}, [x, weight, bias, g](Node& self) {
        const Matrix& dy = self.grad;
        if (tracked(bias)) bias->accumulate(dy.colwise().sum());
        if (tracked(weight)) weight->accumulate(dy.transpose() * im2col(x->value, g));
        if (tracked(x)) {
            Matrix dcols = dy * weight->value;
            Matrix dx = Matrix::Zero(x->value.rows(), x->value.cols());
            col2im(dcols, g, dx);
            x->accumulate(dx);
        }
    });
}

namespace {

// Visits every (tap, output row range, input row range) of a same-padded
// stride-1 depthwise convolution; ranges are contiguous along x.
template <typename F>
void for_each_depthwise_run(const Shape3& s, const Triple& k, F&& f) {
    const int pt = k[0] / 2, py = k[1] / 2, px = k[2] / 2;
    int tap = 0;
    for (int dt = 0; dt < k[0]; ++dt)
        for (int dy = 0; dy < k[1]; ++dy)
            for (int dx = 0; dx < k[2]; ++dx, ++tap) {
                const int ot0 = std::max(0, pt - dt), ot1 = std::min(s.depth, s.depth + pt - dt);
                const int oy0 = std::max(0, py - dy), oy1 = std::min(s.height, s.height + py - dy);
                const int ox0 = std::max(0, px - dx), ox1 = std::min(s.width, s.width + px - dx);
                if (ox1 <= ox0) continue;
                for (int ot = ot0; ot < ot1; ++ot)
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const Index out_row = (Index(ot) * s.height + oy) * s.width + ox0;
                        const Index in_row = (Index(ot + dt - pt) * s.height + (oy + dy - py)) * s.width +
                                             (ox0 + dx - px);
                        f(tap, out_row, in_row, Index(ox1 - ox0));
                    }
            }
}

}  // namespace

Var depthwise_conv3d(const Var& x, const Var& weight, const Var& bias, Triple kernel) {
    const Shape3 s = x->grid;
    if (s.voxels() != x->tokens()) throw InvalidArgument("depthwise_conv3d: input is not a grid");
    if (weight->value.rows() != x->channels() || weight->value.cols() != Index(kernel[0]) * kernel[1] * kernel[2])
        throw InvalidArgument("depthwise_conv3d: weight shape mismatch");
    for (int kk : kernel)
        if (kk % 2 == 0) throw InvalidArgument("depthwise_conv3d: kernel extents must be odd");
    Matrix y = Matrix::Zero(x->tokens(), x->channels());
    const Matrix wt = weight->value.transpose();  // (taps, C)
    for_each_depthwise_run(s, kernel, [&](int tap, Index o, Index i, Index len) {
        y.middleRows(o, len).array() += x->value.middleRows(i, len).array().rowwise() * wt.row(tap).array();
    });
    if (bias) y.rowwise() += bias->value.row(0);
    return make(std::move(y), s, {x, weight, bias}, [x, weight, bias, kernel, s](Node& self) {
        const Matrix& dy = self.grad;
        if (tracked(bias)) bias->accumulate(dy.colwise().sum());
        const Matrix wt = weight->value.transpose();
        Matrix dx = Matrix::Zero(x->tokens(), x->channels());
        Matrix dwt = Matrix::Zero(wt.rows(), wt.cols());
        for_each_depthwise_run(s, kernel, [&](int tap, Index o, Index i, Index len) {
            dx.middleRows(i, len).array() += dy.middleRows(o, len).array().rowwise() * wt.row(tap).array();
            dwt.row(tap).array() +=
                (dy.middleRows(o, len).array() * x->value.middleRows(i, len).array()).colwise().sum();
        });
        if (tracked(x)) x->accumulate(dx);
        if (tracked(weight)) weight->accumulate(dwt.transpose());
    });
}

Var self_attention(const Var& qkv, int heads, std::vector<Matrix>* probs) {
    const Index n = qkv->tokens();
    if (qkv->channels() % 3 != 0) throw InvalidArgument("self_attention: qkv width must be 3C");
    const Index c = qkv->channels() / 3;
    if (heads < 1 || c % heads != 0)
        throw InvalidConfig("attention heads (" + std::to_string(heads) + ") must divide channels (" +
                            std::to_string(c) + ")");
    const Index d = c / heads;
    const Real scale = 1.0 / std::sqrt(Real(d));
    Matrix out(n, c);
    std::vector<Matrix> p(heads);
    for (int h = 0; h < heads; ++h) {
        auto q = qkv->value.middleCols(h * d, d);
        auto k = qkv->value.middleCols(c + h * d, d);
        auto v = qkv->value.middleCols(2 * c + h * d, d);
        Matrix s = (q * k.transpose()) * scale;
        Vector m = s.rowwise().maxCoeff();
        s = (s.colwise() - m).array().exp();
        Vector z = s.rowwise().sum();
        s = s.array().colwise() / z.array();
        out.middleCols(h * d, d) = s * v;
        p[h] = std::move(s);
    }
    if (probs) *probs = p;
    return make(std::move(out), qkv->grid, {qkv}, [qkv, p = std::move(p), c, d, scale, heads](Node& self) {
        Matrix dqkv(qkv->value.rows(), qkv->value.cols());
        for (int h = 0; h < heads; ++h) {
            auto q = qkv->value.middleCols(h * d, d);
            auto k = qkv->value.middleCols(c + h * d, d);
            auto v = qkv->value.middleCols(2 * c + h * d, d);
            auto dout = self.grad.middleCols(h * d, d);
            const Matrix& ph = p[h];
            Matrix dp = dout * v.transpose();
            dqkv.middleCols(2 * c + h * d, d) = ph.transpose() * dout;
            Vector rs = (dp.array() * ph.array()).rowwise().sum();
            Matrix ds = (ph.array() * (dp.colwise() - rs).array()).matrix() * scale;
            dqkv.middleCols(h * d, d) = ds * k;
            dqkv.middleCols(c + h * d, d) = ds.transpose() * q;
        }
        qkv->accumulate(dqkv);
    });
}

Var mean_rows(const Var& x) {
    Matrix y = x->value.colwise().mean();
    return make(std::move(y), {}, {x}, [x](Node& self) {
        Matrix dx = self.grad.replicate(x->tokens(), 1) / Real(x->tokens());
        x->accumulate(dx);
    });
}

Var l2_normalize_rows(const Var& x, Real eps) {
    Vector norms = x->value.rowwise().norm().cwiseMax(eps);
    Matrix y = x->value.array().colwise() / norms.array();
    return make(y, x->grid, {x}, [x, y, norms, eps](Node& self) {
        const Matrix& dy = self.grad;
        Vector dot = (dy.array() * y.array()).rowwise().sum();
        Matrix dx(dy.rows(), dy.cols());
        const Vector raw = x->value.rowwise().norm();
        for (Index i = 0; i < dy.rows(); ++i) {
            if (raw[i] >= eps)
                dx.row(i) = (dy.row(i) - y.row(i) * dot[i]) / norms[i];
            else
                dx.row(i) = dy.row(i) / norms[i];  // clamped: y = x / eps
        }
        x->accumulate(dx);
    });
}

}  // namespace cmc::nn
