#pragma once

#include <vector>

#include "cmc/nn/autograd.hpp"

namespace cmc::nn {

using Triple = std::array<int, 3>;

/// y = x W^T + b; W is (out, in), b is (1, out) or null.
Var linear(const Var& x, const Var& weight, const Var& bias);

Var add(const Var& a, const Var& b);
Var relu(const Var& x);
/// Exact (erf) GELU.
Var gelu(const Var& x);

/// Per-row normalisation over channels with affine gamma/beta (1, C).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = 1e-6);

/// Dense 3D convolution on a token-major grid. Weight is
/// (Cout, Cin*kt*kh*kw) in (cin, dt, dy, dx) order.
Var conv3d(const Var& x, const Var& weight, const Var& bias, Triple kernel, Triple stride, Triple padding);

/// Depthwise 3D convolution, stride 1, same padding. Weight is
/// (C, kt*kh*kw); bias (1, C) or null.
Var depthwise_conv3d(const Var& x, const Var& weight, const Var& bias, Triple kernel);

/// Multi-head softmax attention over all tokens. `qkv` is (n, 3C) holding
/// queries, keys and values side by side; output is (n, C) and keeps the
/// grid of `qkv`. When `probs` is given it receives one (n, n) attention
/// matrix per head.
Var self_attention(const Var& qkv, int heads, std::vector<Matrix>* probs = nullptr);

/// Mean over rows: (n, C) -> (1, C).
Var mean_rows(const Var& x);

/// Row-wise L2 normalisation; norms are clamped below at eps.
Var l2_normalize_rows(const Var& x, Real eps = 1e-12);

/// Output extent of a convolution along one axis.
inline int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

}  // namespace cmc::nn
