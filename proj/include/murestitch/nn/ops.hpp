#pragma once

#include <vector>

#include "murestitch/nn/autograd.hpp"

namespace murestitch::nn {

// Differentiable primitives. All are instantiated for float and double.

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, T factor);

// x: [C, H, W], v: C elements in any shape; adds v[c] to every pixel of channel c.
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& v);

template <typename T> Var<T> silu(const Var<T>& x);

// y = x W^T + b with x [N, Din], W [Dout, Din], b [Dout] (may be null).
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// a [m, k] * b [k, n]
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
// a [m, k] * b[n, k]^T
template <typename T> Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

// Row-wise softmax of factor * x for x [N, M].
template <typename T> Var<T> softmax_rows(const Var<T>& x, T factor);

template <typename T> Var<T> transpose(const Var<T>& x);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);

// Concatenation along the leading dimension (channels for images, rows for tokens).
template <typename T> Var<T> concat(const std::vector<Var<T>>& parts);

// [N, D] -> [1, D]
template <typename T> Var<T> mean_rows(const Var<T>& x);

// x [Cin, H, W], weight [Cout, Cin, k, k], bias [Cout]; padding k / 2.
template <typename T> Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride);

template <typename T> Var<T> upsample_nearest2x(const Var<T>& x);

// x [C, H, W]; gamma, beta [C].
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, T eps = T(1e-5));

// x [N, D]; gamma, beta [D].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

// img [C, R, R] -> [(R/P)^2, C*P*P], patches in row-major order.
template <typename T> Var<T> patchify(const Var<T>& img, int patch);

// mean((pred - target)^2) as a [1] tensor.
template <typename T> Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target);

}  // namespace murestitch::nn
