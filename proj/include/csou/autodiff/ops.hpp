#pragma once

// Differentiable operators. Image tensors are [B, C, H, W]. Binary
// elementwise ops broadcast like NumPy (trailing axes aligned).

#include <span>
#include <vector>

#include "csou/autodiff/tape.hpp"

namespace csou::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var silu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);
Var softplus(Var x);
Var relu(Var x);

// sign(x) * max(0, |x| - theta), theta broadcast over x and >= 0. Inside the
// dead zone (|x| <= theta) both partials are 0.
Var soft_threshold(Var x, Var theta);

Var reshape(Var x, Shape shape);
// Concatenation along axis 1 of equal-rank tensors.
Var concat(std::span<const Var> parts);
// Selects element i of a flat tensor as shape [1].
Var index(Var x, std::size_t i);

Var sum(Var x);
Var mean(Var x);
// mean((a - b)^2) over every element.
Var mse(Var a, Var b);

// [B,C,H,W] -> [B,1,H,W]. Max ties go to the lowest channel.
Var channel_mean(Var x);
Var channel_max(Var x);
// [B,C,H,W] -> [B,C]
Var global_avg_pool(Var x);

// [M,K] x [K,N] -> [M,N]
Var matmul(Var a, Var b);
// Along the last axis.
Var softmax(Var x);

// Cross-correlation. x: [B,Cin,H,W]. w: [Cout,Cin,k,k] shared by the batch or
// [B,Cout,Cin,k,k] per sample. bias: [Cout] or an unbound Var for none.
Var conv2d(Var x, Var w, Var bias, std::size_t padding);

}  // namespace csou::ad
