#pragma once

// Differentiable primitive ops. Each records its backward rule on the active
// tape (if any) when one of its inputs requires a gradient.

#include <vector>

#include "corrmlp/autograd.hpp"

namespace corrmlp::ops {

/// Same-size 3-D cross-correlation with zero padding; padding must be (k-1)/2.
/// x (B,Cin,D,H,W), weight (Cout,Cin,k,k,k), bias (Cout).
Var conv3d(const Var& x, const Var& weight, const Var& bias, int64_t padding);

/// Disjoint 2x2x2 max; gradient goes to the first maximum in scan order.
Var maxpool3d(const Var& x);

/// Factor-2 trilinear upsampling, align-corners-false, borders clamped.
Var upsample_trilinear2x(const Var& x);

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Normalizes over `axis` independently at every other index; gamma/beta
/// have length x.dim(axis). Axis 1 is the channel axis of 5-D data.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5, int axis = 1);

Var leaky_relu(const Var& x, double slope);
/// tanh approximation.
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var softmax(const Var& x, int axis);

/// y = x W^T + b over the last axis. weight (Cout,Cin), bias (Cout).
Var linear(const Var& x, const Var& weight, const Var& bias);

/// (B,C,...) -> (B,C)
Var global_avg_pool(const Var& x);

Var concat(const std::vector<Var>& xs, int axis = 1);
Var slice(const Var& x, int axis, int64_t start, int64_t length);
Var reshape(const Var& x, Shape shape);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var square(const Var& x);
Var scale(const Var& x, double s);
/// x / s, rounded once per element.
Var div_scalar(const Var& x, double s);
Var add_scalar(const Var& x, double s);

/// x (B,C,...) scaled per (b,c) by g (B,C).
Var mul_channels(const Var& x, const Var& g);

/// Full reductions to shape (1).
Var sum(const Var& x);
Var mean(const Var& x);

/// z (N,T,C), weight (T,T), bias (T): mixes the token axis inside each window.
Var token_mix(const Var& z, const Var& weight, const Var& bias);

/// Forward difference along `axis`; output extent along axis shrinks by 1.
Var forward_diff(const Var& x, int axis);

/// Zero-padded sum over the n^3 neighbourhood of each voxel (n odd), 5-D input.
Var box_sum(const Var& x, int64_t n);

}  // namespace corrmlp::ops
