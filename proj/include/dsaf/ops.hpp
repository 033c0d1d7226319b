#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "dsaf/autograd.hpp"

// Differentiable tensor operations. Every op records itself on the tape of
// its first argument and rejects shape mismatches with ShapeError.
namespace dsaf::ops {

// Cross-correlation; weight is (c_out, c_in, k, k). The padded extent minus k
// must be divisible by the stride.
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<std::type_identity_t<Var<T>>> bias, std::size_t stride,
              std::size_t padding);

template <class T>
Var<T> global_avg_pool(Var<T> x);

// Per-sample flatten to d_in, then weight (d_out, d_in). Output is (n, d_out, 1, 1).
template <class T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<std::type_identity_t<Var<T>>> bias);

template <class T>
Var<T> relu(Var<T> x);

template <class T>
Var<T> sigmoid(Var<T> x);

// First argument occupies the lower channel indices.
template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b);

template <class T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t end);

template <class T>
Var<T> add(Var<T> a, Var<T> b);

template <class T>
Var<T> sub(Var<T> a, Var<T> b);

template <class T>
Var<T> mul(Var<T> a, Var<T> b);

template <class T>
Var<T> scale(Var<T> x, std::type_identity_t<T> factor);

// Elementwise mean of equally shaped inputs.
template <class T>
Var<T> average(const std::vector<Var<T>>& xs);

template <class T>
Var<T> sum(Var<T> x);

template <class T>
Var<T> mean(Var<T> x);

// Softmax over each sample's flattened values.
template <class T>
Var<T> softmax_rows(Var<T> x);

// Rows with norm below `epsilon` are divided by `epsilon` instead; with
// epsilon == 0 a zero row is an error.
template <class T>
Var<T> l2_normalize_rows(Var<T> x, std::type_identity_t<T> epsilon = T(1e-12));

// y[n,c,h,w] = gamma[c] * x[n,c,h,w] + beta[c]; gamma/beta hold c values.
template <class T>
Var<T> channel_affine(Var<T> x, Var<T> gamma, Var<T> beta);

}  // namespace dsaf::ops
