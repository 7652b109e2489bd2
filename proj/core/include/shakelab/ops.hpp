#pragma once

#include <cstddef>
#include <span>

#include "shakelab/autograd.hpp"

namespace shakelab::ops {

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// input [N,Cin,H,W], kernel [Cout,Cin,k,k] with k in {1,3}; zero padding.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, Conv2dOptions options);

// Adds bias[c] to every element of channel c of an NCHW tensor.
template <typename T>
Var<T> add_channel_bias(Var<T> input, Var<T> bias);

struct BatchNormOptions {
  bool training = true;
  double eps = 1e-5;
  double momentum = 0.1;
};

// Per-channel normalization over (N,H,W). In training mode the batch
// statistics are used and the running estimates are moved towards them
// (unbiased variance); in eval mode the running estimates are used.
template <typename T>
Var<T> batchnorm2d(Var<T> input, Var<T> scale, Var<T> shift,
                   Tensor<T>& running_mean, Tensor<T>& running_var,
                   BatchNormOptions options);

template <typename T>
Var<T> relu(Var<T> input);

// Mean over window x window patches; no padding.
template <typename T>
Var<T> avgpool2d(Var<T> input, std::size_t window, std::size_t stride);

// out[h][w] = in[h - dy][w - dx]; vacated border is zero.
template <typename T>
Var<T> pixel_shift(Var<T> input, int dy, int dx);

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

template <typename T>
Var<T> slice_channels(Var<T> input, std::size_t begin, std::size_t count);

// [N, ...] -> [N, prod(...)]
template <typename T>
Var<T> flatten(Var<T> input);

// input [N,D], weight [K,D], bias [K] -> [N,K]
template <typename T>
Var<T> linear(Var<T> input, Var<T> weight, Var<T> bias);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> input, double factor);

template <typename T>
Var<T> sum(Var<T> input);

enum class Reduction { Mean, Sum };

// -log softmax(logits)[label], reduced over the batch. Stabilised by
// subtracting the row maximum.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels,
                             Reduction reduction = Reduction::Mean);

}  // namespace shakelab::ops
