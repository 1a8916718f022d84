#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hgd/graph.hpp"

// Differentiable primitives. Feature maps are (channels, height, width);
// matrices are (rows, cols). Every op records itself on the graph of its first
// argument and throws DimensionError on shape mismatch.
namespace hgd::ops {

/// out(o,y,x) = bias(o) + sum_i weight(o,i) * input(i,y,x)
template <typename T>
Var<T> conv1x1(Var<T> input, Var<T> weight, Var<T> bias);

/// 3x3 convolution with zero padding 1; weight is (c_out, c_in, 3, 3).
template <typename T>
Var<T> conv3x3(Var<T> input, Var<T> weight, Var<T> bias, std::size_t stride);

/// Separable bilinear interpolation with half-pixel centres:
/// src = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1].
template <typename T>
Var<T> bilinear_resize(Var<T> input, std::size_t out_h, std::size_t out_w);

/// src = floor(dst * in / out).
template <typename T>
Var<T> nearest_resize(Var<T> input, std::size_t out_h, std::size_t out_w);

/// 2x2 window, stride 2, ceil mode (odd borders pool over the partial window).
/// Ties go to the first maximal element in row-major window order.
template <typename T>
Var<T> maxpool2x2(Var<T> input);

/// Softmax over all spatial positions of each channel, max-subtracted.
template <typename T>
Var<T> softmax_spatial(Var<T> logits);

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

template <typename T>
Var<T> transpose(Var<T> a);

template <typename T>
Var<T> reshape(Var<T> input, Shape dims);

template <typename T>
Var<T> relu(Var<T> input);

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> input, T factor);

/// sum_j coeffs(j) * maps[j]; differentiable in the maps and the coefficients.
template <typename T>
Var<T> weighted_sum(std::span<const Var<T>> maps, Var<T> coeffs);

/// (c,h,w) -> (c) spatial mean.
template <typename T>
Var<T> global_avg_spatial(Var<T> input);

/// Adds vec(c) at every spatial position of input(c,h,w).
template <typename T>
Var<T> broadcast_add_channel(Var<T> input, Var<T> vec);

/// Scalar (dims {1}) sum of all elements.
template <typename T>
Var<T> sum(Var<T> input);

template <typename T>
Var<T> mean(Var<T> input);

/// Mean softmax cross-entropy over pixels whose label is not `ignore_index`.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint8_t> labels,
                     std::uint8_t ignore_index = 255);

}  // namespace hgd::ops
