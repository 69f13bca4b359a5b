#pragma once

#include <span>

#include "mcam/rng.hpp"
#include "mcam/tape.hpp"
#include "mcam/tensor.hpp"

namespace mcam {

enum class MergeMode { concat, sum, max };

// Stride-1 convolution with "same" zero padding of (k-1)*dilation/2 per side.
// weight is (co, ci, k, k) with k odd; bias is (1, co, 1, 1).
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, std::size_t dilation = 1);

template <typename T>
Var relu(Tape<T>& tape, Var x);

template <typename T>
Var sigmoid(Tape<T>& tape, Var x);

// 2x2 windows, stride 2. Max routes gradient to the first maximum in row-major order.
template <typename T>
Var max_pool2(Tape<T>& tape, Var x);

template <typename T>
Var avg_pool2(Tape<T>& tape, Var x);

// Nearest-neighbour 2x upsampling.
template <typename T>
Var unpool2(Tape<T>& tape, Var x);

template <typename T>
Var concat_channels(Tape<T>& tape, std::span<const Var> xs);

template <typename T>
Var merge(Tape<T>& tape, std::span<const Var> xs, MergeMode mode);

// Channel 0 holds x, channel 1 holds y, both mapped linearly onto [-1, 1].
// A single row or column maps to 0.
template <typename T>
Tensor<T> coord_channels(std::size_t n, std::size_t h, std::size_t w);

// Inverted dropout: survivors are scaled by 1/(1-p); identity when not training.
template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, bool training, Rng& rng);

// Reductions and arithmetic used to assemble losses.
template <typename T>
Var sum(Tape<T>& tape, Var x);

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

// Forward kernels without a tape, shared with inference paths and tests.
namespace kernels {

template <typename T>
void conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias,
                    std::size_t dilation, Tensor<T>& out);

}  // namespace kernels

}  // namespace mcam
