#pragma once

#include <cstdint>
#include <type_traits>
#include <vector>

#include "dunet/tensor.hpp"

// Compute kernels behind the autodiff graph.
//
// `dunet::kernels` holds the OpenMP-parallel implementations used at run time;
// `dunet::kernels::ref` holds plain serial loops kept as the reference the
// parallel versions are tested and benchmarked against.
//
// Every parallel kernel partitions work so that each output element is owned
// by exactly one iteration of the parallel loop and reduced in a fixed order.
// Results are therefore bitwise identical for any thread count.
//
// Convolution follows the cross-correlation convention: the kernel is not
// flipped, y[o, i, j] = b[o] + sum_{c,u,v} w[o, c, u, v] * x[c, i + u - p, j + v - p].
// Backward functions accumulate into the gradient tensors they are given.

namespace dunet::kernels {

enum class Padding { same, valid };

/// Output extents of conv2d; throws ShapeError naming both shapes on mismatch.
Shape conv2d_output_shape(const Shape& x, const Shape& w, Padding pad, int stride);

/// Validates a 2x2 / stride-2 pooling input and returns the pooled extents.
Shape pool2x2_output_shape(const Shape& x);

/// Validates transposed-conv operands (w is inC x outC x 2 x 2) and returns output extents.
Shape upsample2x_output_shape(const Shape& x, const Shape& w);

template <typename T>
void conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const std::type_identity_t<BasicTensor<T>>* bias, Padding pad,
                    int stride, BasicTensor<T>& y);

template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy, Padding pad,
                     int stride, BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db);

/// `argmax` receives, per output element, the flat index of the winning input inside its plane.
template <typename T>
void max_pool2x2_forward(const BasicTensor<T>& x, BasicTensor<T>& y, std::vector<std::int32_t>& argmax);

template <typename T>
void max_pool2x2_backward(const BasicTensor<T>& dy, const std::vector<std::int32_t>& argmax, BasicTensor<T>& dx);

template <typename T>
void avg_pool2x2_forward(const BasicTensor<T>& x, BasicTensor<T>& y);

template <typename T>
void avg_pool2x2_backward(const BasicTensor<T>& dy, BasicTensor<T>& dx);

/// Learned 2x2 stride-2 transposed convolution; w is inC x outC x 2 x 2.
template <typename T>
void upsample2x_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const std::type_identity_t<BasicTensor<T>>* bias,
                        BasicTensor<T>& y);

template <typename T>
void upsample2x_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                         BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db);

namespace ref {

template <typename T>
void conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const std::type_identity_t<BasicTensor<T>>* bias, Padding pad,
                    int stride, BasicTensor<T>& y);

template <typename T>
void conv2d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy, Padding pad,
                     int stride, BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db);

template <typename T>
void max_pool2x2_forward(const BasicTensor<T>& x, BasicTensor<T>& y, std::vector<std::int32_t>& argmax);

template <typename T>
void avg_pool2x2_forward(const BasicTensor<T>& x, BasicTensor<T>& y);

template <typename T>
void upsample2x_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const std::type_identity_t<BasicTensor<T>>* bias,
                        BasicTensor<T>& y);

template <typename T>
void upsample2x_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& dy,
                         BasicTensor<T>* dx, BasicTensor<T>* dw, BasicTensor<T>* db);

}  // namespace ref

/// Threads used by the parallel kernels (OpenMP max threads, 1 without OpenMP).
int thread_count();
void set_thread_count(int n);

}  // namespace dunet::kernels
