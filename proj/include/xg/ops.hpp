#pragma once

#include <vector>

#include "xg/tensor.hpp"

// Differentiable primitives. Every backward rule is itself written in terms of
// these ops, so gradients are ordinary graph nodes and the tape supports the
// nested backward needed to differentiate through an explanation.
// Broadcasting is right-aligned with size-1 stretch.

namespace xg {

Shape broadcast_shapes(const Shape& a, const Shape& b);

// elementwise arithmetic (broadcasting)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// elementwise functions
Tensor relu(const Tensor& a);            // grad at exactly 0 is 0
Tensor softplus(const Tensor& a, double beta = 1.0);
Tensor sigmoid(const Tensor& a);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs_(const Tensor& a);

// shape ops
Tensor reshape(const Tensor& a, Shape shape);
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor sum_to_shape(const Tensor& a, const Shape& shape);  // adjoint of broadcast_to
Tensor transpose2d(const Tensor& a);
Tensor swap01(const Tensor& a);  // swap the first two axes of a rank>=2 tensor
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);

// reductions; axes are unique and in range, keepdims retains size-1 dims
Tensor reduce_sum(const Tensor& a, std::vector<int> axes, bool keepdims);
Tensor reduce_mean(const Tensor& a, std::vector<int> axes, bool keepdims);
Tensor reduce_max(const Tensor& a, std::vector<int> axes, bool keepdims);  // ties: first wins
Tensor reduce_sum_all(const Tensor& a);
Tensor reduce_mean_all(const Tensor& a);

// mean and population variance over `axes`, composed from primitives
Tensor reduce_var(const Tensor& a, const std::vector<int>& axes, bool keepdims);

// graph control
Tensor detach(const Tensor& a);

// convolution machinery: columns are laid out [Cin*kh*kw, M*Ho*Wo], m-major
Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad);
Tensor col2im(const Tensor& cols, const Shape& x_shape, int kh, int kw, int stride, int pad);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor maxpool2d(const Tensor& x, int k, int stride);
Tensor global_avg_pool(const Tensor& x);  // [M,C,H,W] -> [M,C]

// bilinear interpolation to (h2,w2), half-pixel centers; adjoint pair
Tensor upsample_bilinear(const Tensor& x, int h2, int w2);
Tensor upsample_bilinear_adjoint(const Tensor& g, int h, int w);

// heads
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x[M,I] w[O,I] b[O]
Tensor pick_class(const Tensor& logits, const std::vector<int>& idx);  // [M,K] -> [M]
Tensor softmax_xent(const Tensor& logits, const std::vector<int>& labels);  // mean loss
std::vector<int> argmax_rows(const Tensor& logits);

// min-max normalization to [0,1] per sample over all non-batch axes; a sample
// whose range is below `tiny` comes out all zero (with zero gradient).
Tensor normalize01_batched(const Tensor& maps, double tiny = 1e-12);

}  // namespace xg
