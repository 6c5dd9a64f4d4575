#pragma once

#include <cstdint>
#include <vector>

#include "stratgen/tensor.hpp"

namespace stratgen {

// Elementwise / broadcast. Shapes must match exactly except for the
// documented broadcast cases (bias over the last dim, scalar scale,
// add_bcast0 over the leading dim).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_bias(const Tensor& x, const Tensor& b);     // x[...,D] + b[D]
Tensor add_bcast0(const Tensor& x, const Tensor& y);   // x[B,rest] + y[rest]

// Matrix products.
Tensor matmul(const Tensor& a, const Tensor& b);                      // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);                   // [m,k]x[n,k]^T
Tensor bmm(const Tensor& a, const Tensor& b, bool ta, bool tb);       // [G,·,·] batched

// Layout.
Tensor reshape(const Tensor& x, Shape shape);          // view, shares storage
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor concat(const Tensor& a, const Tensor& b, int axis);

// Reductions and losses.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis = -1);
Tensor cross_entropy_smoothed(const Tensor& logits, const std::vector<int>& targets,
                              float smoothing);
// Mean smoothed CE over masked positions only; unmasked logits never touched.
Tensor masked_nll(const Tensor& logits, const std::vector<int>& targets,
                  const std::vector<uint8_t>& mask, float smoothing);

// Normalization.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor group_norm(const Tensor& x, int groups, const Tensor& gain, const Tensor& bias);

// Activations.
Tensor swish(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid_op(const Tensor& x);
Tensor dropout(const Tensor& x, float p, Rng& rng, bool training);

// Lookup.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Image ops, NHWC layout.
Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad);
Tensor avg_pool2(const Tensor& x);
Tensor upsample_nearest2(const Tensor& x);
Tensor pixel_shuffle(const Tensor& x, int r);

// Gradient flow control.
Tensor detach(const Tensor& x);
// Forward takes `values` bit-exactly; backward hands the gradient to
// `features` unchanged and nothing to `values`.
Tensor straight_through(const Tensor& features, const Tensor& values);

// Composites. Weights use transposed layout: rows are output features.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // x[...,Din], w[Dout,Din]
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int kernel, int stride,
              int pad);  // w[Cout, k*k*Cin]

void check_finite(const Tensor& t, const char* where);

}  // namespace stratgen
