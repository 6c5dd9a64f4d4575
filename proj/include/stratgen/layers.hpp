#pragma once

#include <string>
#include <vector>

#include "stratgen/ops.hpp"
#include "stratgen/tensor.hpp"

namespace stratgen {

// Small layer building blocks. Each layer owns its Parameters; models collect
// pointers in construction order, which fixes checkpoint layout.

struct LinearLayer {
  Parameter w;  // [Dout, Din]
  Parameter b;  // [Dout]; undefined when bias-free

  LinearLayer() = default;
  // He-style fan-in init (tokenizer convs) when sigma <= 0, else trunc normal.
  LinearLayer(const std::string& name, int din, int dout, Rng& rng, float sigma,
              bool with_bias = true);

  Tensor operator()(const Tensor& x) const { return linear(x, w.tensor, b.tensor); }
  void collect(std::vector<Parameter*>& out);
};

struct ConvLayer {
  Parameter w;  // [Cout, k*k*Cin]
  Parameter b;
  int kernel = 3, stride = 1, pad = 1;

  ConvLayer() = default;
  ConvLayer(const std::string& name, int cin, int cout, int kernel, int stride, int pad,
            Rng& rng);

  Tensor operator()(const Tensor& x) const {
    return conv2d(x, w.tensor, b.tensor, kernel, stride, pad);
  }
  void collect(std::vector<Parameter*>& out);
};

struct GroupNormLayer {
  Parameter gain, bias;
  int groups = 8;

  GroupNormLayer() = default;
  GroupNormLayer(const std::string& name, int channels, int groups);

  Tensor operator()(const Tensor& x) const {
    return group_norm(x, groups, gain.tensor, bias.tensor);
  }
  void collect(std::vector<Parameter*>& out);
};

// Residual branches end in a layer norm whose gain starts small, keeping
// early training near-identity while every branch stays live from step 0.
float residual_branch_gain();

struct LayerNormLayer {
  Parameter gain, bias;

  LayerNormLayer() = default;
  LayerNormLayer(const std::string& name, int dim, float gain_init = 1.0f);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain.tensor, bias.tensor); }
  void collect(std::vector<Parameter*>& out);
};

// Bias-free, norm-free residual conv pair that maps zero to zero; the
// residual-fusion top stem needs that property so a zero level drops out of
// the merge exactly.
struct ZeroPreservingResBlock {
  ConvLayer conv1, conv2;

  ZeroPreservingResBlock() = default;
  ZeroPreservingResBlock(const std::string& name, int channels, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);
};

// GroupNorm -> swish -> conv3x3, twice, plus skip (Table-style VQ block).
struct ResBlock {
  GroupNormLayer gn1, gn2;
  ConvLayer conv1, conv2;

  ResBlock() = default;
  ResBlock(const std::string& name, int channels, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(std::vector<Parameter*>& out);
};

}  // namespace stratgen
