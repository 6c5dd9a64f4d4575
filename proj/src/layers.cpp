#include "stratgen/layers.hpp"

#include <cmath>

namespace stratgen {

LinearLayer::LinearLayer(const std::string& name, int din, int dout, Rng& rng, float sigma,
                         bool with_bias) {
  const float s = sigma > 0.0f ? sigma : std::sqrt(2.0f / static_cast<float>(din));
  w = Parameter(name + ".w", Tensor::trunc_normal({dout, din}, rng, s, true));
  if (with_bias) b = Parameter(name + ".b", Tensor::zeros({dout}, true));
}

void LinearLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  if (b.tensor.defined()) out.push_back(&b);
}

ConvLayer::ConvLayer(const std::string& name, int cin, int cout, int kernel, int stride,
                     int pad, Rng& rng)
    : kernel(kernel), stride(stride), pad(pad) {
  const float s = std::sqrt(2.0f / static_cast<float>(kernel * kernel * cin));
  w = Parameter(name + ".w", Tensor::trunc_normal({cout, kernel * kernel * cin}, rng, s, true));
  b = Parameter(name + ".b", Tensor::zeros({cout}, true));
}

void ConvLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&w);
  if (b.tensor.defined()) out.push_back(&b);
}

GroupNormLayer::GroupNormLayer(const std::string& name, int channels, int g) : groups(g) {
  gain = Parameter(name + ".gain", Tensor::full({channels}, 1.0f, true));
  bias = Parameter(name + ".bias", Tensor::zeros({channels}, true));
}

void GroupNormLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

LayerNormLayer::LayerNormLayer(const std::string& name, int dim, float gain_init) {
  gain = Parameter(name + ".gain", Tensor::full({dim}, gain_init, true));
  bias = Parameter(name + ".bias", Tensor::zeros({dim}, true));
}

float residual_branch_gain() { return 0.1f; }

void LayerNormLayer::collect(std::vector<Parameter*>& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

namespace {
// largest divisor of `channels` not exceeding 8
int norm_groups(int channels) {
  for (int g = std::min(8, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}
}  // namespace

ZeroPreservingResBlock::ZeroPreservingResBlock(const std::string& name, int channels,
                                               Rng& rng)
    : conv1(name + ".conv1", channels, channels, 3, 1, 1, rng),
      conv2(name + ".conv2", channels, channels, 3, 1, 1, rng) {
  // biases off: swish(0) = 0 and conv(0) = 0 keep the whole block at zero
  conv1.b = Parameter();
  conv2.b = Parameter();
}

Tensor ZeroPreservingResBlock::operator()(const Tensor& x) const {
  return add(x, conv2(swish(conv1(swish(x)))));
}

void ZeroPreservingResBlock::collect(std::vector<Parameter*>& out) {
  conv1.collect(out);
  conv2.collect(out);
}

ResBlock::ResBlock(const std::string& name, int channels, Rng& rng)
    : gn1(name + ".gn1", channels, norm_groups(channels)),
      gn2(name + ".gn2", channels, norm_groups(channels)),
      conv1(name + ".conv1", channels, channels, 3, 1, 1, rng),
      conv2(name + ".conv2", channels, channels, 3, 1, 1, rng) {}

Tensor ResBlock::operator()(const Tensor& x) const {
  Tensor h = conv1(swish(gn1(x)));
  h = conv2(swish(gn2(h)));
  return add(x, h);
}

void ResBlock::collect(std::vector<Parameter*>& out) {
  gn1.collect(out);
  conv1.collect(out);
  gn2.collect(out);
  conv2.collect(out);
}

}  // namespace stratgen
