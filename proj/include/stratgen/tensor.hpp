#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stratgen/common.hpp"

namespace stratgen {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;  // captures the buffers it touches
};

// Dense float32 array with optional gradient and an autograd tape node.
// Copies are shallow: they share data, grad and node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, float stddev, bool requires_grad = false);
  // Truncated normal (2 sigma), the transformer/embedding init.
  static Tensor trunc_normal(Shape shape, Rng& rng, float stddev, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  Shape shape;
  std::shared_ptr<std::vector<float>> data;
  std::shared_ptr<std::vector<float>> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::shared_ptr<Node> node;

  bool defined() const { return static_cast<bool>(data); }
  int64_t size() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const;

  float* ptr() { return data->data(); }
  const float* ptr() const { return data->data(); }
  float* gptr() { return grad->data(); }
  const float* gptr() const { return grad->data(); }

  float item() const;  // scalar tensors only
  void zero_grad();
  bool all_finite() const;

  // Detached deep copy without grad tracking.
  Tensor clone_data() const;
};

// Leaf tensor with a stable checkpoint name.
struct Parameter {
  std::string name;
  Tensor tensor;

  Parameter() = default;
  Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) {}
};

bool grad_enabled();

// RAII switch that disables tape recording (inference / oracle paths).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();

 private:
  bool prev_;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate; caller zeroes.
void backward(const Tensor& loss);

}  // namespace stratgen
