#include "stratgen/tensor.hpp"

#include <malloc.h>

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace stratgen {

namespace {
// Training graphs churn multi-megabyte buffers every step; glibc would mmap
// and immediately return them to the kernel, paying page faults on every
// allocation. Keep them on the heap instead.
struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
  }
};
const MallocTuning g_malloc_tuning;
}  // namespace

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("shape extents must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

static thread_local bool g_grad_enabled = true;

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  int64_t n = shape_numel(shape);
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<float>>(n, 0.0f);
  t.requires_grad = requires_grad && g_grad_enabled;
  if (t.requires_grad) t.grad = std::make_shared<std::vector<float>>(n, 0.0f);
  return t;
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (float& v : *t.data) v = value;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size()))
    throw DimensionError("from: " + shape_str(shape) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values.size()));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<float>>(std::move(values));
  t.requires_grad = requires_grad && g_grad_enabled;
  if (t.requires_grad) t.grad = std::make_shared<std::vector<float>>(n, 0.0f);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (float& v : *t.data) v = static_cast<float>(rng.normal()) * stddev;
  return t;
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, float stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (float& v : *t.data) v = static_cast<float>(rng.trunc_normal()) * stddev;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

int Tensor::dim(int i) const {
  int n = ndim();
  if (i < 0) i += n;
  if (i < 0 || i >= n) throw DimensionError("dim index out of range");
  return shape[i];
}

float Tensor::item() const {
  if (size() != 1) throw ContractError("item: tensor is not scalar, shape " + shape_str(shape));
  return (*data)[0];
}

void Tensor::zero_grad() {
  if (grad)
    for (float& g : *grad) g = 0.0f;
}

bool Tensor::all_finite() const {
  for (float v : *data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::clone_data() const {
  Tensor t;
  t.shape = shape;
  t.data = std::make_shared<std::vector<float>>(*data);
  return t;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward: loss must be scalar, shape " + shape_str(loss.shape));
  if (!loss.requires_grad || !loss.grad) return;
  (*loss.grad)[0] += 1.0f;
  if (!loss.node) return;

  // Iterative post-order DFS; nodes visited once, order fixed by graph shape.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node.get(), 0});
  seen.insert(loss.node.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      Node* p = f.n->parents[f.next_parent++].get();
      if (p && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward();
  }
}

}  // namespace stratgen
