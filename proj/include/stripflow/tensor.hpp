#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace stripflow {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major float32 tensor with an optional same-shape gradient
// buffer. Nodes form a DAG through `parents`; `backward_fn` reads this
// node's grad and accumulates into the parents' grads.
//
// Values are immutable after an op constructs the node; only grad buffers
// mutate, and only on the single thread running backward().
struct Tensor : std::enable_shared_from_this<Tensor> {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until ensure_grad(); length == data.size() after
  bool requires_grad = false;

  std::vector<TensorPtr> parents;
  std::function<void()> backward_fn;
  const char* op = "leaf";

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  void ensure_grad();
  void zero_grad();
  bool has_grad() const { return !grad.empty(); }
};

TensorPtr make_tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
TensorPtr make_tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

// Reverse-mode sweep from a scalar root. Rejects non-scalar roots.
// Gradient accumulation is additive across uses of the same tensor; callers
// zero leaf grads between optimization steps.
void backward(const TensorPtr& root);

// Throws if the tensor holds a NaN or Inf.
void check_finite(const Tensor& t, const char* what);

}  // namespace stripflow
