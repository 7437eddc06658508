#include "stripflow/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace stripflow {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

void Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
}

void Tensor::zero_grad() {
  if (!grad.empty()) grad.assign(data.size(), 0.0f);
}

TensorPtr make_tensor(Shape shape, float fill, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
  }
  auto t = std::make_shared<Tensor>();
  t->data.assign(static_cast<size_t>(numel(shape)), fill);
  t->shape = std::move(shape);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr make_tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
  }
  if (static_cast<int64_t>(data.size()) != numel(shape)) {
    throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

namespace {

void topo_visit(Tensor* node, std::unordered_set<Tensor*>& seen, std::vector<Tensor*>& order) {
  // Iterative DFS; recursion would overflow on long iteration chains.
  struct Frame {
    Tensor* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node, 0});
  seen.insert(node);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Tensor* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace

void backward(const TensorPtr& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->size() != 1) {
    throw std::invalid_argument("backward requires a scalar root, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) return;

  std::unordered_set<Tensor*> seen;
  std::vector<Tensor*> order;
  topo_visit(root.get(), seen, order);

  for (Tensor* t : order) t->ensure_grad();
  root->grad[0] += 1.0f;

  // order is post-order (parents before children), so walk it backwards.
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

void check_finite(const Tensor& t, const char* what) {
  for (float v : t.data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(what) + ": non-finite value in tensor " + shape_str(t.shape));
    }
  }
}

}  // namespace stripflow
