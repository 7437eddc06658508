#pragma once

#include <functional>
#include <random>
#include <vector>

#include "stripflow/tensor.hpp"

namespace stripflow {

struct GradCheckReport {
  std::string op_name;
  double max_rel_err = 0.0;
  int probe_count = 0;
  double tolerance = 1e-3;
  bool passed() const { return max_rel_err < tolerance; }
};

// One registered check: `build` draws seeded leaf tensors and returns a
// closure that reconstructs the graph from the current leaf contents and
// yields a scalar root. Central differences perturb the leaf data in place,
// so the closure must be a pure function of it.
struct GradCheckCase {
  std::string name;
  double tolerance = 1e-3;
  double epsilon = 1e-3;
  std::function<std::pair<std::vector<TensorPtr>, std::function<TensorPtr()>>(std::mt19937_64&)> build;
};

// Compares analytic gradients against central differences on >= 8 probe
// coordinates (all coordinates when the leaves are small). Relative error
// uses denominator max(|analytic|, |numeric|, 1e-6).
GradCheckReport run_grad_check(const GradCheckCase& c, uint64_t seed);

// The registered differentiable primitives plus the CSC/CRI composite
// chains and the 2-iteration end-to-end probe (checked at 1e-2).
std::vector<GradCheckCase> standard_grad_checks();

// Looks up `op_name` in the standard registry; rejects unknown names.
GradCheckReport grad_check(const std::string& op_name, uint64_t seed, double epsilon);

// Fills a tensor with U[lo, hi) draws.
void fill_uniform(Tensor& t, std::mt19937_64& rng, float lo, float hi);

// sum(out ⊙ fixed random weights): scalarizes a tensor output so every
// output coordinate carries gradient signal.
TensorPtr scalarize(const TensorPtr& out, const TensorPtr& weights);
TensorPtr make_probe_weights(const Shape& shape, std::mt19937_64& rng);

}  // namespace stripflow
