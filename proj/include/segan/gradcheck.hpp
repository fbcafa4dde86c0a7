#pragma once

#include <functional>
#include <string>
#include <vector>

#include "segan/graph.hpp"

namespace segan {

/// Builds a scalar from a fresh graph. The checked tensor must enter the graph
/// through Graph::param so that its gradient is collected.
template <typename T>
using ScalarFn = std::function<Var<T>(Graph<T>&)>;

/// Compares the backward() gradient of fn w.r.t. x against central differences
/// (fn(x + eps e_i) - fn(x - eps e_i)) / (2 eps), coordinate by coordinate.
/// Returns max_i |analytic - numeric| / max(1, |analytic| + |numeric|).
/// x is restored before returning; its grad buffer holds the analytic gradient.
template <typename T>
double finite_diff_check(const ScalarFn<T>& fn, Tensor<T>& x, double eps);

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Every layer kind w.r.t. inputs and parameters, plus the full
/// segmentor -> mask -> critic -> multi-scale loss pipeline, in double precision
/// on inputs no larger than 6x6. Deterministic for a given seed.
std::vector<GradCheckResult> run_gradient_suite(unsigned seed = 7, double tolerance = 1e-4);

}  // namespace segan
