#pragma once

#include "driftgate/autodiff.hpp"

#include <functional>
#include <span>

namespace driftgate::ad {

/// Builds a scalar loss from a tracked input living in a fresh graph.
using ScalarFunction = std::function<Var(Var input)>;

/// Gradient of f at point by reverse mode.
Tensor analytic_gradient(const ScalarFunction& f, const Tensor& point);

/// Max over coordinates of |analytic - central difference| / (|central difference| + 1e-8).
/// An empty coordinate list checks every coordinate.
double grad_check(const ScalarFunction& f, const Tensor& point, double step = 1e-5,
                  std::span<const std::size_t> coordinates = {});

} // namespace driftgate::ad
