#include "driftgate/grad_check.hpp"

#include "driftgate/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace driftgate::ad {

namespace {

double evaluate(const ScalarFunction& f, const Tensor& point)
{
    Graph g;
    Var out = f(g.constant(point));
    if (out.value().size() != 1)
        throw ShapeError("grad_check: function output must be scalar, got " +
                         shape_string(out.shape()));
    return out.value().item();
}

} // namespace

Tensor analytic_gradient(const ScalarFunction& f, const Tensor& point)
{
    Graph g;
    Var x = g.parameter(point);
    Var out = f(x);
    if (out.value().size() != 1)
        throw ShapeError("grad_check: function output must be scalar, got " +
                         shape_string(out.shape()));
    if (!out.tracked())
        return Tensor(point.shape(), 0.0);
    return g.backward(out)[x];
}

double grad_check(const ScalarFunction& f, const Tensor& point, double step,
                  std::span<const std::size_t> coordinates)
{
    const Tensor analytic = analytic_gradient(f, point);
    std::vector<std::size_t> all;
    if (coordinates.empty()) {
        all.resize(point.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        coordinates = all;
    }
    double worst = 0.0;
    Tensor probe = point;
    for (std::size_t c : coordinates) {
        const double original = probe[c];
        probe[c] = original + step;
        const double up = evaluate(f, probe);
        probe[c] = original - step;
        const double down = evaluate(f, probe);
        probe[c] = original;
        const double numeric = (up - down) / (2.0 * step);
        worst = std::max(worst, std::abs(analytic[c] - numeric) / (std::abs(numeric) + 1e-8));
    }
    return worst;
}

} // namespace driftgate::ad
