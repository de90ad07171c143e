#pragma once

#include "driftgate/autodiff.hpp"
#include "driftgate/tensor.hpp"

#include <span>

namespace driftgate {

/// N samples x d features, row-major, all finite, N >= 1.
class SampleSet {
public:
    SampleSet() = default;
    explicit SampleSet(Tensor rows);

    std::size_t size() const noexcept { return rows_.rank() ? rows_.dim(0) : 0; }
    std::size_t dim() const noexcept { return rows_.rank() ? rows_.dim(1) : 0; }
    std::span<const double> row(std::size_t i) const
    {
        return rows_.values().subspan(i * dim(), dim());
    }
    const Tensor& tensor() const noexcept { return rows_; }

private:
    Tensor rows_;
};

/// At most max_rows rows, evenly strided (0 or >= size keeps all).
SampleSet strided_subset(const SampleSet& s, std::size_t max_rows);

enum class MmdEstimator { biased, unbiased };

struct KernelConfig {
    double bandwidth = 1.0;
    MmdEstimator estimator = MmdEstimator::biased;
};

/// exp(-|x-y|^2 / (2 sigma^2))
double rbf_kernel(std::span<const double> x, std::span<const double> y, double bandwidth);

/// Median pairwise Euclidean distance over the pooled rows, on at most
/// max_rows evenly strided rows. Falls back to the median of the non-zero
/// distances when more than half the pairs coincide.
double median_bandwidth(const SampleSet& a, const SampleSet& b, std::size_t max_rows = 1000);
double median_bandwidth(const SampleSet& pooled, std::size_t max_rows = 1000);

/// Squared MMD via the kernel trick. The biased (V-statistic) estimate is
/// clamped at zero. Bit-for-bit symmetric in (a, b).
double mmd_squared(const SampleSet& a, const SampleSet& b, const KernelConfig& config);

namespace ad {
/// Differentiable squared MMD between two [n,d] / [m,d] row sets.
Var mmd_squared(Var a, Var b, const KernelConfig& config);
} // namespace ad

} // namespace driftgate
