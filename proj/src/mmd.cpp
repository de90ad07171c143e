#include "driftgate/mmd.hpp"

#include "driftgate/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace driftgate {

SampleSet::SampleSet(Tensor rows) : rows_(std::move(rows))
{
    if (rows_.rank() != 2)
        throw ShapeError("sample set: rows must be rank 2, got " + shape_string(rows_.shape()));
    if (!rows_.all_finite())
        throw ValidationError("sample set: non-finite entry");
}

double rbf_kernel(std::span<const double> x, std::span<const double> y, double bandwidth)
{
    if (x.size() != y.size())
        throw ShapeError("rbf_kernel: dimension mismatch " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
    if (!(bandwidth > 0.0))
        throw ValidationError("rbf_kernel: bandwidth must be positive");
    double d2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double diff = x[k] - y[k];
        d2 += diff * diff;
    }
    return std::exp(-d2 / (2.0 * bandwidth * bandwidth));
}

namespace {

double median_of(std::vector<double>& v)
{
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1)
        return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

double bandwidth_from_rows(const std::vector<std::span<const double>>& rows)
{
    std::vector<double> dists;
    dists.reserve(rows.size() * (rows.size() - 1) / 2);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i + 1; j < rows.size(); ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < rows[i].size(); ++k) {
                const double diff = rows[i][k] - rows[j][k];
                d2 += diff * diff;
            }
            dists.push_back(std::sqrt(d2));
        }
    if (dists.empty())
        throw ValidationError("median_bandwidth: need at least 2 rows");
    double med = median_of(dists);
    if (med > 0.0)
        return med;
    std::erase_if(dists, [](double d) { return d == 0.0; });
    if (dists.empty())
        throw ValidationError("median_bandwidth: degenerate bandwidth, all rows identical");
    return median_of(dists);
}

std::vector<std::span<const double>> strided_rows(const SampleSet& s, std::size_t take)
{
    std::vector<std::span<const double>> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        out.push_back(s.row(i * s.size() / take));
    return out;
}

} // namespace

SampleSet strided_subset(const SampleSet& s, std::size_t max_rows)
{
    if (max_rows == 0 || max_rows >= s.size())
        return s;
    const std::size_t d = s.dim();
    Tensor out(Shape{max_rows, d});
    auto rows = strided_rows(s, max_rows);
    for (std::size_t i = 0; i < max_rows; ++i)
        std::copy(rows[i].begin(), rows[i].end(), out.data() + i * d);
    return SampleSet(std::move(out));
}

double median_bandwidth(const SampleSet& pooled, std::size_t max_rows)
{
    return bandwidth_from_rows(strided_rows(pooled, std::min(pooled.size(), max_rows)));
}

double median_bandwidth(const SampleSet& a, const SampleSet& b, std::size_t max_rows)
{
    if (a.dim() != b.dim())
        throw ShapeError("median_bandwidth: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
    const std::size_t total = a.size() + b.size();
    if (total <= max_rows) {
        auto rows = strided_rows(a, a.size());
        auto rb = strided_rows(b, b.size());
        rows.insert(rows.end(), rb.begin(), rb.end());
        return bandwidth_from_rows(rows);
    }
    // keep the pooled proportions when subsampling
    const std::size_t take_a = std::max<std::size_t>(1, a.size() * max_rows / total);
    const std::size_t take_b = std::max<std::size_t>(1, max_rows - take_a);
    auto rows = strided_rows(a, std::min(take_a, a.size()));
    auto rb = strided_rows(b, std::min(take_b, b.size()));
    rows.insert(rows.end(), rb.begin(), rb.end());
    return bandwidth_from_rows(rows);
}

namespace {

double kernel_sum(const SampleSet& a, const SampleSet& b, double gamma, bool skip_diagonal)
{
    const std::size_t d = a.dim();
    const double* pa = a.tensor().data();
    const double* pb = b.tensor().data();
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double row_total = 0.0;
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (skip_diagonal && i == j)
                continue;
            double d2 = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = pa[i * d + k] - pb[j * d + k];
                d2 += diff * diff;
            }
            row_total += std::exp(-gamma * d2);
        }
        total += row_total;
    }
    return total;
}

bool ordered_before(const SampleSet& a, const SampleSet& b)
{
    if (a.size() != b.size())
        return a.size() < b.size();
    const auto va = a.tensor().values();
    const auto vb = b.tensor().values();
    return std::lexicographical_compare(va.begin(), va.end(), vb.begin(), vb.end());
}

} // namespace

double mmd_squared(const SampleSet& a_in, const SampleSet& b_in, const KernelConfig& config)
{
    if (a_in.dim() != b_in.dim())
        throw ShapeError("mmd_squared: dimension mismatch " + std::to_string(a_in.dim()) + " vs " +
                         std::to_string(b_in.dim()));
    if (a_in.size() == 0 || b_in.size() == 0)
        throw ValidationError("mmd_squared: empty sample set");
    if (!(config.bandwidth > 0.0))
        throw ValidationError("mmd_squared: bandwidth must be positive");
    const bool unbiased = config.estimator == MmdEstimator::unbiased;
    if (unbiased && (a_in.size() < 2 || b_in.size() < 2))
        throw ValidationError("mmd_squared: unbiased estimator needs at least 2 rows per set");

    // canonical argument order makes the floating-point result symmetric
    const bool swap = ordered_before(b_in, a_in);
    const SampleSet& a = swap ? b_in : a_in;
    const SampleSet& b = swap ? a_in : b_in;

    const double gamma = 1.0 / (2.0 * config.bandwidth * config.bandwidth);
    const double n = static_cast<double>(a.size());
    const double m = static_cast<double>(b.size());
    const double kab = kernel_sum(a, b, gamma, false) / (n * m);
    double kaa, kbb;
    if (unbiased) {
        kaa = kernel_sum(a, a, gamma, true) / (n * (n - 1.0));
        kbb = kernel_sum(b, b, gamma, true) / (m * (m - 1.0));
    } else {
        kaa = kernel_sum(a, a, gamma, false) / (n * n);
        kbb = kernel_sum(b, b, gamma, false) / (m * m);
    }
    const double value = (kaa + kbb) - 2.0 * kab;
    return unbiased ? value : std::max(0.0, value);
}

namespace ad {

Var mmd_squared(Var a, Var b, const KernelConfig& config)
{
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[1])
        throw ShapeError("mmd_squared: feature-width mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    if (!(config.bandwidth > 0.0))
        throw ValidationError("mmd_squared: bandwidth must be positive");
    const double gamma = 1.0 / (2.0 * config.bandwidth * config.bandwidth);
    auto kernel_mean = [&](Var x, Var y) { return mean(exp(scale(pairwise_sq_dist(x, y), -gamma))); };
    Var kaa = kernel_mean(a, a);
    Var kbb = kernel_mean(b, b);
    Var kab = kernel_mean(a, b);
    if (config.estimator == MmdEstimator::unbiased) {
        const double n = static_cast<double>(a.shape()[0]);
        const double m = static_cast<double>(b.shape()[0]);
        if (n < 2 || m < 2)
            throw ValidationError("mmd_squared: unbiased estimator needs at least 2 rows per set");
        // drop the unit diagonal: (n^2 mean - n) / (n (n-1))
        Graph& g = a.graph();
        kaa = add(scale(kaa, n / (n - 1.0)), g.constant(Tensor::vector({-1.0 / (n - 1.0)})));
        kbb = add(scale(kbb, m / (m - 1.0)), g.constant(Tensor::vector({-1.0 / (m - 1.0)})));
    }
    return add(add(kaa, kbb), scale(kab, -2.0));
}

} // namespace ad

} // namespace driftgate
