#include "driftgate/transfer_gate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace driftgate {

std::vector<std::size_t> TransferPlan::transferable_indices() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < transferable.size(); ++i)
        if (transferable[i])
            out.push_back(i);
    return out;
}

double subdomain_distance(const SampleSet& target, const SampleSet& subdomain, const KernelConfig& config)
{
    return mmd_squared(target, subdomain, config);
}

double global_average_distance(std::span<const double> distances)
{
    if (distances.size() < 3)
        throw TooFewSubdomainsError("the transfer threshold needs at least 3 sub-domains, got " +
                                    std::to_string(distances.size()));
    for (double d : distances)
        if (!std::isfinite(d) || d < 0.0)
            throw ValidationError("sub-domain distances must be finite and non-negative");
    // min_element/max_element return the earliest extreme
    const auto lo = static_cast<std::size_t>(std::min_element(distances.begin(), distances.end()) - distances.begin());
    auto hi = static_cast<std::size_t>(std::max_element(distances.begin(), distances.end()) - distances.begin());
    if (hi == lo) // all equal: drop the first two
        hi = lo + 1;
    double sum = 0.0;
    for (std::size_t i = 0; i < distances.size(); ++i)
        if (i != lo && i != hi)
            sum += distances[i];
    return sum / static_cast<double>(distances.size() - 2);
}

TransferPlan make_transfer_plan(std::vector<double> distances, const KernelConfig& config)
{
    TransferPlan plan;
    plan.threshold = global_average_distance(distances);
    plan.distances = std::move(distances);
    plan.kernel = config;
    for (double d : plan.distances)
        plan.transferable.push_back(d <= plan.threshold);
    return plan;
}

TransferPlan build_transfer_plan(const SampleSet& target, const Partition& partition, const SeriesView& source,
                                 const KernelConfig& config, std::size_t max_rows)
{
    if (partition.boundaries.size() + 1 != partition.segments)
        throw ValidationError("partition boundary count does not match its segment count");
    if (!partition.boundaries.empty() && partition.boundaries.back() >= source.steps())
        throw ValidationError("partition does not fit the source series");
    const SampleSet t = strided_subset(target, max_rows);
    std::vector<double> distances;
    std::size_t begin = 0;
    for (std::size_t i = 0; i < partition.segments; ++i) {
        const std::size_t end = i < partition.boundaries.size() ? partition.boundaries[i] : source.steps();
        distances.push_back(subdomain_distance(t, source.segment_rows(begin, end, max_rows), config));
        begin = end;
    }
    return make_transfer_plan(std::move(distances), config);
}

} // namespace driftgate
