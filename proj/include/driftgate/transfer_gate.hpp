#pragma once

// Admits a source sub-domain for weight sharing when its distance to the
// target does not exceed the trimmed mean of all sub-domain distances.

#include "driftgate/mmd.hpp"
#include "driftgate/segmentation.hpp"

#include <span>
#include <vector>

namespace driftgate {

struct TransferPlan {
    std::vector<double> distances;
    double threshold = 0.0;
    std::vector<bool> transferable;
    KernelConfig kernel;

    std::vector<std::size_t> transferable_indices() const;
};

class TooFewSubdomainsError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

double subdomain_distance(const SampleSet& target, const SampleSet& subdomain, const KernelConfig& config);

/// Mean after dropping one largest and one smallest value (earliest index on
/// ties). Needs at least 3 finite, non-negative distances.
double global_average_distance(std::span<const double> distances);

/// Gate decision from precomputed distances.
TransferPlan make_transfer_plan(std::vector<double> distances, const KernelConfig& config);

/// Distances are computed on at most max_rows evenly strided rows per set (0 = all).
TransferPlan build_transfer_plan(const SampleSet& target, const Partition& partition, const SeriesView& source,
                                 const KernelConfig& config, std::size_t max_rows = 0);

} // namespace driftgate
