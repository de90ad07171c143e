#pragma once

// Splits a source-domain time axis into K sub-domains whose row
// distributions are as far apart (squared MMD) as possible. Candidate split
// points are the boundaries of equal-length base units; splits are added
// greedily one at a time.

#include "driftgate/errors.hpp"
#include "driftgate/mmd.hpp"

#include <optional>
#include <vector>

namespace driftgate {

/// Rows grouped by chronological time step. A step owns one or more rows,
/// e.g. one row per well of a block on that day.
class SeriesView {
public:
    SeriesView() = default;
    /// One row per step.
    explicit SeriesView(Tensor rows);
    /// step_offsets has steps()+1 non-decreasing entries into the rows.
    SeriesView(Tensor rows, std::vector<std::size_t> step_offsets);

    std::size_t steps() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
    std::size_t dim() const noexcept { return rows_.rank() ? rows_.dim(1) : 0; }
    std::size_t row_count() const noexcept { return rows_.rank() ? rows_.dim(0) : 0; }
    const Tensor& rows() const noexcept { return rows_; }

    /// Rows of steps [begin, end); at most max_rows of them, evenly strided
    /// (0 = no cap).
    SampleSet segment_rows(std::size_t begin, std::size_t end, std::size_t max_rows = 0) const;

private:
    Tensor rows_;
    std::vector<std::size_t> offsets_;
};

enum class PairAveraging {
    /// sum over ordered pairs i != j divided by K(K-1); used to compare K
    ordered_pairs,
    /// the same sum divided by K
    segment_count,
};

struct SegmentationConfig {
    std::size_t max_segments = 10; // K0
    std::size_t unit_count = 10;
    /// Exclusive segment-length bounds in time steps; unset values are
    /// derived from the series length (see resolve_length_bounds).
    std::optional<std::size_t> min_length;
    std::optional<std::size_t> max_length;
    PairAveraging averaging = PairAveraging::ordered_pairs;
    std::size_t max_rows_per_segment = 400;
};

struct LengthBounds {
    std::size_t lower; // every segment length > lower
    std::size_t upper; // every segment length < upper
};

/// lower = n / (2 K0), upper = n - lower unless configured.
LengthBounds resolve_length_bounds(const SegmentationConfig& config, std::size_t steps);

struct Partition {
    std::vector<std::size_t> boundaries; // K-1 strictly increasing split steps
    std::size_t segments = 0;            // K
    double objective = 0.0;

    friend bool operator==(const Partition&, const Partition&) = default;
};

class InfeasibleSplitError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Interior boundaries of unit_count contiguous units; earlier units take the remainder.
std::vector<std::size_t> base_units(const SeriesView& series, const SegmentationConfig& config);

/// Pair-averaged squared-MMD spread of the segments cut at the given boundaries.
double partition_objective(const SeriesView& series, const std::vector<std::size_t>& boundaries,
                           const KernelConfig& kernel, const SegmentationConfig& config = {});

/// Adds K-1 splits one at a time, each the candidate that maximizes the
/// objective given the splits already fixed. Intermediate steps enforce only
/// the lower length bound; the final partition must satisfy both.
Partition greedy_split(const SeriesView& series, std::size_t segments,
                       const std::vector<std::size_t>& units, const KernelConfig& kernel,
                       const SegmentationConfig& config = {});

/// Best greedy partition over K = 2..K0; ties go to the smaller K.
Partition select_partition(const SeriesView& series, const SegmentationConfig& config,
                           const KernelConfig& kernel);

} // namespace driftgate
