#include "driftgate/segmentation.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <utility>

namespace driftgate {

SeriesView::SeriesView(Tensor rows) : rows_(std::move(rows))
{
    if (rows_.rank() != 2)
        throw ShapeError("series rows must be rank 2, got " + shape_string(rows_.shape()));
    offsets_.resize(rows_.dim(0) + 1);
    for (std::size_t i = 0; i < offsets_.size(); ++i)
        offsets_[i] = i;
}

SeriesView::SeriesView(Tensor rows, std::vector<std::size_t> step_offsets)
    : rows_(std::move(rows)), offsets_(std::move(step_offsets))
{
    if (rows_.rank() != 2)
        throw ShapeError("series rows must be rank 2, got " + shape_string(rows_.shape()));
    if (offsets_.size() < 2 || offsets_.front() != 0 || offsets_.back() != rows_.dim(0))
        throw ValidationError("step offsets must start at 0 and end at the row count");
    for (std::size_t i = 1; i < offsets_.size(); ++i)
        if (offsets_[i] <= offsets_[i - 1])
            throw ValidationError("every time step needs at least one row (step " +
                                  std::to_string(i - 1) + ")");
}

SampleSet SeriesView::segment_rows(std::size_t begin, std::size_t end, std::size_t max_rows) const
{
    if (begin >= end || end > steps())
        throw ValidationError("bad segment [" + std::to_string(begin) + ", " + std::to_string(end) + ")");
    const std::size_t first = offsets_[begin];
    const std::size_t count = offsets_[end] - first;
    const std::size_t take = max_rows == 0 ? count : std::min(count, max_rows);
    const std::size_t d = dim();
    Tensor out(Shape{take, d});
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t src = first + i * count / take;
        std::copy_n(rows_.data() + src * d, d, out.data() + i * d);
    }
    return SampleSet(std::move(out));
}

namespace {

void validate(const SeriesView& series, const SegmentationConfig& config)
{
    if (config.max_segments < 2 || config.max_segments > config.unit_count)
        throw ValidationError("need 2 <= K0 <= unit count (K0=" + std::to_string(config.max_segments) +
                              ", units=" + std::to_string(config.unit_count) + ")");
    if (series.steps() < config.unit_count)
        throw ValidationError("series has " + std::to_string(series.steps()) +
                              " time steps, fewer than the " + std::to_string(config.unit_count) +
                              " base units");
}

// Squared MMD between segments, memoized by the (begin, end) step ranges.
class SegmentDistances {
public:
    SegmentDistances(const SeriesView& series, const KernelConfig& kernel, std::size_t max_rows)
        : series_(series), kernel_(kernel), max_rows_(max_rows) {}

    double operator()(std::pair<std::size_t, std::size_t> a, std::pair<std::size_t, std::size_t> b)
    {
        if (b < a)
            std::swap(a, b);
        const auto key = std::make_pair(a, b);
        if (auto it = cache_.find(key); it != cache_.end())
            return it->second;
        const double v = mmd_squared(rows(a), rows(b), kernel_);
        cache_.emplace(key, v);
        return v;
    }

private:
    const SampleSet& rows(std::pair<std::size_t, std::size_t> seg)
    {
        auto it = rows_.find(seg);
        if (it == rows_.end())
            it = rows_.emplace(seg, series_.segment_rows(seg.first, seg.second, max_rows_)).first;
        return it->second;
    }

    const SeriesView& series_;
    KernelConfig kernel_;
    std::size_t max_rows_;
    std::map<std::pair<std::size_t, std::size_t>, SampleSet> rows_;
    std::map<std::pair<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>>, double>
        cache_;
};

std::vector<std::pair<std::size_t, std::size_t>> segments_of(const std::vector<std::size_t>& boundaries,
                                                             std::size_t steps)
{
    std::vector<std::pair<std::size_t, std::size_t>> segs;
    std::size_t begin = 0;
    for (std::size_t b : boundaries) {
        segs.emplace_back(begin, b);
        begin = b;
    }
    segs.emplace_back(begin, steps);
    return segs;
}

bool lengths_ok(const std::vector<std::pair<std::size_t, std::size_t>>& segs, const LengthBounds& bounds,
                bool check_upper)
{
    for (auto [b, e] : segs) {
        const std::size_t len = e - b;
        if (len <= bounds.lower || (check_upper && len >= bounds.upper))
            return false;
    }
    return true;
}

double objective(const std::vector<std::pair<std::size_t, std::size_t>>& segs, SegmentDistances& dist,
                 PairAveraging averaging)
{
    const std::size_t k = segs.size();
    if (k < 2)
        return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = i + 1; j < k; ++j)
            total += dist(segs[i], segs[j]);
    total *= 2.0; // ordered pairs
    const double kd = static_cast<double>(k);
    return averaging == PairAveraging::ordered_pairs ? total / (kd * (kd - 1.0)) : total / kd;
}

Partition greedy(const SeriesView& series, std::size_t segments, const std::vector<std::size_t>& units,
                 const SegmentationConfig& config, SegmentDistances& dist)
{
    if (segments < 2 || segments > units.size() + 1)
        throw ValidationError("segment count " + std::to_string(segments) + " outside [2, " +
                              std::to_string(units.size() + 1) + "]");
    const LengthBounds bounds = resolve_length_bounds(config, series.steps());
    std::vector<std::size_t> fixed;
    double best_value = 0.0;
    for (std::size_t k = 2; k <= segments; ++k) {
        const bool final_step = k == segments;
        bool found = false;
        std::size_t best_candidate = 0;
        best_value = 0.0;
        for (std::size_t c : units) {
            if (std::binary_search(fixed.begin(), fixed.end(), c))
                continue;
            auto trial = fixed;
            trial.insert(std::upper_bound(trial.begin(), trial.end(), c), c);
            const auto segs = segments_of(trial, series.steps());
            if (!lengths_ok(segs, bounds, final_step))
                continue;
            const double v = objective(segs, dist, config.averaging);
            if (!found || v > best_value) {
                found = true;
                best_value = v;
                best_candidate = c;
            }
        }
        if (!found)
            throw InfeasibleSplitError("no candidate boundary keeps segment lengths within (" +
                                       std::to_string(bounds.lower) + ", " + std::to_string(bounds.upper) +
                                       ") for K=" + std::to_string(k));
        fixed.insert(std::upper_bound(fixed.begin(), fixed.end(), best_candidate), best_candidate);
    }
    return Partition{fixed, segments, best_value};
}

} // namespace

LengthBounds resolve_length_bounds(const SegmentationConfig& config, std::size_t steps)
{
    LengthBounds b;
    b.lower = config.min_length.value_or(steps / (2 * std::max<std::size_t>(config.max_segments, 1)));
    b.upper = config.max_length.value_or(steps - b.lower);
    if (b.upper > steps || b.lower >= b.upper)
        throw ValidationError("segment length bounds need 0 <= min < max <= n (min=" + std::to_string(b.lower) +
                              ", max=" + std::to_string(b.upper) + ", n=" + std::to_string(steps) + ")");
    return b;
}

std::vector<std::size_t> base_units(const SeriesView& series, const SegmentationConfig& config)
{
    if (config.unit_count < 2)
        throw ValidationError("need at least 2 base units");
    const std::size_t n = series.steps();
    if (n < config.unit_count)
        throw ValidationError("series has " + std::to_string(n) + " time steps, fewer than the " +
                              std::to_string(config.unit_count) + " base units");
    const std::size_t base = n / config.unit_count;
    const std::size_t extra = n % config.unit_count;
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    for (std::size_t u = 0; u + 1 < config.unit_count; ++u) {
        pos += base + (u < extra ? 1 : 0);
        out.push_back(pos);
    }
    return out;
}

double partition_objective(const SeriesView& series, const std::vector<std::size_t>& boundaries,
                           const KernelConfig& kernel, const SegmentationConfig& config)
{
    if (!std::is_sorted(boundaries.begin(), boundaries.end()) ||
        std::adjacent_find(boundaries.begin(), boundaries.end()) != boundaries.end())
        throw ValidationError("boundaries must be strictly increasing");
    if (!boundaries.empty() && (boundaries.front() == 0 || boundaries.back() >= series.steps()))
        throw ValidationError("boundaries must lie inside (0, n)");
    const auto segs = segments_of(boundaries, series.steps());
    if (!lengths_ok(segs, resolve_length_bounds(config, series.steps()), true))
        throw ValidationError("a segment length falls outside the configured bounds");
    SegmentDistances dist(series, kernel, config.max_rows_per_segment);
    return objective(segs, dist, config.averaging);
}

Partition greedy_split(const SeriesView& series, std::size_t segments, const std::vector<std::size_t>& units,
                       const KernelConfig& kernel, const SegmentationConfig& config)
{
    if (!std::is_sorted(units.begin(), units.end()))
        throw ValidationError("unit boundaries must be sorted");
    SegmentDistances dist(series, kernel, config.max_rows_per_segment);
    return greedy(series, segments, units, config, dist);
}

Partition select_partition(const SeriesView& series, const SegmentationConfig& config,
                           const KernelConfig& kernel)
{
    validate(series, config);
    const auto units = base_units(series, config);
    SegmentDistances dist(series, kernel, config.max_rows_per_segment);
    std::optional<Partition> best;
    std::optional<InfeasibleSplitError> last_error;
    for (std::size_t k = 2; k <= config.max_segments; ++k) {
        try {
            Partition p = greedy(series, k, units, config, dist);
            if (!best || p.objective > best->objective)
                best = std::move(p);
        } catch (const InfeasibleSplitError& e) {
            last_error = e;
        }
    }
    if (!best)
        throw *last_error;
    return *best;
}

} // namespace driftgate
