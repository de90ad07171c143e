#pragma once

// Well data: schema, CSV I/O, synthetic block generation, min-max scaling,
// sliding windows and per-well splits.

#include "driftgate/errors.hpp"
#include "driftgate/segmentation.hpp"
#include "driftgate/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace driftgate {

inline constexpr std::size_t kStaticCount = 10;
inline constexpr std::size_t kDynamicCount = 4;
inline constexpr std::array<std::string_view, kStaticCount> kStaticColumns{
    "Lw", "Wv", "Fsl", "Ns", "Fsi", "Is", "Ad", "TOC", "sigma_h", "phi"};
inline constexpr std::array<std::string_view, kDynamicCount> kDynamicColumns{"whp", "flp", "gas", "water"};
inline constexpr std::size_t kGas = 2;
inline constexpr std::size_t kWater = 3;

using StaticVector = std::array<double, kStaticCount>;
using DynamicRow = std::array<double, kDynamicCount>;

struct WellRecord {
    std::string id;
    StaticVector static_features{};
    std::vector<DynamicRow> dynamic; // row index = day

    friend bool operator==(const WellRecord&, const WellRecord&) = default;
};

struct WellDataset {
    std::vector<WellRecord> wells;

    const WellRecord& well(std::string_view id) const;
    friend bool operator==(const WellDataset&, const WellDataset&) = default;
};

/// Checks ids are unique and non-empty, values finite and production >= 0.
void validate_dataset(const WellDataset& data);

// ---- synthetic generation -------------------------------------------------

struct Range {
    double min = 0.0;
    double max = 0.0;
};

/// One operating period. Rates and decline inside the period are the base
/// Arps curve scaled by these multipliers.
struct Regime {
    std::size_t start_day = 0;
    double flowline_pressure = 3.0; // set point, MPa
    double rate_multiplier = 1.0;
    double decline_multiplier = 1.0;
    double water_multiplier = 1.0;
};

struct BlockSpec {
    std::string name = "block";
    std::size_t well_count = 10;
    std::size_t series_length = 400; // days
    std::array<Range, kStaticCount> static_ranges{};
    // q_i = base_rate * exp(sum_k rate_coef[k] * u_k), u_k in [-0.5, 0.5] the
    // well's position inside static range k; likewise for D_i and b.
    double base_rate = 12.0;     // 1e4 m3/d
    double base_decline = 0.0015; // 1/day
    double base_exponent = 0.6;
    std::array<double, kStaticCount> rate_coef{};
    std::array<double, kStaticCount> decline_coef{};
    std::array<double, kStaticCount> exponent_coef{};
    std::array<double, kStaticCount> water_coef{};
    double water_ratio = 2.0;    // initial water rate per unit q_i, m3/d
    double water_decay = 0.0015;  // 1/day
    double gas_noise = 0.05;     // lognormal sigma
    double water_noise = 0.05;
    double pressure_noise = 0.1; // MPa
    double drawdown_coef = 0.35; // whp - flp per unit gas rate
    std::vector<Regime> regimes{Regime{}};
    std::uint64_t seed = 1;
};

/// Table 1 static bounds.
std::array<Range, kStaticCount> block_a_ranges();
std::array<Range, kStaticCount> block_b_ranges();

/// Arps hyperbolic rate; exponential when b < 1e-6.
double arps_rate(double qi, double di, double b, double t);

/// Throws ValidationError for inconsistent specs.
WellDataset generate_block(const BlockSpec& spec);

struct Scenario {
    BlockSpec source;
    BlockSpec target;
};

/// Source block with a six-period operating schedule on unit boundaries,
/// target block from the Block B ranges under one low-pressure regime.
Scenario paper_like_scenario(std::uint64_t seed, std::size_t source_wells = 30, std::size_t target_wells = 8);

// ---- CSV ------------------------------------------------------------------

WellDataset load_csv(const std::filesystem::path& static_path, const std::filesystem::path& dynamic_path);
void write_csv(const WellDataset& data, const std::filesystem::path& static_path,
               const std::filesystem::path& dynamic_path);

// ---- normalization --------------------------------------------------------

struct ColumnRange {
    double min = 0.0;
    double max = 1.0;
    friend bool operator==(const ColumnRange&, const ColumnRange&) = default;
};

class NormalizationParams {
public:
    NormalizationParams() = default;

    static NormalizationParams fit(const WellDataset& train);
    static NormalizationParams fit(const std::vector<const WellDataset*>& train);

    const ColumnRange& column(std::string_view name) const;
    void set(std::string_view name, ColumnRange range);
    const std::map<std::string, ColumnRange, std::less<>>& columns() const noexcept { return columns_; }

    /// (x - min) / (max - min), with the denominator guarded to 1 for constant columns.
    double apply(std::string_view name, double x) const;
    double invert(std::string_view name, double y) const;
    WellDataset apply(const WellDataset& data) const;
    WellDataset invert(const WellDataset& data) const;

    std::string to_json() const;
    static NormalizationParams from_json(std::string_view text);

    friend bool operator==(const NormalizationParams&, const NormalizationParams&) = default;

private:
    std::map<std::string, ColumnRange, std::less<>> columns_;
};

// ---- windows and splits ---------------------------------------------------

struct WindowConfig {
    std::size_t input_len = 120;
    std::size_t horizon = 30;
    std::size_t stride = 1;
    /// Dynamic columns fed to the model: 4 (whp, flp, gas, water) or 2 (gas, water).
    std::size_t dynamic_features = 4;
};

/// dynamic [input_len, features] (time-major), static [10], target [horizon, 2] (gas, water).
struct WindowSample {
    std::string well_id;
    std::size_t start = 0; // first input day
    Tensor dynamic;
    Tensor static_features;
    Tensor target;

    std::size_t first_forecast_day(const WindowConfig& cfg) const { return start + cfg.input_len; }
};

std::vector<WindowSample> make_windows(const WellRecord& well, const WindowConfig& cfg = {});
std::vector<WindowSample> make_windows(const WellDataset& data, const WindowConfig& cfg = {});

struct SplitFractions {
    double train = 0.7;
    double validation = 0.2;
    double test = 0.1;
};

struct WellSplit {
    std::vector<std::string> train, validation, test;
};

/// Validation and test get at least one well each, floor otherwise; the rest trains.
WellSplit split_wells(const std::vector<std::string>& ids, const SplitFractions& fractions, std::uint64_t seed);

struct SampleSplit {
    std::vector<WindowSample> train, validation, test;
};

SampleSplit split_samples(std::vector<WindowSample> samples, const SplitFractions& fractions, std::uint64_t seed);

/// Subset of wells by id, in the order given.
WellDataset select_wells(const WellDataset& data, const std::vector<std::string>& ids);

/// Day-aligned block series for segmentation: one row per (day, well) of the
/// normalized dynamic columns, for days every well covers.
SeriesView block_series(const WellDataset& normalized);

} // namespace driftgate
