#pragma once

// Forecast accuracy metrics and the forecast CSV layout shared by predict
// and evaluate.

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace driftgate {

struct ChannelMetrics {
    double rmse = 0.0;
    double mae = 0.0;
    std::optional<double> r2; // empty when undefined
    std::string r2_note;      // reason when r2 is empty
    std::size_t count = 0;
};

/// RMSE, MAE and R^2 = 1 - SSE/SST (SST about the mean of the actuals).
/// Throws ShapeError on length mismatch and ValidationError on empty input.
ChannelMetrics compute_metrics(std::span<const double> predictions, std::span<const double> actuals);

inline constexpr std::array<const char*, 2> kOutputChannels{"gas", "water"};

/// One forecast value pair, keyed by (well, window start, horizon day).
struct ForecastRow {
    std::string well_id;
    std::size_t window_start = 0;
    std::size_t horizon_day = 0; // 0-based step inside the forecast horizon
    double gas = 0.0;
    double water = 0.0;

    friend bool operator==(const ForecastRow&, const ForecastRow&) = default;
};

/// Header: well_id,window_start,horizon_day,<prefix>gas<suffix>,<prefix>water<suffix>.
/// Predictions use the suffix "_pred", actuals none.
void write_forecast_csv(const std::vector<ForecastRow>& rows, const std::filesystem::path& path,
                        const std::string& value_suffix);
std::vector<ForecastRow> read_forecast_csv(const std::filesystem::path& path, const std::string& value_suffix);

struct MetricsReport {
    std::size_t count = 0;
    std::array<ChannelMetrics, 2> pooled;
    std::map<std::string, std::array<ChannelMetrics, 2>> per_well;
    std::string config_digest;
    /// Mean fusion attention weight per fused channel of the static block.
    std::vector<double> static_attention;
    double static_block_attention = 0.0;
};

/// Rows must match one to one on their keys, in order.
MetricsReport evaluate_forecasts(const std::vector<ForecastRow>& predictions, const std::vector<ForecastRow>& actuals);

std::string metrics_json(const MetricsReport& report);
/// scope,channel,n,rmse,mae,r2 with scope "pooled" or a well id.
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

/// Mean of the defined R^2 values over both channels; empty if none is defined.
std::optional<double> mean_r2(const MetricsReport& report);

/// FNV-1a 64-bit digest in hex.
std::string digest_hex(std::string_view text);

} // namespace driftgate
