#pragma once

// End-to-end workflow shared by the CLI and the acceptance run:
// normalize -> segment -> gate -> train (three arms) -> forecast -> score.

#include "driftgate/data.hpp"
#include "driftgate/metrics.hpp"
#include "driftgate/model.hpp"
#include "driftgate/segmentation.hpp"
#include "driftgate/train.hpp"
#include "driftgate/transfer_gate.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace driftgate {

struct KernelSection {
    std::optional<double> bandwidth; // empty: median heuristic over the pooled rows
    MmdEstimator estimator = MmdEstimator::biased;
    std::size_t max_rows = 2000; // per set, for gate distances
};

struct PipelineConfig {
    std::uint64_t seed = 7;
    // data
    std::size_t source_wells = 30;
    std::size_t target_wells = 8;
    WindowConfig windows;
    SplitFractions fractions;
    std::size_t test_windows = 0; // per well, evenly strided (0 = all)
    SegmentationConfig segmentation;
    KernelSection kernel;
    ModelConfig model;
    TrainConfig train;
    std::size_t pretrain_epochs = 0; // fine-tune baseline source phase (0 = train.epochs)
    bool ablation = true;            // bench: static-branch ablation on the source block

    /// Model config with the window geometry copied in.
    ModelConfig resolved_model() const;
    void validate() const;
};

/// Sections {data, segmentation, kernel, model, train}; missing keys keep
/// their defaults, unknown keys are rejected.
PipelineConfig parse_pipeline_config(std::string_view json_text, PipelineConfig base = {});
std::string pipeline_config_json(const PipelineConfig& config);

std::string_view averaging_name(PairAveraging a) noexcept;
PairAveraging parse_averaging(std::string_view name);
std::string_view estimator_name(MmdEstimator e) noexcept;
MmdEstimator parse_estimator(std::string_view name);

// ---- stages ---------------------------------------------------------------

struct PreparedData {
    WellSplit source_split;
    WellSplit target_split;
    NormalizationParams normalization; // fit on the source and target training wells
    WellDataset source_train;          // normalized
    WellDataset target_train;          // normalized
    SeriesView source_series;
    SampleSet target_rows;
    KernelConfig kernel; // bandwidth resolved
};

PreparedData prepare(const WellDataset& source, const WellDataset& target, const PipelineConfig& config);

/// Gate sample sets are strided to kernel.max_rows rows.
TransferPlan gate(const PreparedData& data, const Partition& partition, const PipelineConfig& config);

std::string partition_json(const Partition& p);
Partition parse_partition_json(std::string_view text);
std::string transfer_plan_json(const TransferPlan& plan);

/// Normalized windows of the listed wells.
std::vector<WindowSample> windows_for(const WellDataset& raw, const std::vector<std::string>& ids,
                                      const NormalizationParams& norm, const WindowConfig& cfg);

/// Target train/validation windows and the source training windows split by segment.
DomainBundle make_bundle(const WellDataset& target, const PreparedData& data, const Partition& partition,
                         const TransferPlan& plan, const PipelineConfig& config);

// ---- forecasting ----------------------------------------------------------

struct Forecast {
    std::vector<ForecastRow> predictions; // de-normalized, clamped at 0
    std::vector<ForecastRow> actuals;     // raw values
    AttentionSummary attention;
};

/// Throws ValidationError when the checkpoint has no normalization or its
/// geometry does not fit the data.
Forecast forecast(const Checkpoint& checkpoint, const WellDataset& raw, std::size_t max_windows_per_well = 0);
MetricsReport score(const Forecast& f, const std::string& config_digest = {});

// ---- bench ----------------------------------------------------------------

struct ArmReport {
    std::string name;
    MetricsReport metrics;
    std::size_t best_epoch = 0;
    double best_val_rmse = 0.0;
    std::vector<EpochRecord> log;
    Checkpoint checkpoint;
};

struct BenchReport {
    PipelineConfig config;
    Partition partition;
    TransferPlan plan;
    std::vector<ArmReport> arms;   // da, finetune, target_only
    std::vector<ArmReport> source; // static, ablation (source block)

    const ArmReport& arm(std::string_view name) const;
    std::string to_json() const;
    /// block,arm,scope,channel,n,rmse,mae,r2
    std::string to_csv() const;
};

/// threads > 1 runs the arms concurrently; results do not depend on it.
BenchReport run_bench(const WellDataset& source, const WellDataset& target, const PipelineConfig& config,
                      std::size_t threads = 1, std::ostream* progress = nullptr);

/// DRIFTGATE_THREADS if set and positive, else the hardware concurrency.
std::size_t thread_budget();

// ---- provenance -----------------------------------------------------------

struct RunManifest {
    std::string command;
    std::vector<std::string> arguments;
    std::uint64_t seed = 0;
    std::vector<std::string> config_paths;
    std::string config_json;
    std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
    std::vector<std::pair<std::string, std::string>> outputs; // path, digest
    std::optional<Partition> partition;
    std::optional<TransferPlan> plan;
    std::string checkpoint;
    std::string started;
    std::string finished;

    std::string to_json() const;
};

/// Digest of a file's bytes.
std::string file_digest(const std::filesystem::path& path);
/// UTC, ISO 8601.
std::string utc_timestamp();

} // namespace driftgate
