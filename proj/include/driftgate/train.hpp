#pragma once

// Domain-adaptation training: one extractor shared by the target and every
// transferable sub-domain, a predictor head per domain, and the combined
// regression + MMD loss.

#include "driftgate/mmd.hpp"
#include "driftgate/model.hpp"
#include "driftgate/segmentation.hpp"
#include "driftgate/transfer_gate.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace driftgate {

// ---- losses ---------------------------------------------------------------

struct DomainOutput {
    ad::Var prediction;
    ad::Var target;
};

/// Target mean MSE plus the average of the sub-domain mean MSEs.
ad::Var regression_loss(const DomainOutput& target, std::span<const DomainOutput> subdomains);

/// Sum over sub-domains of the squared MMD between the flattened sub-domain
/// feature rows and the target feature rows. Each feature tensor is [B, ...]
/// and is flattened to one row per sample.
ad::Var domain_adaptation_loss(ad::Var target_features, std::span<const ad::Var> subdomain_features,
                               const KernelConfig& config);

/// regression + lambda * da
ad::Var total_loss(ad::Var regression, ad::Var da, double lambda);

// ---- optimizers -----------------------------------------------------------

enum class OptimizerKind { adam, sgd, rmsprop };

std::string_view optimizer_name(OptimizerKind kind) noexcept;
/// Case-insensitive; throws ValidationError on unknown names.
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double rms_decay = 0.99;
    double epsilon = 1e-8;
};

struct OptimizerState {
    std::size_t step = 0;
    std::vector<Tensor> first;  // Adam first moment
    std::vector<Tensor> second; // Adam / RMSprop second moment
};

/// In-place update of params[i] with grads[i]. State is sized on first use
/// and must be reused with the same parameter order.
void optimizer_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, OptimizerState& state,
                    const OptimizerConfig& config);

// ---- training -------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 1000;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double da_weight = 1.0;
    std::uint64_t seed = 0;
    /// Excluded sub-domains get their own extractor and head, trained on
    /// regression only.
    bool keep_nontransferable_heads = false;
    /// Ignore every sub-domain.
    bool target_only = false;
    /// Validation RMSE uses at most this many evenly strided windows (0 = all).
    std::size_t validation_windows = 64;
    std::size_t validation_every = 1;

    void validate() const;
};

struct DomainBundle {
    std::vector<WindowSample> target_train;
    std::vector<WindowSample> target_validation;
    std::vector<std::vector<WindowSample>> subdomains;
    TransferPlan plan; // plan.transferable indexes subdomains
};

/// Splits windows by the segment holding their first forecast day.
/// Boundaries are day indices; windows past the last day go to the last segment.
std::vector<std::vector<WindowSample>> partition_windows(std::vector<WindowSample> windows,
                                                         const Partition& partition, const WindowConfig& windows_cfg);

struct EpochRecord {
    std::size_t epoch = 0;
    double total = 0.0;
    double regression = 0.0;
    double da = 0.0;
    std::optional<double> val_rmse;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// One JSON object, no trailing newline.
std::string epoch_record_json(const EpochRecord& record);

struct TrainResult {
    ModelParameters final_params; // shared extractor + target head
    ModelParameters best_params;  // lowest validation RMSE (final when no validation)
    std::size_t best_epoch = 0;
    double best_val_rmse = std::numeric_limits<double>::infinity();
    std::vector<ParameterSet> subdomain_heads; // one per sub-domain; empty sets when unused
    std::vector<EpochRecord> log;
    double da_bandwidth = 0.0; // kernel bandwidth used by the DA term
};

struct FitOptions {
    /// Starting point; init_parameters(model, seed) when absent.
    std::optional<ModelParameters> initial;
    KernelConfig kernel;
    /// Replace kernel.bandwidth by the median heuristic on the initial fused
    /// features (target vs transferable sub-domains), frozen for the run.
    bool median_bandwidth = true;
    /// Receives one JSONL record per epoch.
    std::ostream* log = nullptr;
};

/// One epoch is one optimizer step over one batch per participating domain.
/// Batch-norm running statistics follow the target batches only.
/// Throws DivergedError on a non-finite loss.
TrainResult fit(const DomainBundle& bundle, const ModelConfig& model, const TrainConfig& train,
                const FitOptions& options = {});

/// Mean over output channels of the RMSE on normalized values.
double validation_rmse(const ModelParameters& params, const std::vector<WindowSample>& samples,
                       const ModelConfig& model, std::size_t max_windows = 0);

/// Median pairwise distance between flattened fused features of at most
/// max_windows strided target windows and as many pooled sub-domain windows,
/// computed with batch statistics and without touching running statistics.
double feature_bandwidth(const ModelParameters& params, const std::vector<WindowSample>& target,
                         const std::vector<const std::vector<WindowSample>*>& sources, const ModelConfig& model,
                         std::size_t max_windows = 64);

/// Pretrained extractor and batch-norm statistics with a fresh head.
ModelParameters transfer_extractor(const ModelParameters& pretrained, const ModelConfig& model, std::uint64_t seed);

// ---- grid search ----------------------------------------------------------

struct GridSpace {
    std::vector<std::size_t> heads{2, 4, 6, 8, 10};
    std::vector<std::size_t> encoder_layers{2, 4, 8, 12, 16};
    std::vector<std::size_t> decoder_layers{2, 4, 8, 12, 16};
    std::vector<std::size_t> mlp_hidden{20, 40, 60, 100};
    std::vector<std::size_t> batch_sizes{32, 64, 128, 256};
    std::vector<double> learning_rates{1e-3, 1e-4, 1e-5, 1e-6};
    std::vector<OptimizerKind> optimizers{OptimizerKind::adam, OptimizerKind::sgd, OptimizerKind::rmsprop};
    /// Empty: every candidate trains for GridOptions::epochs_per_candidate.
    /// 0 evaluates the untrained model.
    std::vector<std::size_t> epochs;

    std::size_t size() const;
};

struct GridCandidate {
    std::size_t index = 0;
    ModelConfig model;
    TrainConfig train;
};

struct GridOptions {
    std::size_t budget = 0; // 0 = whole grid, else an evenly strided subset
    std::size_t epochs_per_candidate = 100;
    std::size_t threads = 1;
    KernelConfig kernel;
};

/// Candidates in grid order. d_model is rounded up to a multiple of the head
/// count; the seed is derived from (base seed, index).
std::vector<GridCandidate> expand_grid(const GridSpace& space, const ModelConfig& base_model,
                                       const TrainConfig& base_train, const GridOptions& options = {});

struct GridEntry {
    GridCandidate candidate;
    double val_rmse = 0.0; // +inf when training diverged
};

struct GridResult {
    GridCandidate best;
    std::vector<GridEntry> leaderboard; // ascending val_rmse, ties by index
};

GridResult grid_search(const GridSpace& space, const DomainBundle& bundle, const ModelConfig& base_model,
                       const TrainConfig& base_train, const GridOptions& options = {});

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept;

} // namespace driftgate
