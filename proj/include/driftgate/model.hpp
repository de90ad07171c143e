#pragma once

// Transformer-MLP forecaster. Dynamic windows go through a Transformer
// encoder and a decoder over learned horizon queries; static features go
// through an expansion layer and a three-layer MLP. Both are concatenated
// per horizon step, batch-normalized, gated by a softmax feature attention
// and mapped to the output channels by a linear head.
//
// All tensors are batch-first: dynamic [B, t, F], static [B, m],
// prediction [B, horizon, channels].

#include "driftgate/autodiff.hpp"
#include "driftgate/data.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace driftgate {

struct ModelConfig {
    std::size_t d_model = 48;
    std::size_t heads = 6;
    std::size_t encoder_layers = 4;
    std::size_t decoder_layers = 4;
    std::size_t mlp_hidden = 20;
    std::size_t dynamic_features = 4;
    std::size_t static_features = kStaticCount;
    std::size_t input_len = 120;
    std::size_t horizon = 30;
    std::size_t output_channels = 2;
    bool static_ablation = false;

    std::size_t head_dim() const { return d_model / heads; }
    std::size_t ff_width() const { return 2 * d_model; }
    /// Width of the fused per-step feature vector (decoder + static).
    std::size_t fusion_width() const { return 2 * d_model; }

    /// Throws ValidationError when counts are zero or d_model % heads != 0.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named tensors in insertion order.
class ParameterSet {
public:
    void add(std::string name, Tensor value);
    bool contains(std::string_view name) const;
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t scalar_count() const;

    friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
};

struct ModelParameters {
    ParameterSet extractor; // everything up to the fused features
    ParameterSet head;      // output linear layer
    ad::BatchNormStats fusion_stats;

    friend bool operator==(const ModelParameters& a, const ModelParameters& b)
    {
        return a.extractor == b.extractor && a.head == b.head &&
               a.fusion_stats.running_mean == b.fusion_stats.running_mean &&
               a.fusion_stats.running_var == b.fusion_stats.running_var;
    }
};

/// Glorot-uniform matrices, zero biases, unit norm scales.
ModelParameters init_parameters(const ModelConfig& config, std::uint64_t seed);
ParameterSet init_head(const ModelConfig& config, std::uint64_t seed);

/// Parameter leaves of one forward pass. Trainable sets become tracked
/// parameters, frozen ones constants.
class BoundParameters {
public:
    BoundParameters(ad::Graph& graph, const ParameterSet& set, bool trainable);
    ad::Var operator[](std::string_view name) const;
    /// Ids in ParameterSet order, for reading gradients back.
    const std::vector<ad::Var>& vars() const noexcept { return vars_; }

private:
    const ParameterSet* set_;
    std::vector<ad::Var> vars_;
};

// ---- building blocks ------------------------------------------------------

/// softmax(Q K^T / sqrt(d_k)) V for [L, d] or batched [B, L, d] operands.
/// `weights` receives the attention matrix when not null.
ad::Var scaled_dot_attention(ad::Var q, ad::Var k, ad::Var v, ad::Var* weights = nullptr);

struct AttentionWeights {
    std::vector<ad::Var> wq, wk, wv; // one [d_model, d_k] matrix per head
    ad::Var wo;                       // [heads * d_k, d_model]
};

AttentionWeights attention_weights(const BoundParameters& p, const std::string& prefix, std::size_t heads);

ad::Var multi_head_attention(ad::Var queries, ad::Var keys_values, const AttentionWeights& w);

ad::Var encode(ad::Var dynamic, const BoundParameters& p, const ModelConfig& config);
ad::Var decode(ad::Var memory, const BoundParameters& p, const ModelConfig& config);
ad::Var static_branch(ad::Var static_features, const BoundParameters& p, const ModelConfig& config);

struct FusionOutput {
    ad::Var features;  // [B, horizon, fusion_width], post batch norm and gating
    ad::Var attention; // [B, horizon, fusion_width] softmax weights
};

FusionOutput fuse(ad::Var decoded, ad::Var static_vec, const BoundParameters& p, ad::BatchNormStats& stats,
                  const ad::BatchNormOptions& bn, const ModelConfig& config);
ad::Var predict_head(ad::Var features, const BoundParameters& head);

/// fuse followed by the head.
ad::Var fuse_predict(ad::Var decoded, ad::Var static_vec, const BoundParameters& p, const BoundParameters& head,
                     ad::BatchNormStats& stats, const ad::BatchNormOptions& bn, const ModelConfig& config);

// ---- whole model ----------------------------------------------------------

struct Batch {
    Tensor dynamic; // [B, t, F]
    Tensor statics; // [B, m]
    Tensor target;  // [B, horizon, channels]; may be empty for inference
};

Batch make_batch(const std::vector<const WindowSample*>& samples);
Batch make_batch(const std::vector<WindowSample>& samples, std::span<const std::size_t> indices);

struct ForwardResult {
    ad::Var prediction; // [B, horizon, channels]
    ad::Var features;   // fused features [B, horizon, fusion_width]
    ad::Var attention;  // fusion weights [B, horizon, fusion_width]
};

/// Extractor + head on one graph. `stats` is updated only when bn.training && bn.update_running.
ForwardResult extractor_forward(ad::Graph& g, const Batch& batch, const BoundParameters& extractor,
                                const BoundParameters& head, ad::BatchNormStats& stats,
                                const ad::BatchNormOptions& bn, const ModelConfig& config);

struct Prediction {
    Tensor values;    // [B, horizon, channels]
    Tensor attention; // [B, horizon, fusion_width]
};

/// Inference with running batch-norm statistics; parameters are not modified.
Prediction model_forward(const Batch& batch, const ModelParameters& params, const ModelConfig& config);

/// Mean fusion weight per fused channel, and per block (dynamic, static).
struct AttentionSummary {
    std::vector<double> per_channel;
    double dynamic_block = 0.0;
    double static_block = 0.0;
};
AttentionSummary summarize_attention(const Tensor& attention, const ModelConfig& config);

// ---- persistence ----------------------------------------------------------

struct Checkpoint {
    ModelConfig config;
    ModelParameters params;
    std::optional<NormalizationParams> normalization;
    WindowConfig windows;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_json(const ModelConfig& config);

} // namespace driftgate
