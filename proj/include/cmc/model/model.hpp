#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmc/model/parameters.hpp"
#include "cmc/nn/ops.hpp"
#include "cmc/volume/volume.hpp"

namespace cmc {

enum class Backbone { HybridTransformer, ResidualCnn };

/// Encoder layout. Stage s starts with a patch-embedding convolution whose
/// kernel equals `strides[s]`, then `stage_depths[s]` blocks at
/// `channels[s]` channels. Hybrid stages with index >= global_stage_start
/// (0-based) use global self-attention; earlier ones aggregate locally with
/// a depthwise convolution.
struct EncoderConfig {
    Backbone backbone = Backbone::HybridTransformer;
    std::vector<int> stage_depths{2, 2, 4, 2};
    std::vector<int> channels{32, 64, 128, 256};
    std::vector<nn::Triple> strides{{2, 4, 4}, {2, 2, 2}, {2, 2, 2}, {1, 1, 1}};
    int attention_heads = 4;
    int global_stage_start = 2;
    int mlp_ratio = 4;
    int local_kernel = 5;

    int feature_dim() const { return channels.empty() ? 0 : channels.back(); }
    /// Every input extent must be a multiple of this (depth, height, width).
    nn::Triple divisor() const;
    void validate() const;
};

struct ModelConfig {
    EncoderConfig encoder;
    int projection_dim = 128;
    /// Hidden width of the projection head; 0 means the feature dim.
    int projection_hidden = 0;
    int classes = 2;

    void validate() const;
};

/// Parameters of one hybrid block, looked up from the store.
struct HybridBlockParams {
    nn::Var pos_w, pos_b;
    nn::Var norm1_g, norm1_b;
    // Local aggregation.
    nn::Var conv1_w, conv1_b, dw_w, dw_b, conv2_w, conv2_b;
    // Global aggregation.
    nn::Var qkv_w, qkv_b, proj_w, proj_b;
    nn::Var norm2_g, norm2_b;
    nn::Var fc1_w, fc1_b, fc2_w, fc2_b;
    bool global = false;
    int heads = 1;
    int local_kernel = 5;
};

/// DPE (3x3x3 depthwise conv, residual) -> relation aggregation
/// (pre-norm; local depthwise conv or global multi-head attention,
/// residual) -> FFN (pre-norm, GELU, residual). Shape preserving.
nn::Var hybrid_block(const nn::Var& x, const HybridBlockParams& p, std::vector<Matrix>* attention = nullptr);

/// Encoder E, projection head P (two affine layers with ReLU, unit-norm
/// output) and classifier C.
class Model {
public:
    Model(const ModelConfig& cfg, std::uint64_t seed);

    struct Outputs {
        nn::Var grid;        // final-stage feature grid after the last norm
        nn::Var features;    // (1, d_e) pooled
        nn::Var projection;  // (1, d_p), unit rows
        nn::Var logits;      // (1, classes)
    };

    /// One volume through the whole network, recording the graph unless a
    /// NoGradGuard is active.
    Outputs forward(const CTVolume& v) const;

    /// Encoder only: final grid and pooled features.
    nn::Var encode_grid(const CTVolume& v) const;

    nn::Var project(const nn::Var& features) const;
    nn::Var classify(const nn::Var& features) const;

    /// Throws InvalidArgument naming the required divisor when `s` cannot
    /// be encoded.
    void check_input(const Shape3& s) const;

    HybridBlockParams block_params(int stage, int block) const;

    /// Zeroes the last layer of every residual branch so each block is an
    /// identity map.
    void zero_residual_branches();

    ParameterStore& parameters() { return params_; }
    const ParameterStore& parameters() const { return params_; }
    const ModelConfig& config() const { return cfg_; }

private:
    nn::Var param(const std::string& name) const;

    ModelConfig cfg_;
    ParameterStore params_;
};

/// Batch feature extraction in evaluation mode: (B, d_e).
Matrix encode(const Model& model, std::span<const CTVolume> batch);
/// (B, d_e) -> (B, d_p) unit rows.
Matrix project(const Model& model, const Matrix& features);
/// (B, d_e) -> (B, classes) logits.
Matrix classify(const Model& model, const Matrix& features);

/// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

}  // namespace cmc
