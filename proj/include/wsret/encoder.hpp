#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wsret/voxcore.hpp"

namespace wsret {

inline constexpr int kEmbeddingDim = 128;

/// Layer stack of the siamese encoder: stride-2 downscale conv blocks
/// (conv, frozen per-channel RMS division, ReLU), residual blocks at the
/// last width, then FC over (flattened features ++ 3-d scale) and L2
/// normalisation.
struct EncoderConfig {
    int input_res = kGridRes;
    std::vector<int> channels{8, 16, 32};
    int residual_blocks = 1;
    int embed_dim = kEmbeddingDim;
    std::uint64_t seed = 7;

    void validate() const;
    /// Spatial size after the downscale blocks.
    int feature_res() const;
    int flat_features() const;
    /// Canonical text used for hashing.
    std::string describe() const;
};

struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
};

/// Trainable tensors (declaration order), frozen normalisation buffers and
/// Adam state.
struct EncoderParams {
    EncoderConfig config;
    std::vector<Tensor> params;
    std::vector<Tensor> buffers;
    std::vector<Tensor> adam_m;
    std::vector<Tensor> adam_v;
    std::uint64_t step = 0;

    std::size_t parameter_count() const;
    bool all_finite() const;
};

/// Same layout as EncoderParams::params.
using EncoderGrads = std::vector<std::vector<double>>;

/// Kaiming-uniform (fan-in) weights, zero biases, unit RMS buffers; all
/// values rounded to float precision.
EncoderParams init_encoder(const EncoderConfig& cfg);

/// Sets each downscale block's RMS buffer from the conv outputs over
/// `objects`, block by block; the statistics are frozen afterwards.
void calibrate_normalization(EncoderParams& params, std::span<const VoxelObject> objects);

EncoderGrads zero_grads(const EncoderParams& params);

/// Activations retained by the forward pass.
struct EncoderCache {
    std::vector<std::vector<double>> acts;  // input, then every block output
    std::vector<std::vector<double>> res_hidden;
    std::vector<double> fc_input;
    std::vector<double> pre_norm;
    std::vector<double> output;
    double norm = 0.0;
};

/// Unit-norm embedding. Throws Error("resolution mismatch") when the grid is
/// not input_res^3.
std::vector<double> encode(const VoxelObject& obj, const EncoderParams& params, EncoderCache* cache = nullptr);

/// Adds d(upstream . embedding)/d(params) into `grads`.
void encode_backward(const EncoderCache& cache, const EncoderParams& params, std::span<const double> upstream,
                     EncoderGrads& grads);

EncoderGrads encode_backward(const VoxelObject& obj, const EncoderParams& params, std::span<const double> upstream);

/// Element-wise `into += other`.
void add_grads(EncoderGrads& into, const EncoderGrads& other);

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam update in place. Throws Error("non-finite gradient")
/// before touching any state if a gradient is NaN/Inf.
void adam_step(EncoderParams& params, const EncoderGrads& grads, const AdamConfig& cfg = {});

}  // namespace wsret
