#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wsret/checkpoint.hpp"
#include "wsret/encoder.hpp"
#include "wsret/trainloss.hpp"

namespace wsret {

enum class LossKind { topk, triplet, mse };

LossKind parse_loss_kind(const std::string& s);
std::string to_string(LossKind k);

struct TrainConfig {
    LossKind loss = LossKind::topk;
    int batch_size = 64;
    int epochs = 50;
    int k = 5;
    bool ordered = true;
    double soft_sigma = kSoftTopkSigma;
    double triplet_margin = kTripletMargin;
    PerturbConfig topk;
    AdamConfig adam;
    std::uint64_t seed = 1;
    /// Objects (scans then CADs, in pool order) used to set the frozen
    /// normalisation statistics.
    int calibration_objects = 64;

    void validate() const;
};

struct TrainLogRecord {
    std::uint64_t step = 0;
    int epoch = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
    std::uint64_t seed = 0;
};

/// One NDJSON line: {"step":..,"epoch":..,"loss":..,"wall_ms":..,"seed":..}.
std::string to_ndjson(const TrainLogRecord& r);

struct TrainResult {
    EncoderParams final_params;
    EncoderParams best_params;
    int best_epoch = -1;
    std::vector<double> epoch_loss;
    std::vector<TrainLogRecord> log;
};

int steps_per_epoch(std::size_t n_train, int batch_size);

/// Embeddings of `objects` in order (parallel, deterministic).
std::vector<std::vector<double>> embed_all(std::span<const VoxelObject> objects, const EncoderParams& params);

EmbeddingSet embed_set(std::span<const VoxelObject> objects, const EncoderParams& params);

struct StepOutcome {
    double loss = 0.0;
    EncoderGrads grads;
};

/// Loss and parameter gradients for one batch.
StepOutcome batch_gradients(const Batch& batch, std::span<const VoxelObject> scans, std::span<const VoxelObject> cads,
                            const EncoderParams& params, const TrainConfig& cfg, std::uint64_t nonce);

/// Trains a fresh encoder on the given scan/CAD pools (indices into
/// `scans`/`cads` and the proxy matrix). Throws Error on non-finite loss.
TrainResult train_encoder(std::span<const VoxelObject> scans, std::span<const VoxelObject> cads,
                          const ProxyMatrix& proxy, std::span<const int> train_scans, std::span<const int> train_cads,
                          const EncoderConfig& enc_cfg, const TrainConfig& cfg,
                          const std::function<void(const TrainLogRecord&)>& on_step = {});

}  // namespace wsret
