#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "wsret/encoder.hpp"
#include "wsret/hashing.hpp"
#include "wsret/proxysim.hpp"
#include "wsret/training.hpp"
#include "wsret/voxcore.hpp"

namespace wsret {

enum class SplitMode { seen, unseen };

struct SplitConfig {
    SplitMode mode = SplitMode::seen;
    /// Seen mode: scans per prototype used for training; the rest are test.
    int train_scans_per_prototype = 6;
    /// Unseen mode: the last N families are held out of training.
    int held_out_families = 3;
};

struct ExperimentConfig {
    /// Drives dataset generation, batch sampling and top-k noise.
    std::uint64_t seed = 1;
    DatasetSpec dataset;
    ProxyConfig proxy;
    FeatureKind features = FeatureKind::filter_bank;
    std::uint64_t feature_seed = 11;
    std::string features_path;
    TrainConfig train;
    EncoderConfig encoder;
    SplitConfig split;
    /// Retrieval list length at evaluation time.
    int retrieve_k = 5;

    void validate() const;
};

/// Canonical text: one `key = value` line per field, keys sorted.
std::string serialize_config(const ExperimentConfig& cfg);

/// Parses `key = value` lines ('#' comments, blank lines allowed). Missing
/// keys keep their defaults; unknown keys are rejected.
ExperimentConfig parse_config(const std::string& text);

ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies one `key=value` override.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

Digest config_hash(const ExperimentConfig& cfg);

/// Hash of the dataset-generation fields only.
Digest dataset_hash(const ExperimentConfig& cfg);

}  // namespace wsret
