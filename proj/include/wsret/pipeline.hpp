#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wsret/checkpoint.hpp"
#include "wsret/config.hpp"
#include "wsret/retrieval.hpp"
#include "wsret/training.hpp"

namespace wsret {

/// Dataset spec / training config with the experiment seed applied.
DatasetSpec dataset_spec(const ExperimentConfig& cfg);
TrainConfig train_config(const ExperimentConfig& cfg);
std::unique_ptr<FeatureExtractor> feature_extractor(const ExperimentConfig& cfg);

/// `<data_dir>/runs/<first 12 hex digits of the config hash>`.
std::filesystem::path run_directory(const ExperimentConfig& cfg, const std::filesystem::path& data_dir);

/// Indices into Dataset::scans / Dataset::cads.
struct Split {
    std::vector<int> train_scans;
    std::vector<int> test_scans;
    std::vector<int> train_cads;
    std::vector<int> db_cads;
};

/// Seen: the first `train_scans_per_prototype` scans of every prototype
/// train, the rest test, all CADs everywhere. Unseen: the last
/// `held_out_families` families are test-only; training sees only the other
/// families' scans and CADs; the database holds every CAD.
Split make_split(const Dataset& data, const ExperimentConfig& cfg);

/// Source prototype, its family, and the proxy-oracle top-3 over `db`.
std::vector<GroundTruth> make_ground_truth(const Dataset& data, const ProxyMatrix& proxy, std::span<const int> queries,
                                           std::span<const int> db);

std::vector<RetrievalResult> retrieve_learned(const Dataset& data, const EncoderParams& params,
                                              std::span<const int> queries, std::span<const int> db, int k);

/// Ranks the database directly by the proxy matrix.
std::vector<RetrievalResult> retrieve_oracle(const Dataset& data, const ProxyMatrix& proxy,
                                             std::span<const int> queries, std::span<const int> db, int k);

/// SHA-256 over the NDJSON log with wall-clock times removed.
std::string log_hash(std::span<const TrainLogRecord> log);

// Command layer (shared by the CLI and the tests). All messages go to `out`.

void cmd_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& data_dir, bool force, std::ostream& out);

/// Reads the dataset written by cmd_gen_data; rejects a manifest generated
/// under different dataset settings.
Dataset load_dataset(const ExperimentConfig& cfg, const std::filesystem::path& data_dir);

std::filesystem::path proxy_cache_path(const ExperimentConfig& cfg, const Dataset& data,
                                       const std::filesystem::path& data_dir);

ProxyBuild cmd_compute_proxy(const ExperimentConfig& cfg, const std::filesystem::path& data_dir, std::ostream& out);

/// Existing proxy cache for this dataset and proxy config.
ProxyMatrix load_proxy(const ExperimentConfig& cfg, const Dataset& data, const std::filesystem::path& data_dir);

TrainResult cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                      const std::filesystem::path& run_dir, std::ostream& out);

/// Loads a checkpoint and checks its config hash against `cfg`.
EncoderParams load_run_checkpoint(const ExperimentConfig& cfg, const std::filesystem::path& path);

EmbeddingSet cmd_embed(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                       const std::filesystem::path& run_dir, const std::filesystem::path& checkpoint, std::ostream& out);

std::vector<RetrievalResult> cmd_retrieve(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                                          const std::filesystem::path& run_dir, bool oracle, std::ostream& out);

EvalReport cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& data_dir,
                    const std::filesystem::path& run_dir, const std::filesystem::path& checkpoint, bool oracle,
                    std::ostream& out);

void cmd_bench(int n, int k, double sigma, int repeats, std::uint64_t seed, std::ostream& out);

/// Side-by-side table of the learned and oracle reports in `run_dir`.
std::string cmd_report(const std::filesystem::path& run_dir);

}  // namespace wsret
