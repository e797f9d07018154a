#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wsret/encoder.hpp"
#include "wsret/hashing.hpp"

namespace wsret {

// WCKP1: magic, u8 version, 32-byte config hash, u32 tensor count, then per
// tensor u32 rank + u32 dims + f32 data (params, buffers, adam m, adam v in
// declaration order), then u64 Adam step.
std::vector<std::uint8_t> encode_checkpoint(const EncoderParams& params, const Digest& config_hash);
EncoderParams decode_checkpoint(std::span<const std::uint8_t> bytes, const EncoderConfig& cfg, Digest* config_hash = nullptr);

void save_checkpoint(const EncoderParams& params, const Digest& config_hash, const std::filesystem::path& path);
EncoderParams load_checkpoint(const std::filesystem::path& path, const EncoderConfig& cfg, Digest* config_hash = nullptr);

/// Unit-norm embeddings, one row per id.
struct EmbeddingSet {
    std::vector<std::string> ids;
    int dim = kEmbeddingDim;
    std::vector<double> vectors;  // row-major

    std::span<const double> row(std::size_t i) const {
        return std::span<const double>(vectors).subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
    }
    std::size_t size() const { return ids.size(); }
};

// WEMB1: magic, u32 count, u32 dim, count x (u16 length + UTF-8 id),
// row-major f32, 32-byte config hash trailer.
std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set, const Digest& config_hash);
EmbeddingSet decode_embeddings(std::span<const std::uint8_t> bytes, Digest* config_hash = nullptr);

void save_embeddings(const EmbeddingSet& set, const Digest& config_hash, const std::filesystem::path& path);
EmbeddingSet load_embeddings(const std::filesystem::path& path, Digest* config_hash = nullptr);

}  // namespace wsret
