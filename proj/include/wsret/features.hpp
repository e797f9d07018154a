#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "wsret/renderer.hpp"

namespace wsret {

enum class FeatureKind { filter_bank, external };

/// Maps a composite image to a flattened spatial feature map.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual FeatureKind kind() const = 0;
    virtual std::vector<double> extract(const Image& composite) const = 0;
    /// Stable description folded into cache hashes.
    virtual std::string fingerprint() const = 0;
};

struct ConvStage {
    int out_channels;
    int kernel;
    int pool;
};

/// Fixed random convolution bank: per stage, unit-Gaussian kernels
/// ('same' zero padding), ReLU, then average pooling.
class FilterBankExtractor final : public FeatureExtractor {
public:
    static std::vector<ConvStage> default_stages() { return {{32, 5, 4}, {16, 3, 4}}; }

    explicit FilterBankExtractor(std::uint64_t seed, std::vector<ConvStage> stages = default_stages(), int in_channels = 3);

    FeatureKind kind() const override { return FeatureKind::filter_bank; }
    std::vector<double> extract(const Image& composite) const override;
    std::string fingerprint() const override;

    /// Feature map shape (H', W', C) for a square input of `resolution`.
    std::array<int, 3> output_shape(int resolution) const;

private:
    std::uint64_t seed_;
    std::vector<ConvStage> stages_;
    int in_channels_;
    std::vector<std::vector<double>> kernels_;  // [out][in][ky][kx] per stage
};

/// Precomputed features keyed by the SHA-256 of the composite's P6 bytes
/// (see ppm_bytes). JSON: {"features":[{"image_sha256": hex, "values": [...]}]}.
class ExternalFeatureExtractor final : public FeatureExtractor {
public:
    explicit ExternalFeatureExtractor(const std::filesystem::path& path);

    FeatureKind kind() const override { return FeatureKind::external; }
    std::vector<double> extract(const Image& composite) const override;
    std::string fingerprint() const override { return "external:" + digest_; }

private:
    std::unordered_map<std::string, std::vector<double>> table_;
    std::string digest_;
};

/// P6 encoding used by write_ppm, returned in memory.
std::vector<std::uint8_t> ppm_bytes(const Image& img);
std::string image_key(const Image& img);

std::unique_ptr<FeatureExtractor> make_feature_extractor(FeatureKind kind, std::uint64_t seed,
                                                         const std::filesystem::path& external_path = {});

}  // namespace wsret
