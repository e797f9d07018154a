#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wsret/features.hpp"
#include "wsret/hashing.hpp"
#include "wsret/renderer.hpp"
#include "wsret/voxcore.hpp"

namespace wsret {

struct ProxyConfig {
    double w_percep = 0.7;
    double w_geo = 0.3;
    std::vector<ViewPose> views = default_views();
    int render_resolution = kDefaultRenderResolution;

    void validate() const;
};

/// Per-view features and scan-side occupied fractions of one object.
struct ViewFeatures {
    std::vector<std::vector<double>> features;
    std::vector<double> occupied_fraction;
};

ViewFeatures compute_view_features(const VoxelObject& obj, std::span<const ViewPose> views,
                                   const FeatureExtractor& fx, int resolution);

/// Occupancy-weighted mean of per-view feature cosines, remapped to [0,1].
/// Returns 0 when the scan covers no pixel in any view.
double perceptual_from_features(const ViewFeatures& scan, const ViewFeatures& cad);

double perceptual_similarity(const VoxelObject& scan, const VoxelObject& cad, std::span<const ViewPose> views,
                             const FeatureExtractor& fx, int resolution = kDefaultRenderResolution);

/// IoU restricted to the scan's visible voxels; `cad` is first rescaled to
/// the scan's aspect. Empty masked union gives 1.
double geometric_similarity(const VoxelObject& scan, const VoxelObject& cad);

/// Masked IoU on grids as given (no rescale).
double masked_iou(const Grid3& a, const Grid3& b, const Grid3& mask);

double combine_similarity(double f_percep, double f_geo, const ProxyConfig& cfg);
double combined_similarity(const VoxelObject& scan, const VoxelObject& cad, const ProxyConfig& cfg,
                           const FeatureExtractor& fx);

struct ProxyMatrix {
    int n_scans = 0;
    int n_cads = 0;
    std::vector<float> values;  // row-major, scans x cads
    std::vector<std::string> scan_ids;
    std::vector<std::string> cad_ids;
    float w_percep = 0.7f;
    float w_geo = 0.3f;

    float at(int scan, int cad) const { return values[static_cast<std::size_t>(scan) * n_cads + cad]; }
    bool operator==(const ProxyMatrix&) const = default;
};

Digest proxy_content_hash(std::span<const VoxelObject> scans, std::span<const VoxelObject> cads,
                          const ProxyConfig& cfg, const FeatureExtractor& fx);

std::vector<std::uint8_t> encode_proxy_cache(const ProxyMatrix& m, const Digest& hash);
/// Returns the stored content hash alongside the matrix.
std::pair<ProxyMatrix, Digest> decode_proxy_cache(std::span<const std::uint8_t> bytes);

struct ProxyBuild {
    ProxyMatrix matrix;
    Digest hash{};
    bool cache_hit = false;
};

/// Full scans x cads proxy matrix. With a cache path, a file whose content
/// hash matches is loaded; anything else is recomputed and overwritten.
ProxyBuild build_proxy_matrix(std::span<const VoxelObject> scans, std::span<const VoxelObject> cads,
                              const ProxyConfig& cfg, const FeatureExtractor& fx,
                              const std::filesystem::path& cache_path = {});

}  // namespace wsret
