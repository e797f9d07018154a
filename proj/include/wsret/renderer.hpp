#pragma once

#include <filesystem>
#include <vector>

#include "wsret/voxcore.hpp"

namespace wsret {

struct ViewPose {
    double azimuth_deg = 0.0;
    double elevation_deg = 0.0;
};

/// The five perceptual-metric viewpoints (azimuth, elevation in degrees).
const std::vector<ViewPose>& default_views();
void validate(const ViewPose& v);

/// Row-major H x W x C image of doubles.
struct Image {
    int height = 0, width = 0, channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}
    double& at(int y, int x, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    double at(int y, int x, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

struct RenderOutput {
    Image depth;      // 1 channel, 1 = background
    Image normal;     // 3 channels in [2/6, 4/6] on hits, 0 on background
    Image composite;  // (1 - depth) * normal
    double occupied_fraction = 0.0;
};

inline constexpr int kDefaultRenderResolution = 128;

/// Orthographic ray cast toward the grid centre. The padded grid cube is
/// framed with a 5% margin; depth maps the cube's near face to 0 and far
/// face to 1. Normals come from a 3x3x3 Sobel stencil on occupancy, in
/// camera coordinates (right, up, toward camera).
RenderOutput render_view(const VoxelObject& obj, const ViewPose& view, int resolution = kDefaultRenderResolution);

/// (1 - depth) multiplied into each normal channel.
Image composite(const Image& depth, const Image& normal);

/// Binary P6; 1-channel images are written as grey.
void write_ppm(const Image& img, const std::filesystem::path& path);

}  // namespace wsret
