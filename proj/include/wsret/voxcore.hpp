#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wsret {

inline constexpr int kInteriorRes = 32;
inline constexpr int kPadding = 2;
inline constexpr int kGridRes = kInteriorRes + 2 * kPadding;

/// Dense binary 3D array, x-fastest memory order.
class Grid3 {
public:
    Grid3() = default;
    Grid3(int nx, int ny, int nz, std::uint8_t fill = 0);
    static Grid3 cube(int n, std::uint8_t fill = 0) { return Grid3(n, n, n, fill); }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    std::array<int, 3> dims() const { return {nx_, ny_, nz_}; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) + static_cast<std::size_t>(nx_) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny_) * z);
    }
    bool in_bounds(int x, int y, int z) const { return x >= 0 && y >= 0 && z >= 0 && x < nx_ && y < ny_ && z < nz_; }
    std::uint8_t operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
    std::uint8_t& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }
    /// Out-of-bounds reads return 0.
    std::uint8_t get(int x, int y, int z) const { return in_bounds(x, y, z) ? (*this)(x, y, z) : 0; }

    std::span<const std::uint8_t> values() const { return data_; }
    std::span<std::uint8_t> values() { return data_; }
    std::size_t count() const;

    bool operator==(const Grid3&) const = default;

private:
    int nx_ = 0, ny_ = 0, nz_ = 0;
    std::vector<std::uint8_t> data_;
};

using Vec3f = std::array<float, 3>;

/// A shape sample: clean database object (no visibility) or degraded scan.
struct VoxelObject {
    std::string id;
    Grid3 occupancy;
    std::optional<Grid3> visibility;
    Vec3f scale{1.0f, 1.0f, 1.0f};
    std::string family;
};

/// Equality of everything the grid file stores (occupancy, visibility, scale).
bool same_content(const VoxelObject& a, const VoxelObject& b);

struct DegradationParams {
    double noise_flip_prob = 0.05;
    int carve_view_count = 5;
    double dropout_fraction = 0.7;
    double clutter_prob = 0.3;
    double jitter_scale = 0.1;

    /// Clamped copy satisfying the type invariants.
    DegradationParams clamped() const;
};

struct DatasetSpec {
    int n_families = 8;
    int n_prototypes_per_family = 5;
    int n_scans_per_prototype = 8;
    DegradationParams degradation;
    std::uint64_t seed = 1;
};

/// Built-in parametric families in their canonical order.
const std::vector<std::string>& family_names();

/// Variant 0 is the canonical member of each family; other seeds draw
/// random part proportions. Throws Error("unknown family").
VoxelObject generate_prototype(std::string_view family, std::uint64_t variant_seed);

VoxelObject degrade(const VoxelObject& clean, const DegradationParams& params, std::uint64_t seed);

/// Camera directions used for visibility carving, in the order they are
/// taken by `carve_view_count`.
const std::vector<std::array<int, 3>>& carve_directions();

/// Voxels reached by an axis/diagonal ray from any of the first
/// `view_count` directions before (and including) the first occupied voxel.
Grid3 carve_visibility(const Grid3& occupancy, int view_count);

/// 1-voxel band around the surface: occupied voxels with an empty
/// 6-neighbour plus empty voxels with an occupied 6-neighbour.
Grid3 surface_band(const Grid3& occupancy);

/// Nearest-neighbour resample so per-axis extents follow target_scale's
/// aspect. Throws Error("degenerate extent") for empty grids.
VoxelObject rescale_anisotropic(const VoxelObject& cad, const Vec3f& target_scale);

struct BoundingBox {
    std::array<int, 3> lo{};
    std::array<int, 3> extent{};  // zero when empty
};
BoundingBox occupied_bbox(const Grid3& g);

/// Clean database prototypes plus their degraded scans.
struct Dataset {
    std::vector<VoxelObject> cads;
    std::vector<VoxelObject> scans;
    std::vector<int> scan_prototype;  // index into cads
};

Dataset generate_dataset(const DatasetSpec& spec);

}  // namespace wsret
