#include "wsret/voxcore.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "wsret/error.hpp"
#include "wsret/rng.hpp"

namespace wsret {

Grid3::Grid3(int nx, int ny, int nz, std::uint8_t fill)
    : nx_(nx), ny_(ny), nz_(nz), data_(static_cast<std::size_t>(nx) * ny * nz, fill) {
    if (nx <= 0 || ny <= 0 || nz <= 0) throw Error("grid dimensions must be positive");
}

std::size_t Grid3::count() const {
    return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](auto v) { return v != 0; }));
}

bool same_content(const VoxelObject& a, const VoxelObject& b) {
    return a.occupancy == b.occupancy && a.visibility == b.visibility && a.scale == b.scale;
}

DegradationParams DegradationParams::clamped() const {
    DegradationParams p = *this;
    p.noise_flip_prob = std::clamp(p.noise_flip_prob, 0.0, 1.0);
    p.dropout_fraction = std::clamp(p.dropout_fraction, 0.0, 1.0);
    p.clutter_prob = std::clamp(p.clutter_prob, 0.0, 1.0);
    p.jitter_scale = std::clamp(p.jitter_scale, 0.0, 0.5);
    p.carve_view_count = std::clamp(p.carve_view_count, 0, static_cast<int>(carve_directions().size()));
    return p;
}

const std::vector<std::string>& family_names() {
    static const std::vector<std::string> names{"box", "table", "chair", "lshape", "cylinder", "shelf", "ring", "cross"};
    return names;
}

namespace {

using Inside = std::function<bool(double u, double v, double w)>;

struct ShapeDef {
    std::array<double, 3> aspect;
    Inside inside;
};

// Shape predicates work in the object's normalized box [0,1]^3, w up.
ShapeDef make_shape(std::string_view family, std::uint64_t variant_seed) {
    Rng rng(mix_seed({variant_seed, 0x70726f746fULL}));
    const bool canonical = variant_seed == 0;
    auto pick = [&](double canon, double lo, double hi) { return canonical ? canon : rng.uniform(lo, hi); };

    if (family == "box") {
        const double ax = pick(1.0, 0.45, 1.0), ay = pick(1.0, 0.45, 1.0), az = pick(1.0, 0.45, 1.0);
        return {{ax, ay, az}, [](double, double, double) { return true; }};
    }
    if (family == "table") {
        const double ax = pick(1.2, 0.8, 1.5), ay = pick(0.8, 0.5, 1.0), az = pick(0.7, 0.45, 0.95);
        const double top = pick(0.15, 0.08, 0.3), leg = pick(0.12, 0.07, 0.22), inset = pick(0.0, 0.0, 0.12);
        return {{ax, ay, az}, [=](double u, double v, double w) {
                    if (w >= 1.0 - top) return true;
                    auto in_leg = [&](double t) { return (t >= inset && t < inset + leg) || (t <= 1.0 - inset && t > 1.0 - inset - leg); };
                    return in_leg(u) && in_leg(v);
                }};
    }
    if (family == "chair") {
        const double ax = pick(0.8, 0.6, 1.0), ay = pick(0.8, 0.6, 1.0), az = pick(1.5, 1.1, 1.9);
        const double seat_h = pick(0.45, 0.3, 0.55), seat_t = pick(0.1, 0.06, 0.16);
        const double back_t = pick(0.12, 0.07, 0.22), leg = pick(0.12, 0.08, 0.2);
        return {{ax, ay, az}, [=](double u, double v, double w) {
                    if (w >= seat_h && w < seat_h + seat_t) return true;
                    if (w >= seat_h && v > 1.0 - back_t) return true;
                    if (w < seat_h) {
                        const bool lu = u < leg || u > 1.0 - leg;
                        const bool lv = v < leg || v > 1.0 - leg;
                        return lu && lv;
                    }
                    return false;
                }};
    }
    if (family == "lshape") {
        const double ax = pick(1.0, 0.7, 1.5), ay = pick(0.7, 0.4, 1.0), az = pick(1.0, 0.6, 1.4);
        const double base = pick(0.3, 0.15, 0.45), wall = pick(0.3, 0.15, 0.45);
        return {{ax, ay, az}, [=](double u, double, double w) { return w < base || u < wall; }};
    }
    if (family == "cylinder") {
        const double r = pick(1.0, 0.5, 1.0), az = pick(1.0, 0.5, 1.7);
        const bool hollow = canonical ? false : rng.bernoulli(0.5);
        const double wall = pick(0.3, 0.2, 0.45);
        return {{r, r, az}, [=](double u, double v, double) {
                    const double rad = std::hypot(2.0 * u - 1.0, 2.0 * v - 1.0);
                    return rad <= 1.0 && (!hollow || rad >= 1.0 - wall);
                }};
    }
    if (family == "shelf") {
        const double ax = pick(1.0, 0.7, 1.5), ay = pick(0.4, 0.25, 0.6), az = pick(1.4, 0.9, 1.9);
        const int shelves = canonical ? 3 : rng.uniform_int(2, 5);
        const double slab = pick(0.06, 0.04, 0.1), side = pick(0.08, 0.05, 0.15);
        const bool back = canonical ? true : rng.bernoulli(0.5);
        return {{ax, ay, az}, [=](double u, double v, double w) {
                    if (u < side || u > 1.0 - side) return true;
                    if (back && v > 0.88) return true;
                    for (int s = 0; s < shelves; ++s) {
                        const double h = (1.0 - slab) * s / (shelves - 1);
                        if (w >= h && w < h + slab) return true;
                    }
                    return false;
                }};
    }
    if (family == "ring") {
        const double r = pick(1.0, 1.0, 1.0), az = pick(0.3, 0.12, 0.55);
        const double inner = pick(0.6, 0.35, 0.8);
        return {{r, r, az}, [=](double u, double v, double) {
                    const double rad = std::hypot(2.0 * u - 1.0, 2.0 * v - 1.0);
                    return rad <= 1.0 && rad >= inner;
                }};
    }
    if (family == "cross") {
        const double ax = pick(1.0, 0.7, 1.3), ay = pick(1.0, 0.7, 1.3), az = pick(0.5, 0.2, 1.0);
        const double bar_u = pick(0.3, 0.18, 0.45), bar_v = pick(0.3, 0.18, 0.45);
        return {{ax, ay, az}, [=](double u, double v, double) {
                    return std::abs(u - 0.5) < bar_u / 2 || std::abs(v - 0.5) < bar_v / 2;
                }};
    }
    throw Error("unknown family");
}

bool in_interior(int x, int y, int z, const Grid3& g) {
    return x >= kPadding && y >= kPadding && z >= kPadding && x < g.nx() - kPadding && y < g.ny() - kPadding &&
           z < g.nz() - kPadding;
}

constexpr std::array<std::array<int, 3>, 6> kFaceNeighbours{{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

}  // namespace

VoxelObject generate_prototype(std::string_view family, std::uint64_t variant_seed) {
    const ShapeDef shape = make_shape(family, variant_seed);
    const double amax = std::max({shape.aspect[0], shape.aspect[1], shape.aspect[2]});

    std::array<int, 3> extent{}, lo{};
    for (int a = 0; a < 3; ++a) {
        extent[a] = std::clamp(static_cast<int>(std::lround(kInteriorRes * shape.aspect[a] / amax)), 1, kInteriorRes);
        lo[a] = kPadding + (kInteriorRes - extent[a]) / 2;
    }

    VoxelObject obj;
    obj.id = std::string(family) + "_" + std::to_string(variant_seed);
    obj.family = std::string(family);
    obj.occupancy = Grid3::cube(kGridRes);
    for (int z = 0; z < extent[2]; ++z)
        for (int y = 0; y < extent[1]; ++y)
            for (int x = 0; x < extent[0]; ++x) {
                const double u = (x + 0.5) / extent[0], v = (y + 0.5) / extent[1], w = (z + 0.5) / extent[2];
                if (shape.inside(u, v, w)) obj.occupancy(lo[0] + x, lo[1] + y, lo[2] + z) = 1;
            }

    const double norm = std::hypot(shape.aspect[0], shape.aspect[1], shape.aspect[2]);
    for (int a = 0; a < 3; ++a) obj.scale[a] = static_cast<float>(shape.aspect[a] / norm);
    return obj;
}

const std::vector<std::array<int, 3>>& carve_directions() {
    // Camera positions relative to the object, z up; front is -y.
    static const std::vector<std::array<int, 3>> dirs{
        {0, -1, 1}, {1, -1, 1}, {-1, -1, 1}, {0, 0, 1},  {0, -1, 0}, {1, 0, 0},  {-1, 0, 0},
        {1, -1, 0}, {-1, -1, 0}, {0, 1, 0},  {1, 1, 1},  {-1, 1, 1}, {0, 1, 1}, {0, 0, -1},
    };
    return dirs;
}

Grid3 carve_visibility(const Grid3& occ, int view_count) {
    Grid3 vis(occ.nx(), occ.ny(), occ.nz(), 0);
    const auto& dirs = carve_directions();
    view_count = std::clamp(view_count, 0, static_cast<int>(dirs.size()));
    for (int d = 0; d < view_count; ++d) {
        const auto [dx, dy, dz] = dirs[d];
        for (int z = 0; z < occ.nz(); ++z)
            for (int y = 0; y < occ.ny(); ++y)
                for (int x = 0; x < occ.nx(); ++x) {
                    // Each ray line starts at the voxel whose camera-side neighbour leaves the grid.
                    if (occ.in_bounds(x + dx, y + dy, z + dz)) continue;
                    for (int px = x, py = y, pz = z; occ.in_bounds(px, py, pz); px -= dx, py -= dy, pz -= dz) {
                        vis(px, py, pz) = 1;
                        if (occ(px, py, pz)) break;
                    }
                }
    }
    return vis;
}

Grid3 surface_band(const Grid3& occ) {
    Grid3 band(occ.nx(), occ.ny(), occ.nz(), 0);
    for (int z = 0; z < occ.nz(); ++z)
        for (int y = 0; y < occ.ny(); ++y)
            for (int x = 0; x < occ.nx(); ++x) {
                const std::uint8_t self = occ(x, y, z);
                for (const auto& n : kFaceNeighbours) {
                    if (occ.get(x + n[0], y + n[1], z + n[2]) != self) {
                        band(x, y, z) = 1;
                        break;
                    }
                }
            }
    return band;
}

VoxelObject degrade(const VoxelObject& clean, const DegradationParams& raw_params, std::uint64_t seed) {
    if (clean.visibility) throw Error("degrade expects a clean object without visibility");
    const DegradationParams params = raw_params.clamped();
    Rng rng(seed);

    VoxelObject scan;
    scan.id = clean.id + "_scan";
    scan.family = clean.family;
    scan.occupancy = clean.occupancy;
    Grid3& occ = scan.occupancy;

    // Clutter: a small solid block somewhere in the unpadded interior.
    if (rng.bernoulli(params.clutter_prob)) {
        std::array<int, 3> size{}, lo{};
        const std::array<int, 3> dims = occ.dims();
        for (int a = 0; a < 3; ++a) {
            const int interior = dims[a] - 2 * kPadding;
            size[a] = std::min(interior, rng.uniform_int(2, 5));
            lo[a] = kPadding + rng.uniform_int(0, interior - size[a]);
        }
        for (int z = lo[2]; z < lo[2] + size[2]; ++z)
            for (int y = lo[1]; y < lo[1] + size[1]; ++y)
                for (int x = lo[0]; x < lo[0] + size[0]; ++x) occ(x, y, z) = 1;
    }

    Grid3 vis = carve_visibility(occ, params.carve_view_count);

    auto occ_v = occ.values();
    auto vis_v = vis.values();
    for (std::size_t i = 0; i < occ_v.size(); ++i) {
        const double r = rng.uniform();
        if (occ_v[i] && !vis_v[i] && r < params.dropout_fraction) occ_v[i] = 0;
    }

    const Grid3 band = surface_band(clean.occupancy);
    for (int z = 0; z < occ.nz(); ++z)
        for (int y = 0; y < occ.ny(); ++y)
            for (int x = 0; x < occ.nx(); ++x) {
                const double r = rng.uniform();
                if (band(x, y, z) && vis(x, y, z) && in_interior(x, y, z, occ) && r < params.noise_flip_prob)
                    occ(x, y, z) ^= 1;
            }

    for (int a = 0; a < 3; ++a) {
        const double j = rng.uniform(-params.jitter_scale, params.jitter_scale);
        scan.scale[a] = static_cast<float>(clean.scale[a] * (1.0 + j));
    }
    scan.visibility = std::move(vis);
    return scan;
}

BoundingBox occupied_bbox(const Grid3& g) {
    std::array<int, 3> lo{g.nx(), g.ny(), g.nz()}, hi{-1, -1, -1};
    for (int z = 0; z < g.nz(); ++z)
        for (int y = 0; y < g.ny(); ++y)
            for (int x = 0; x < g.nx(); ++x) {
                if (!g(x, y, z)) continue;
                const std::array<int, 3> p{x, y, z};
                for (int a = 0; a < 3; ++a) {
                    lo[a] = std::min(lo[a], p[a]);
                    hi[a] = std::max(hi[a], p[a]);
                }
            }
    BoundingBox box;
    if (hi[0] < 0) return box;
    for (int a = 0; a < 3; ++a) {
        box.lo[a] = lo[a];
        box.extent[a] = hi[a] - lo[a] + 1;
    }
    return box;
}

namespace {

// Source index for destination voxel i under nearest-neighbour mapping.
std::vector<int> axis_map(int dim, int src_lo, int src_e, int dst_lo, int dst_e) {
    std::vector<int> map(static_cast<std::size_t>(dim), -1);
    for (int i = 0; i < dst_e; ++i) {
        const int s = src_lo + static_cast<int>(std::floor((i + 0.5) * src_e / dst_e));
        map[static_cast<std::size_t>(dst_lo + i)] = std::min(s, src_lo + src_e - 1);
    }
    return map;
}

Grid3 resample(const Grid3& src, const std::array<std::vector<int>, 3>& maps) {
    Grid3 out(src.nx(), src.ny(), src.nz(), 0);
    for (int z = 0; z < out.nz(); ++z) {
        const int sz = maps[2][static_cast<std::size_t>(z)];
        if (sz < 0) continue;
        for (int y = 0; y < out.ny(); ++y) {
            const int sy = maps[1][static_cast<std::size_t>(y)];
            if (sy < 0) continue;
            for (int x = 0; x < out.nx(); ++x) {
                const int sx = maps[0][static_cast<std::size_t>(x)];
                if (sx >= 0) out(x, y, z) = src(sx, sy, sz);
            }
        }
    }
    return out;
}

}  // namespace

VoxelObject rescale_anisotropic(const VoxelObject& cad, const Vec3f& target) {
    for (float t : target)
        if (!(t > 0.0f) || !std::isfinite(t)) throw Error("target scale must be strictly positive");
    const BoundingBox box = occupied_bbox(cad.occupancy);
    if (box.extent[0] == 0) throw Error("degenerate extent");
    for (float s : cad.scale)
        if (!(s > 1e-9f)) throw Error("degenerate extent");

    const std::array<int, 3> dims = cad.occupancy.dims();
    std::array<double, 3> raw{};
    for (int a = 0; a < 3; ++a) raw[a] = box.extent[a] * (static_cast<double>(target[a]) / cad.scale[a]);
    const double keep = *std::max_element(box.extent.begin(), box.extent.end());
    const double fit = keep / std::max({raw[0], raw[1], raw[2]});

    VoxelObject out = cad;
    out.scale = target;

    std::array<int, 3> dst_e{}, dst_lo{};
    bool identity = true;
    for (int a = 0; a < 3; ++a) {
        const int pad = dims[a] > 2 * kPadding ? kPadding : 0;
        const int room = dims[a] - 2 * pad;
        dst_e[a] = std::clamp(static_cast<int>(std::lround(raw[a] * fit)), 1, room);
        dst_lo[a] = box.lo[a] + static_cast<int>(std::floor((box.extent[a] - dst_e[a]) / 2.0));
        dst_lo[a] = std::clamp(dst_lo[a], pad, pad + room - dst_e[a]);
        identity = identity && dst_e[a] == box.extent[a] && dst_lo[a] == box.lo[a];
    }
    if (identity) return out;

    std::array<std::vector<int>, 3> maps;
    for (int a = 0; a < 3; ++a) maps[a] = axis_map(dims[a], box.lo[a], box.extent[a], dst_lo[a], dst_e[a]);
    out.occupancy = resample(cad.occupancy, maps);
    if (cad.visibility) out.visibility = resample(*cad.visibility, maps);
    return out;
}

Dataset generate_dataset(const DatasetSpec& spec) {
    const auto& names = family_names();
    if (spec.n_families < 1 || spec.n_families > static_cast<int>(names.size()))
        throw Error("n_families must be in [1, " + std::to_string(names.size()) + "]");
    if (spec.n_prototypes_per_family < 1 || spec.n_scans_per_prototype < 1)
        throw Error("dataset counts must be >= 1");

    Dataset ds;
    for (int f = 0; f < spec.n_families; ++f) {
        for (int p = 0; p < spec.n_prototypes_per_family; ++p) {
            const std::uint64_t variant = mix_seed({spec.seed, static_cast<std::uint64_t>(f), static_cast<std::uint64_t>(p)});
            VoxelObject cad = generate_prototype(names[f], variant);
            cad.id = "cad_" + names[f] + "_" + std::to_string(p);
            const int cad_index = static_cast<int>(ds.cads.size());
            for (int s = 0; s < spec.n_scans_per_prototype; ++s) {
                const std::uint64_t scan_seed = mix_seed({spec.seed, static_cast<std::uint64_t>(f),
                                                          static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(s), 1});
                VoxelObject scan = degrade(cad, spec.degradation, scan_seed);
                scan.id = "scan_" + names[f] + "_" + std::to_string(p) + "_" + std::to_string(s);
                ds.scans.push_back(std::move(scan));
                ds.scan_prototype.push_back(cad_index);
            }
            ds.cads.push_back(std::move(cad));
        }
    }
    return ds;
}

}  // namespace wsret
