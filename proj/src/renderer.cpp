#include "wsret/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "wsret/binio.hpp"
#include "wsret/error.hpp"
#include "wsret/features.hpp"

namespace wsret {

namespace {

using V3 = std::array<double, 3>;

V3 operator+(V3 a, V3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
V3 operator-(V3 a, V3 b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
V3 operator*(double s, V3 a) { return {s * a[0], s * a[1], s * a[2]}; }
double dot(V3 a, V3 b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
V3 cross(V3 a, V3 b) { return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]}; }
V3 normalized(V3 a) { return (1.0 / std::sqrt(dot(a, a))) * a; }

struct Camera {
    V3 toward;  // unit vector from grid centre to camera
    V3 right, up;
};

Camera make_camera(const ViewPose& view) {
    const double az = view.azimuth_deg * std::numbers::pi / 180.0;
    const double el = view.elevation_deg * std::numbers::pi / 180.0;
    Camera cam;
    cam.toward = {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
    const V3 forward = -1.0 * cam.toward;
    V3 world_up{0.0, 0.0, 1.0};
    if (std::abs(dot(forward, world_up)) > 1.0 - 1e-9) world_up = {std::cos(az + std::numbers::pi), std::sin(az + std::numbers::pi), 0.0};
    cam.right = normalized(cross(forward, world_up));
    cam.up = cross(cam.right, forward);
    return cam;
}

V3 sobel_gradient(const Grid3& g, int x, int y, int z) {
    static constexpr int kW[3] = {1, 2, 1};
    V3 grad{0.0, 0.0, 0.0};
    for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
            const double w = kW[a + 1] * kW[b + 1];
            grad[0] += w * (g.get(x + 1, y + a, z + b) - g.get(x - 1, y + a, z + b));
            grad[1] += w * (g.get(x + a, y + 1, z + b) - g.get(x + a, y - 1, z + b));
            grad[2] += w * (g.get(x + a, y + b, z + 1) - g.get(x + a, y + b, z - 1));
        }
    return grad;
}

struct Hit {
    double t = 0.0;
    std::array<int, 3> voxel{};
    int face_axis = 0;
};

// Amanatides-Woo traversal of the grid cube [0,n]^3.
bool cast_ray(const Grid3& occ, V3 origin, V3 dir, Hit& hit) {
    const std::array<int, 3> dims = occ.dims();
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int entry_axis = 0;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-15) {
            if (origin[a] < 0.0 || origin[a] > dims[a]) return false;
            continue;
        }
        double ta = (0.0 - origin[a]) / dir[a], tb = (dims[a] - origin[a]) / dir[a];
        if (ta > tb) std::swap(ta, tb);
        if (ta > t0) {
            t0 = ta;
            entry_axis = a;
        }
        t1 = std::min(t1, tb);
    }
    if (t0 > t1 || t1 < 0.0) return false;

    std::array<int, 3> cell{}, step{};
    V3 t_max{}, t_delta{};
    const V3 p = origin + t0 * dir;
    for (int a = 0; a < 3; ++a) {
        cell[a] = std::clamp(static_cast<int>(std::floor(p[a])), 0, dims[a] - 1);
        if (dir[a] > 1e-15) {
            step[a] = 1;
            t_max[a] = (cell[a] + 1 - origin[a]) / dir[a];
            t_delta[a] = 1.0 / dir[a];
        } else if (dir[a] < -1e-15) {
            step[a] = -1;
            t_max[a] = (cell[a] - origin[a]) / dir[a];
            t_delta[a] = -1.0 / dir[a];
        } else {
            step[a] = 0;
            t_max[a] = std::numeric_limits<double>::infinity();
            t_delta[a] = std::numeric_limits<double>::infinity();
        }
    }
    double t = t0;
    int axis = entry_axis;
    while (true) {
        if (occ(cell[0], cell[1], cell[2])) {
            hit = {t, cell, axis};
            return true;
        }
        axis = t_max[0] < t_max[1] ? (t_max[0] < t_max[2] ? 0 : 2) : (t_max[1] < t_max[2] ? 1 : 2);
        t = t_max[axis];
        cell[axis] += step[axis];
        if (cell[axis] < 0 || cell[axis] >= dims[axis]) return false;
        t_max[axis] += t_delta[axis];
    }
}

}  // namespace

const std::vector<ViewPose>& default_views() {
    static const std::vector<ViewPose> views{{180, 45}, {180, -25}, {90, 45}, {225, 0}, {135, -45}};
    return views;
}

void validate(const ViewPose& v) {
    if (!(v.azimuth_deg >= 0.0 && v.azimuth_deg < 360.0)) throw Error("azimuth must be in [0, 360)");
    if (!(v.elevation_deg >= -90.0 && v.elevation_deg <= 90.0)) throw Error("elevation must be in [-90, 90]");
}

RenderOutput render_view(const VoxelObject& obj, const ViewPose& view, int resolution) {
    if (resolution < 8) throw Error("render resolution must be >= 8");
    validate(view);
    const Grid3& occ = obj.occupancy;
    const Camera cam = make_camera(view);
    const V3 centre{occ.nx() / 2.0, occ.ny() / 2.0, occ.nz() / 2.0};

    double half = 0.0, near = -std::numeric_limits<double>::infinity(), far = std::numeric_limits<double>::infinity();
    for (int c = 0; c < 8; ++c) {
        const V3 corner{(c & 1) ? double(occ.nx()) : 0.0, (c & 2) ? double(occ.ny()) : 0.0, (c & 4) ? double(occ.nz()) : 0.0};
        const V3 rel = corner - centre;
        half = std::max({half, std::abs(dot(rel, cam.right)), std::abs(dot(rel, cam.up))});
        near = std::max(near, dot(rel, cam.toward));
        far = std::min(far, dot(rel, cam.toward));
    }
    half *= 1.05;
    const V3 forward = -1.0 * cam.toward;

    RenderOutput out;
    out.depth = Image(resolution, resolution, 1, 1.0);
    out.normal = Image(resolution, resolution, 3, 0.0);
    std::size_t hits = 0;
    for (int py = 0; py < resolution; ++py) {
        const double b = (1.0 - 2.0 * (py + 0.5) / resolution) * half;
        for (int px = 0; px < resolution; ++px) {
            const double a = (2.0 * (px + 0.5) / resolution - 1.0) * half;
            const V3 origin = centre + a * cam.right + b * cam.up + (near + 1.0) * cam.toward;
            Hit hit;
            if (!cast_ray(occ, origin, forward, hit)) continue;
            ++hits;
            const double s = near + 1.0 - hit.t;  // signed distance along `toward`
            out.depth.at(py, px) = std::clamp((near - s) / (near - far), 0.0, 1.0);

            V3 n = sobel_gradient(occ, hit.voxel[0], hit.voxel[1], hit.voxel[2]);
            const double len = std::sqrt(dot(n, n));
            if (len > 1e-12) {
                n = (-1.0 / len) * n;
            } else {
                n = {0.0, 0.0, 0.0};
                n[hit.face_axis] = forward[hit.face_axis] > 0 ? -1.0 : 1.0;
            }
            const V3 cam_n{dot(n, cam.right), dot(n, cam.up), dot(n, cam.toward)};
            for (int c = 0; c < 3; ++c) out.normal.at(py, px, c) = 0.5 + std::clamp(cam_n[c], -1.0, 1.0) / 6.0;
        }
    }
    out.composite = composite(out.depth, out.normal);
    out.occupied_fraction = static_cast<double>(hits) / (static_cast<double>(resolution) * resolution);
    return out;
}

Image composite(const Image& depth, const Image& normal) {
    if (depth.channels != 1 || normal.channels != 3 || depth.height != normal.height || depth.width != normal.width)
        throw Error("composite: shape mismatch");
    Image out(normal.height, normal.width, 3);
    for (int y = 0; y < normal.height; ++y)
        for (int x = 0; x < normal.width; ++x) {
            const double keep = 1.0 - depth.at(y, x);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = keep * normal.at(y, x, c);
        }
    return out;
}

void write_ppm(const Image& img, const std::filesystem::path& path) { write_file_atomic(path, ppm_bytes(img)); }

}  // namespace wsret
