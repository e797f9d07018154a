#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "wsret/error.hpp"
#include "wsret/features.hpp"
#include "wsret/renderer.hpp"
#include "wsret/voxcore.hpp"

using namespace wsret;

namespace {

using P2 = std::array<double, 2>;

// Orthographic camera basis for (azimuth, elevation): toward = direction to
// the camera, right = forward x z_up, up = right x forward.
struct Basis {
    std::array<double, 3> toward, right, up;
};

Basis basis(double az_deg, double el_deg) {
    const double az = az_deg * std::numbers::pi / 180, el = el_deg * std::numbers::pi / 180;
    Basis b;
    b.toward = {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
    const std::array<double, 3> f{-b.toward[0], -b.toward[1], -b.toward[2]};
    std::array<double, 3> r{f[1] * 1 - f[2] * 0, f[2] * 0 - f[0] * 1, 0.0};
    const double n = std::hypot(r[0], r[1], r[2]);
    for (auto& v : r) v /= n;
    b.right = r;
    b.up = {r[1] * f[2] - r[2] * f[1], r[2] * f[0] - r[0] * f[2], r[0] * f[1] - r[1] * f[0]};
    return b;
}

double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

double cross2(P2 o, P2 a, P2 b) { return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]); }

std::vector<P2> hull(std::vector<P2> pts) {
    std::sort(pts.begin(), pts.end());
    std::vector<P2> h(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross2(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross2(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    h.resize(k - 1);
    return h;
}

// Pixel-by-pixel count of pixel centres inside the projected silhouette of
// one voxel (convex hull of its projected corners).
double single_voxel_fraction(int n, std::array<int, 3> v, double az, double el, int res) {
    const Basis b = basis(az, el);
    const std::array<double, 3> c{n / 2.0, n / 2.0, n / 2.0};
    double half = 0;
    for (int k = 0; k < 8; ++k) {
        const std::array<double, 3> rel{(k & 1 ? n : 0) - c[0], (k & 2 ? n : 0) - c[1], (k & 4 ? n : 0) - c[2]};
        half = std::max({half, std::abs(dot3(rel, b.right)), std::abs(dot3(rel, b.up))});
    }
    half *= 1.05;
    std::vector<P2> corners;
    for (int k = 0; k < 8; ++k) {
        const std::array<double, 3> rel{v[0] + (k & 1) - c[0], v[1] + ((k >> 1) & 1) - c[1],
                                        v[2] + ((k >> 2) & 1) - c[2]};
        corners.push_back({dot3(rel, b.right), dot3(rel, b.up)});
    }
    const auto h = hull(corners);
    int inside = 0;
    for (int py = 0; py < res; ++py)
        for (int px = 0; px < res; ++px) {
            const P2 p{(2.0 * (px + 0.5) / res - 1.0) * half, (1.0 - 2.0 * (py + 0.5) / res) * half};
            bool in = true;
            for (std::size_t i = 0; i < h.size(); ++i)
                if (cross2(h[i], h[(i + 1) % h.size()], p) < 0) in = false;
            inside += in;
        }
    return static_cast<double>(inside) / (res * res);
}

VoxelObject single_voxel() {
    VoxelObject o;
    o.occupancy = Grid3::cube(kGridRes);
    o.occupancy(kGridRes / 2, kGridRes / 2, kGridRes / 2) = 1;
    return o;
}

}  // namespace

TEST_CASE("default views match the viewpoint table") {
    const auto& v = default_views();
    REQUIRE(v.size() == 5);
    const double az[] = {180, 180, 90, 225, 135}, el[] = {45, -25, 45, 0, -45};
    for (int i = 0; i < 5; ++i) {
        CHECK(v[i].azimuth_deg == az[i]);
        CHECK(v[i].elevation_deg == el[i]);
    }
    CHECK_THROWS_AS(validate(ViewPose{360, 0}), Error);
    CHECK_THROWS_AS(validate(ViewPose{0, 91}), Error);
    CHECK_NOTHROW(validate(ViewPose{0, -90}));
}

TEST_CASE("empty grid renders as background") {
    VoxelObject o;
    o.occupancy = Grid3::cube(kGridRes);
    for (const auto& view : default_views()) {
        const auto r = render_view(o, view, 32);
        CHECK(r.occupied_fraction == 0.0);
        for (double d : r.depth.data) CHECK(d == 1.0);
        for (double c : r.composite.data) CHECK(c == 0.0);
    }
    CHECK_THROWS_AS(render_view(o, {0, 0}, 7), Error);
}

TEST_CASE("single voxel occupied fraction matches a per-pixel silhouette oracle") {
    const auto obj = single_voxel();
    for (const auto& view : default_views()) {
        CAPTURE(view.azimuth_deg);
        CAPTURE(view.elevation_deg);
        const double expect = single_voxel_fraction(kGridRes, {18, 18, 18}, view.azimuth_deg, view.elevation_deg, 128);
        CHECK(expect > 0.0);
        CHECK(render_view(obj, view, 128).occupied_fraction == expect);
    }
}

TEST_CASE("full cube seen head-on gives a rectangle with the face normal") {
    const auto box = generate_prototype("box", 0);
    const auto r = render_view(box, {0, 0}, 64);
    int lo_x = 64, hi_x = -1, lo_y = 64, hi_y = -1, hits = 0, face = 0;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            if (r.depth.at(y, x) >= 1.0) continue;
            ++hits;
            lo_x = std::min(lo_x, x), hi_x = std::max(hi_x, x);
            lo_y = std::min(lo_y, y), hi_y = std::max(hi_y, y);
            if (r.normal.at(y, x, 0) == 0.5 && r.normal.at(y, x, 1) == 0.5 && r.normal.at(y, x, 2) == 0.5 + 1.0 / 6.0)
                ++face;
        }
    CHECK(hits == (hi_x - lo_x + 1) * (hi_y - lo_y + 1));
    CHECK(face > hits * 8 / 10);
    CHECK(r.normal.at(32, 32, 2) == doctest::Approx(4.0 / 6.0));
    // every face pixel is at the same depth
    CHECK(r.depth.at(32, 32) == r.depth.at(lo_y + 1, lo_x + 1));
}

TEST_CASE("render output ranges and composite identity") {
    const auto scan = degrade(generate_prototype("chair", 3), {}, 1);
    for (const auto& view : default_views()) {
        const auto r = render_view(scan, view, 48);
        std::size_t hits = 0;
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                const double d = r.depth.at(y, x);
                CHECK(d >= 0.0);
                CHECK(d <= 1.0);
                if (d < 1.0) {
                    ++hits;
                    for (int c = 0; c < 3; ++c) {
                        CHECK(r.normal.at(y, x, c) >= 2.0 / 6.0 - 1e-12);
                        CHECK(r.normal.at(y, x, c) <= 4.0 / 6.0 + 1e-12);
                    }
                }
                for (int c = 0; c < 3; ++c) {
                    CHECK(r.composite.at(y, x, c) == (1.0 - d) * r.normal.at(y, x, c));
                    CHECK(r.composite.at(y, x, c) <= 4.0 / 6.0 + 1e-12);
                }
            }
        CHECK(r.occupied_fraction == static_cast<double>(hits) / (48 * 48));
    }
}

TEST_CASE("composite examples and shape mismatch") {
    Image d(1, 3, 1), n(1, 3, 3);
    d.at(0, 0) = 1.0;
    d.at(0, 1) = 0.0;
    d.at(0, 2) = 0.5;
    for (int c = 0; c < 3; ++c) {
        n.at(0, 0, c) = 0.5;
        n.at(0, 1, c) = 2.0 / 6.0;
        n.at(0, 2, c) = 4.0 / 6.0;
    }
    const auto out = composite(d, n);
    CHECK(out.at(0, 0, 0) == 0.0);
    CHECK(out.at(0, 1, 1) == 2.0 / 6.0);
    CHECK(out.at(0, 2, 2) == doctest::Approx(2.0 / 6.0));
    CHECK_THROWS_AS(composite(Image(2, 3, 1), n), Error);
}

TEST_CASE("uniform scale change leaves renders unchanged") {
    auto obj = generate_prototype("shelf", 4);
    const auto a = render_view(obj, default_views()[3], 64);
    for (auto& s : obj.scale) s *= 2.5f;
    const auto b = render_view(obj, default_views()[3], 64);
    CHECK(a.composite.data == b.composite.data);
}

TEST_CASE("rotating the grid by 90 degrees matches an azimuth shift") {
    const auto obj = generate_prototype("chair", 5);
    const int n = kGridRes;
    VoxelObject rot;
    rot.occupancy = Grid3::cube(n);
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) rot.occupancy(n - 1 - y, x, z) = obj.occupancy(x, y, z);
    for (const auto& view : default_views()) {
        const double az2 = std::fmod(view.azimuth_deg + 90.0, 360.0);
        const auto a = render_view(obj, view, 64);
        const auto b = render_view(rot, {az2, view.elevation_deg}, 64);
        int differ = 0;
        for (std::size_t i = 0; i < a.depth.data.size(); ++i)
            if (std::abs(a.depth.data[i] - b.depth.data[i]) > 1e-6) ++differ;
        CHECK(differ <= 64 * 64 / 50);
    }
}

TEST_CASE("ppm bytes encode rounded clamped pixels") {
    Image img(1, 2, 3);
    img.at(0, 0, 0) = 0.5;
    img.at(0, 0, 1) = 2.0;
    img.at(0, 0, 2) = -1.0;
    img.at(0, 1, 0) = 1.0 / 255.0;
    const auto bytes = ppm_bytes(img);
    const std::string header = "P6\n2 1\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())) == header);
    CHECK(bytes[header.size() + 0] == 128);
    CHECK(bytes[header.size() + 1] == 255);
    CHECK(bytes[header.size() + 2] == 0);
    CHECK(bytes[header.size() + 3] == 1);
}
