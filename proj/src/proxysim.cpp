#include "wsret/proxysim.hpp"

#include <cmath>
#include <cstdio>

#include "wsret/binio.hpp"
#include "wsret/error.hpp"
#include "wsret/grid_io.hpp"

namespace wsret {

namespace {

constexpr char kCacheMagic[] = "WPRX1";
constexpr std::uint8_t kCacheVersion = 1;

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error("feature size mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa <= 0.0 || bb <= 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void ProxyConfig::validate() const {
    if (w_percep < 0.0 || w_geo < 0.0 || std::abs(w_percep + w_geo - 1.0) > 1e-9)
        throw Error("proxy weights must be non-negative and sum to 1");
    if (views.empty()) throw Error("proxy needs at least one view");
    for (const auto& v : views) wsret::validate(v);
    if (render_resolution < 8) throw Error("render resolution must be >= 8");
}

ViewFeatures compute_view_features(const VoxelObject& obj, std::span<const ViewPose> views,
                                   const FeatureExtractor& fx, int resolution) {
    ViewFeatures vf;
    for (const auto& view : views) {
        const RenderOutput r = render_view(obj, view, resolution);
        vf.features.push_back(fx.extract(r.composite));
        vf.occupied_fraction.push_back(r.occupied_fraction);
    }
    return vf;
}

double perceptual_from_features(const ViewFeatures& scan, const ViewFeatures& cad) {
    if (scan.features.size() != cad.features.size() || scan.features.empty())
        throw Error("perceptual similarity: view count mismatch");
    double total = 0.0;
    for (double f : scan.occupied_fraction) total += f;
    if (total <= 0.0) return 0.0;
    double x = 0.0;
    for (std::size_t v = 0; v < scan.features.size(); ++v)
        x += (scan.occupied_fraction[v] / total) * cosine(scan.features[v], cad.features[v]);
    return (x + 1.0) / 2.0;
}

double perceptual_similarity(const VoxelObject& scan, const VoxelObject& cad, std::span<const ViewPose> views,
                             const FeatureExtractor& fx, int resolution) {
    if (views.empty()) throw Error("perceptual similarity needs at least one view");
    return perceptual_from_features(compute_view_features(scan, views, fx, resolution),
                                    compute_view_features(cad, views, fx, resolution));
}

double masked_iou(const Grid3& a, const Grid3& b, const Grid3& mask) {
    if (a.dims() != b.dims() || a.dims() != mask.dims()) throw Error("masked IoU: grid dimension mismatch");
    std::size_t inter = 0, uni = 0;
    const auto av = a.values(), bv = b.values(), mv = mask.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (!mv[i]) continue;
        inter += (av[i] && bv[i]) ? 1 : 0;
        uni += (av[i] || bv[i]) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double geometric_similarity(const VoxelObject& scan, const VoxelObject& cad) {
    if (!scan.visibility) throw Error("scan lacks visibility");
    const VoxelObject fitted = rescale_anisotropic(cad, scan.scale);
    return masked_iou(scan.occupancy, fitted.occupancy, *scan.visibility);
}

double combine_similarity(double f_percep, double f_geo, const ProxyConfig& cfg) {
    return cfg.w_percep * f_percep + cfg.w_geo * f_geo;
}

double combined_similarity(const VoxelObject& scan, const VoxelObject& cad, const ProxyConfig& cfg,
                           const FeatureExtractor& fx) {
    cfg.validate();
    const double fp = perceptual_similarity(scan, cad, cfg.views, fx, cfg.render_resolution);
    const double fg = geometric_similarity(scan, cad);
    return combine_similarity(fp, fg, cfg);
}

Digest proxy_content_hash(std::span<const VoxelObject> scans, std::span<const VoxelObject> cads,
                          const ProxyConfig& cfg, const FeatureExtractor& fx) {
    Sha256 h;
    h.update("wprx-v1\n");
    auto add_objects = [&](std::span<const VoxelObject> objs, std::string_view tag) {
        h.update(tag);
        for (const auto& o : objs) {
            h.update(o.id);
            h.update("\n");
            h.update(encode_grid(o));
        }
    };
    add_objects(scans, "scans\n");
    add_objects(cads, "cads\n");
    h.update("w_percep=" + fmt_double(cfg.w_percep) + "\nw_geo=" + fmt_double(cfg.w_geo) + "\n");
    for (const auto& v : cfg.views) h.update("view=" + fmt_double(v.azimuth_deg) + "," + fmt_double(v.elevation_deg) + "\n");
    h.update("resolution=" + std::to_string(cfg.render_resolution) + "\n");
    h.update("features=" + fx.fingerprint() + "\n");
    return h.finish();
}

std::vector<std::uint8_t> encode_proxy_cache(const ProxyMatrix& m, const Digest& hash) {
    ByteWriter w;
    w.str(std::string_view(kCacheMagic, 5));
    w.u8(kCacheVersion);
    w.bytes(hash);
    w.u32(static_cast<std::uint32_t>(m.n_scans));
    w.u32(static_cast<std::uint32_t>(m.n_cads));
    w.f32(m.w_percep);
    w.f32(m.w_geo);
    for (float v : m.values) w.f32(v);
    for (const auto* ids : {&m.scan_ids, &m.cad_ids}) {
        w.u32(static_cast<std::uint32_t>(ids->size()));
        for (const auto& id : *ids) w.short_string(id);
    }
    return w.take();
}

std::pair<ProxyMatrix, Digest> decode_proxy_cache(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 6 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 5) != kCacheMagic ||
        bytes[5] != kCacheVersion)
        throw Error("unsupported format");
    ByteReader r(bytes, "corrupt file");
    r.bytes(6);
    Digest hash{};
    const auto hb = r.bytes(32);
    std::copy(hb.begin(), hb.end(), hash.begin());
    ProxyMatrix m;
    m.n_scans = static_cast<int>(r.u32());
    m.n_cads = static_cast<int>(r.u32());
    m.w_percep = r.f32();
    m.w_geo = r.f32();
    const std::size_t n = static_cast<std::size_t>(m.n_scans) * static_cast<std::size_t>(m.n_cads);
    if (n * 4 > r.remaining()) throw Error("corrupt file");
    m.values.resize(n);
    for (auto& v : m.values) v = r.f32();
    for (auto* ids : {&m.scan_ids, &m.cad_ids}) {
        const std::uint32_t count = r.u32();
        if (count > r.remaining()) throw Error("corrupt file");
        for (std::uint32_t i = 0; i < count; ++i) ids->push_back(r.short_string());
    }
    if (r.remaining() != 0 || m.scan_ids.size() != static_cast<std::size_t>(m.n_scans) ||
        m.cad_ids.size() != static_cast<std::size_t>(m.n_cads))
        throw Error("corrupt file");
    return {std::move(m), hash};
}

ProxyBuild build_proxy_matrix(std::span<const VoxelObject> scans, std::span<const VoxelObject> cads,
                              const ProxyConfig& cfg, const FeatureExtractor& fx,
                              const std::filesystem::path& cache_path) {
    if (scans.empty() || cads.empty()) throw Error("proxy matrix needs non-empty scan and cad lists");
    cfg.validate();
    ProxyBuild out;
    out.hash = proxy_content_hash(scans, cads, cfg, fx);

    if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
        try {
            auto [m, stored] = decode_proxy_cache(read_file_bytes(cache_path));
            if (stored == out.hash) {
                out.matrix = std::move(m);
                out.cache_hit = true;
                return out;
            }
        } catch (const Error&) {
            // unreadable cache: fall through and rebuild
        }
    }

    for (const auto& s : scans)
        if (!s.visibility) throw Error("scan lacks visibility");
    for (const auto& c : cads)
        if (c.occupancy.count() == 0) throw Error("degenerate extent");

    const int ns = static_cast<int>(scans.size()), nc = static_cast<int>(cads.size());
    std::vector<ViewFeatures> scan_vf(static_cast<std::size_t>(ns)), cad_vf(static_cast<std::size_t>(nc));
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < ns + nc; ++i) {
        if (i < ns)
            scan_vf[i] = compute_view_features(scans[i], cfg.views, fx, cfg.render_resolution);
        else
            cad_vf[i - ns] = compute_view_features(cads[i - ns], cfg.views, fx, cfg.render_resolution);
    }

    ProxyMatrix& m = out.matrix;
    m.n_scans = ns;
    m.n_cads = nc;
    m.w_percep = static_cast<float>(cfg.w_percep);
    m.w_geo = static_cast<float>(cfg.w_geo);
    m.values.assign(static_cast<std::size_t>(ns) * nc, 0.0f);
    for (const auto& s : scans) m.scan_ids.push_back(s.id);
    for (const auto& c : cads) m.cad_ids.push_back(c.id);

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < ns; ++i) {
        for (int j = 0; j < nc; ++j) {
            const double fp = perceptual_from_features(scan_vf[i], cad_vf[j]);
            const double fg = geometric_similarity(scans[i], cads[j]);
            m.values[static_cast<std::size_t>(i) * nc + j] = static_cast<float>(combine_similarity(fp, fg, cfg));
        }
    }

    if (!cache_path.empty()) write_file_atomic(cache_path, encode_proxy_cache(m, out.hash));
    return out;
}

}  // namespace wsret
