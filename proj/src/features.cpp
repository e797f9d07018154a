#include "wsret/features.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include "wsret/binio.hpp"
#include "wsret/error.hpp"
#include "wsret/hashing.hpp"
#include "wsret/rng.hpp"

namespace wsret {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Planar [C][H][W] map.
struct Planar {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;
};

Planar conv_relu_pool(const Planar& in, const std::vector<double>& kernels, const ConvStage& st) {
    const int k = st.kernel, r = k / 2;
    const int patch = in.c * k * k;
    const int n_pix = in.h * in.w;
    RowMat cols = RowMat::Zero(patch, n_pix);
    for (int c = 0; c < in.c; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols.row((c * k + ky) * k + kx).data();
                for (int y = 0; y < in.h; ++y) {
                    const int sy = y + ky - r;
                    if (sy < 0 || sy >= in.h) continue;
                    const double* src = in.v.data() + (static_cast<std::size_t>(c) * in.h + sy) * in.w;
                    for (int x = 0; x < in.w; ++x) {
                        const int sx = x + kx - r;
                        if (sx >= 0 && sx < in.w) row[y * in.w + x] = src[sx];
                    }
                }
            }
    Eigen::Map<const RowMat> weights(kernels.data(), st.out_channels, patch);
    const RowMat response = (weights * cols).cwiseMax(0.0);

    Planar out;
    out.c = st.out_channels;
    out.h = in.h / st.pool;
    out.w = in.w / st.pool;
    out.v.assign(static_cast<std::size_t>(out.c) * out.h * out.w, 0.0);
    const double inv = 1.0 / (st.pool * st.pool);
    for (int c = 0; c < out.c; ++c)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                double s = 0.0;
                for (int dy = 0; dy < st.pool; ++dy)
                    for (int dx = 0; dx < st.pool; ++dx)
                        s += response(c, (y * st.pool + dy) * in.w + x * st.pool + dx);
                out.v[(static_cast<std::size_t>(c) * out.h + y) * out.w + x] = s * inv;
            }
    return out;
}

}  // namespace

FilterBankExtractor::FilterBankExtractor(std::uint64_t seed, std::vector<ConvStage> stages, int in_channels)
    : seed_(seed), stages_(std::move(stages)), in_channels_(in_channels) {
    if (stages_.empty()) throw Error("filter bank needs at least one stage");
    int cin = in_channels_;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        const auto& st = stages_[s];
        if (st.out_channels < 1 || st.kernel < 1 || st.kernel % 2 == 0 || st.pool < 1)
            throw Error("invalid filter bank stage");
        Rng rng(mix_seed({seed_, s, 0x6b65726eULL}));
        std::vector<double> w(static_cast<std::size_t>(st.out_channels) * cin * st.kernel * st.kernel);
        for (auto& x : w) x = rng.normal();
        kernels_.push_back(std::move(w));
        cin = st.out_channels;
    }
}

std::array<int, 3> FilterBankExtractor::output_shape(int resolution) const {
    int h = resolution;
    for (const auto& st : stages_) h /= st.pool;
    return {h, h, stages_.back().out_channels};
}

std::vector<double> FilterBankExtractor::extract(const Image& img) const {
    if (img.channels != in_channels_) throw Error("feature extractor: channel mismatch");
    Planar cur;
    cur.c = img.channels;
    cur.h = img.height;
    cur.w = img.width;
    cur.v.resize(img.data.size());
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                cur.v[(static_cast<std::size_t>(c) * cur.h + y) * cur.w + x] = img.at(y, x, c);
    for (std::size_t s = 0; s < stages_.size(); ++s) cur = conv_relu_pool(cur, kernels_[s], stages_[s]);
    return cur.v;
}

std::string FilterBankExtractor::fingerprint() const {
    std::string fp = "filter_bank:seed=" + std::to_string(seed_) + ":in=" + std::to_string(in_channels_);
    for (const auto& st : stages_)
        fp += ":" + std::to_string(st.out_channels) + "x" + std::to_string(st.kernel) + "/" + std::to_string(st.pool);
    return fp;
}

ExternalFeatureExtractor::ExternalFeatureExtractor(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    digest_ = to_hex(sha256(bytes));
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(bytes.begin(), bytes.end());
        for (const auto& rec : doc.at("features"))
            table_[rec.at("image_sha256").get<std::string>()] = rec.at("values").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error("external feature file: " + std::string(e.what()));
    }
}

std::vector<double> ExternalFeatureExtractor::extract(const Image& img) const {
    const auto it = table_.find(image_key(img));
    if (it == table_.end()) throw Error("external feature file has no entry for image " + image_key(img));
    return it->second;
}

std::vector<std::uint8_t> ppm_bytes(const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw Error("ppm: need 1 or 3 channels");
    ByteWriter w;
    w.str("P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n");
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = img.at(y, x, img.channels == 1 ? 0 : c);
                w.u8(static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))));
            }
    return w.take();
}

std::string image_key(const Image& img) { return to_hex(sha256(ppm_bytes(img))); }

std::unique_ptr<FeatureExtractor> make_feature_extractor(FeatureKind kind, std::uint64_t seed,
                                                         const std::filesystem::path& external_path) {
    if (kind == FeatureKind::external) return std::make_unique<ExternalFeatureExtractor>(external_path);
    return std::make_unique<FilterBankExtractor>(seed);
}

}  // namespace wsret
