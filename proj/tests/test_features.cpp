#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "wsret/error.hpp"
#include "wsret/features.hpp"
#include "wsret/rng.hpp"

using namespace wsret;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed) {
    Rng rng(seed);
    Image img(h, w, c);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

}  // namespace

TEST_CASE("default bank yields an 8x8x16 map at resolution 128") {
    const FilterBankExtractor fx(11);
    CHECK(fx.output_shape(128) == std::array<int, 3>{8, 8, 16});
    const auto f = fx.extract(random_image(128, 128, 3, 1));
    CHECK(f.size() == 8 * 8 * 16);
    for (double v : f) CHECK(v >= 0.0);
    CHECK(f == FilterBankExtractor(11).extract(random_image(128, 128, 3, 1)));
    CHECK(f != FilterBankExtractor(12).extract(random_image(128, 128, 3, 1)));
    CHECK(fx.fingerprint() != FilterBankExtractor(12).fingerprint());
}

TEST_CASE("single stage matches a naive convolution with kernels recovered from impulses") {
    const int n = 9, k = 3, r = 1, cout = 2;
    const FilterBankExtractor fx(5, {{cout, k, 1}}, 1);
    Image pos(n, n, 1), neg(n, n, 1);
    pos.at(4, 4) = 1.0;
    neg.at(4, 4) = -1.0;
    const auto fp = fx.extract(pos), fn = fx.extract(neg);
    // w[o][ky][kx] = relu(w) - relu(-w), read at the mirrored offset
    std::vector<double> w(static_cast<std::size_t>(cout) * k * k);
    for (int o = 0; o < cout; ++o)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const std::size_t at = (static_cast<std::size_t>(o) * n + (4 - ky + r)) * n + (4 - kx + r);
                w[(static_cast<std::size_t>(o) * k + ky) * k + kx] = fp[at] - fn[at];
            }
    const Image img = random_image(n, n, 1, 3);
    const auto got = fx.extract(img);
    for (int o = 0; o < cout; ++o)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double s = 0.0;
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const int sy = y + ky - r, sx = x + kx - r;
                        if (sy >= 0 && sy < n && sx >= 0 && sx < n)
                            s += w[(static_cast<std::size_t>(o) * k + ky) * k + kx] * img.at(sy, sx);
                    }
                CHECK(got[(static_cast<std::size_t>(o) * n + y) * n + x] == doctest::Approx(std::max(0.0, s)).epsilon(1e-12));
            }
}

TEST_CASE("average pooling of the ReLU response") {
    const FilterBankExtractor full(8, {{3, 3, 1}}, 3), pooled(8, {{3, 3, 2}}, 3);
    const Image img = random_image(8, 8, 3, 4);
    const auto a = full.extract(img), b = pooled.extract(img);
    REQUIRE(b.size() == 3 * 4 * 4);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                double s = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) s += a[(static_cast<std::size_t>(c) * 8 + 2 * y + dy) * 8 + 2 * x + dx];
                CHECK(b[(static_cast<std::size_t>(c) * 4 + y) * 4 + x] == doctest::Approx(s / 4).epsilon(1e-12));
            }
}

TEST_CASE("invalid banks and channel mismatch are rejected") {
    CHECK_THROWS_AS(FilterBankExtractor(1, {}), Error);
    CHECK_THROWS_AS(FilterBankExtractor(1, {{4, 2, 1}}), Error);
    CHECK_THROWS_AS(FilterBankExtractor(1).extract(Image(16, 16, 1)), Error);
}

TEST_CASE("external features are looked up by image hash") {
    const auto dir = std::filesystem::temp_directory_path() / "wsret_test_features";
    std::filesystem::create_directories(dir);
    const Image a = random_image(4, 4, 3, 1), b = random_image(4, 4, 3, 2);
    {
        std::ofstream f(dir / "feat.json");
        f << R"({"features":[{"image_sha256":")" << image_key(a) << R"(","values":[1.0,2.5,-3.0]}]})";
    }
    const auto fx = make_feature_extractor(FeatureKind::external, 0, dir / "feat.json");
    CHECK(fx->kind() == FeatureKind::external);
    CHECK(fx->extract(a) == std::vector<double>{1.0, 2.5, -3.0});
    CHECK_THROWS_AS(fx->extract(b), Error);
    {
        std::ofstream f(dir / "bad.json");
        f << "{not json";
    }
    CHECK_THROWS_AS(make_feature_extractor(FeatureKind::external, 0, dir / "bad.json"), Error);
    std::filesystem::remove_all(dir);
}
