#include <doctest.h>

#include <filesystem>

#include "wsret/binio.hpp"
#include "wsret/checkpoint.hpp"
#include "wsret/error.hpp"
#include "wsret/hashing.hpp"

using namespace wsret;

namespace {

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.input_res = 8;
    cfg.channels = {3, 5};
    cfg.embed_dim = 12;
    return cfg;
}

EncoderParams trained_params() {
    auto p = init_encoder(small_config());
    auto g = zero_grads(p);
    for (auto& t : g)
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(i % 7) - 0.02;
    adam_step(p, g);
    adam_step(p, g);
    p.buffers[0].data[1] = 1.75;
    return p;
}

bool same_params(const EncoderParams& a, const EncoderParams& b) {
    auto eq = [](const std::vector<Tensor>& x, const std::vector<Tensor>& y) {
        if (x.size() != y.size()) return false;
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i].name != y[i].name || x[i].shape != y[i].shape || x[i].data != y[i].data) return false;
        return true;
    };
    return eq(a.params, b.params) && eq(a.buffers, b.buffers) && eq(a.adam_m, b.adam_m) && eq(a.adam_v, b.adam_v) &&
           a.step == b.step;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact including optimiser state") {
    const auto p = trained_params();
    const Digest h = sha256("config");
    const auto bytes = encode_checkpoint(p, h);
    Digest back_hash{};
    const auto back = decode_checkpoint(bytes, small_config(), &back_hash);
    CHECK(back_hash == h);
    CHECK(same_params(back, p));
    CHECK(back.step == 2);
    CHECK(encode_checkpoint(back, h) == bytes);
    CHECK(to_hex(sha256(bytes)) == to_hex(sha256(encode_checkpoint(trained_params(), h))));
}

TEST_CASE("checkpoint file save and load") {
    const auto dir = std::filesystem::temp_directory_path() / "wsret_test_ckpt";
    std::filesystem::create_directories(dir);
    const auto p = trained_params();
    save_checkpoint(p, sha256("x"), dir / "a.wckp");
    CHECK(same_params(load_checkpoint(dir / "a.wckp", small_config()), p));
    std::filesystem::remove_all(dir);
}

TEST_CASE("bad checkpoints are rejected") {
    const auto bytes = encode_checkpoint(trained_params(), sha256("c"));
    auto bad_magic = bytes;
    bad_magic[0] = 'Z';
    CHECK_THROWS_WITH_AS(decode_checkpoint(bad_magic, small_config()), "unsupported checkpoint", Error);
    auto bad_version = bytes;
    bad_version[5] = 2;
    CHECK_THROWS_WITH_AS(decode_checkpoint(bad_version, small_config()), "unsupported checkpoint", Error);
    auto cut = bytes;
    cut.resize(bytes.size() / 2);
    CHECK_THROWS_WITH_AS(decode_checkpoint(cut, small_config()), "corrupt checkpoint", Error);
    auto other = small_config();
    other.channels = {3, 6};
    CHECK_THROWS_AS(decode_checkpoint(bytes, other), Error);
}

TEST_CASE("embedding set round trip") {
    EmbeddingSet s;
    s.dim = 3;
    s.ids = {"cad_box_0", "scan_box_0_1"};
    s.vectors = {1, 0, 0, 0.6, 0.8, 0};
    const Digest h = sha256("cfg");
    Digest back_hash{};
    const auto back = decode_embeddings(encode_embeddings(s, h), &back_hash);
    CHECK(back.ids == s.ids);
    CHECK(back.dim == 3);
    CHECK(back.vectors == std::vector<double>{1, 0, 0, static_cast<float>(0.6), static_cast<float>(0.8), 0});
    CHECK(back_hash == h);
    auto bytes = encode_embeddings(s, h);
    bytes[1] = 'X';
    CHECK_THROWS_AS(decode_embeddings(bytes), Error);
    bytes = encode_embeddings(s, h);
    bytes.pop_back();
    CHECK_THROWS_AS(decode_embeddings(bytes), Error);
}
