#include "wsret/checkpoint.hpp"

#include "wsret/binio.hpp"
#include "wsret/error.hpp"

namespace wsret {

namespace {

constexpr char kCkptMagic[] = "WCKP1";
constexpr std::uint8_t kCkptVersion = 1;
constexpr char kEmbMagic[] = "WEMB1";

template <typename Params>
auto tensors_in_order(Params& p) {
    std::vector<decltype(&p.params[0])> out;
    for (auto* group : {&p.params, &p.buffers, &p.adam_m, &p.adam_v})
        for (auto& t : *group) out.push_back(&t);
    return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const EncoderParams& params, const Digest& config_hash) {
    const auto tensors = tensors_in_order(params);
    ByteWriter w;
    w.str(std::string_view(kCkptMagic, 5));
    w.u8(kCkptVersion);
    w.bytes(config_hash);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto* t : tensors) {
        w.u32(static_cast<std::uint32_t>(t->shape.size()));
        for (int d : t->shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t->data) w.f32(static_cast<float>(v));
    }
    w.u64(params.step);
    return w.take();
}

EncoderParams decode_checkpoint(std::span<const std::uint8_t> bytes, const EncoderConfig& cfg, Digest* config_hash) {
    if (bytes.size() < 6 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 5) != kCkptMagic ||
        bytes[5] != kCkptVersion)
        throw Error("unsupported checkpoint");
    ByteReader r(bytes, "corrupt checkpoint");
    r.bytes(6);
    const auto hash = r.bytes(32);
    if (config_hash) std::copy(hash.begin(), hash.end(), config_hash->begin());

    EncoderParams p = init_encoder(cfg);
    const auto tensors = tensors_in_order(p);
    if (r.u32() != tensors.size()) throw Error("checkpoint does not match encoder config");
    for (Tensor* t : tensors) {
        const std::uint32_t rank = r.u32();
        if (rank != t->shape.size()) throw Error("checkpoint does not match encoder config");
        for (int d : t->shape)
            if (r.u32() != static_cast<std::uint32_t>(d)) throw Error("checkpoint does not match encoder config");
        for (double& v : t->data) v = r.f32();
    }
    p.step = r.u64();
    if (r.remaining() != 0) throw Error("corrupt checkpoint");
    return p;
}

void save_checkpoint(const EncoderParams& params, const Digest& config_hash, const std::filesystem::path& path) {
    write_file_atomic(path, encode_checkpoint(params, config_hash));
}

EncoderParams load_checkpoint(const std::filesystem::path& path, const EncoderConfig& cfg, Digest* config_hash) {
    return decode_checkpoint(read_file_bytes(path), cfg, config_hash);
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingSet& set, const Digest& config_hash) {
    if (set.vectors.size() != set.ids.size() * static_cast<std::size_t>(set.dim)) throw Error("embedding set shape mismatch");
    ByteWriter w;
    w.str(std::string_view(kEmbMagic, 5));
    w.u32(static_cast<std::uint32_t>(set.ids.size()));
    w.u32(static_cast<std::uint32_t>(set.dim));
    for (const auto& id : set.ids) w.short_string(id);
    for (double v : set.vectors) w.f32(static_cast<float>(v));
    w.bytes(config_hash);
    return w.take();
}

EmbeddingSet decode_embeddings(std::span<const std::uint8_t> bytes, Digest* config_hash) {
    if (bytes.size() < 5 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 5) != kEmbMagic)
        throw Error("unsupported format");
    ByteReader r(bytes, "corrupt file");
    r.bytes(5);
    EmbeddingSet set;
    const std::uint32_t count = r.u32();
    set.dim = static_cast<int>(r.u32());
    if (count > r.remaining() || set.dim <= 0) throw Error("corrupt file");
    for (std::uint32_t i = 0; i < count; ++i) set.ids.push_back(r.short_string());
    const std::size_t n = static_cast<std::size_t>(count) * static_cast<std::size_t>(set.dim);
    if (n * 4 + 32 != r.remaining()) throw Error("corrupt file");
    set.vectors.resize(n);
    for (auto& v : set.vectors) v = r.f32();
    const auto hash = r.bytes(32);
    if (config_hash) std::copy(hash.begin(), hash.end(), config_hash->begin());
    return set;
}

void save_embeddings(const EmbeddingSet& set, const Digest& config_hash, const std::filesystem::path& path) {
    write_file_atomic(path, encode_embeddings(set, config_hash));
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, Digest* config_hash) {
    return decode_embeddings(read_file_bytes(path), config_hash);
}

}  // namespace wsret
