#include "wsret/grid_io.hpp"

#include "wsret/binio.hpp"
#include "wsret/error.hpp"

namespace wsret {

namespace {

constexpr char kMagic[] = "WVOX1";
constexpr std::uint8_t kVersion = 1;

void pack_bits(ByteWriter& w, const Grid3& g) {
    const auto v = g.values();
    for (std::size_t i = 0; i < v.size(); i += 8) {
        std::uint8_t byte = 0;
        for (std::size_t b = 0; b < 8 && i + b < v.size(); ++b)
            if (v[i + b]) byte |= static_cast<std::uint8_t>(1u << b);
        w.u8(byte);
    }
}

Grid3 unpack_bits(ByteReader& r, int nx, int ny, int nz) {
    Grid3 g(nx, ny, nz);
    auto v = g.values();
    const auto packed = r.bytes((v.size() + 7) / 8);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (packed[i / 8] >> (i % 8)) & 1u;
    return g;
}

}  // namespace

std::vector<std::uint8_t> encode_grid(const VoxelObject& obj) {
    if (obj.visibility && obj.visibility->dims() != obj.occupancy.dims())
        throw Error("visibility and occupancy dimensions differ");
    ByteWriter w;
    w.str(std::string_view(kMagic, 5));
    w.u8(kVersion);
    w.u8(obj.visibility ? 1 : 0);
    for (int d : obj.occupancy.dims()) w.u32(static_cast<std::uint32_t>(d));
    for (float s : obj.scale) w.f32(s);
    pack_bits(w, obj.occupancy);
    if (obj.visibility) pack_bits(w, *obj.visibility);
    return w.take();
}

VoxelObject decode_grid(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 7 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 5) != kMagic ||
        bytes[5] != kVersion)
        throw Error("unsupported format");
    ByteReader r(bytes, "corrupt file");
    r.bytes(6);
    const std::uint8_t flags = r.u8();
    const int nx = static_cast<int>(r.u32()), ny = static_cast<int>(r.u32()), nz = static_cast<int>(r.u32());
    if (nx <= 0 || ny <= 0 || nz <= 0 || nx > 4096 || ny > 4096 || nz > 4096) throw Error("corrupt file");
    VoxelObject obj;
    for (auto& s : obj.scale) s = r.f32();
    obj.occupancy = unpack_bits(r, nx, ny, nz);
    if (flags & 1u) obj.visibility = unpack_bits(r, nx, ny, nz);
    if (r.remaining() != 0) throw Error("corrupt file");
    return obj;
}

void write_grid(const VoxelObject& obj, const std::filesystem::path& path) {
    write_file_atomic(path, encode_grid(obj));
}

VoxelObject read_grid(const std::filesystem::path& path) {
    VoxelObject obj = decode_grid(read_file_bytes(path));
    obj.id = path.stem().string();
    return obj;
}

}  // namespace wsret
