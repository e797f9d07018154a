#include <doctest.h>

#include <filesystem>

#include "wsret/binio.hpp"
#include "wsret/error.hpp"
#include "wsret/grid_io.hpp"

using namespace wsret;

TEST_CASE("grid file size follows the format definition") {
    const auto scan = degrade(generate_prototype("table", 3), {}, 4);
    // header + two bit-packed 36^3 grids
    const std::size_t packed = (36 * 36 * 36 + 7) / 8;
    CHECK(packed == 5832);
    CHECK(encode_grid(scan).size() == kGridHeaderBytes + 2 * packed);
    CHECK(encode_grid(scan).size() == 11695);
    CHECK(encode_grid(generate_prototype("table", 3)).size() == kGridHeaderBytes + packed);
}

TEST_CASE("round trip is bit-identical for clean and degraded objects") {
    for (const auto& fam : family_names()) {
        const auto cad = generate_prototype(fam, 17);
        const auto scan = degrade(cad, {}, 5);
        CHECK(same_content(decode_grid(encode_grid(cad)), cad));
        CHECK(same_content(decode_grid(encode_grid(scan)), scan));
        CHECK(encode_grid(decode_grid(encode_grid(scan))) == encode_grid(scan));
    }
}

TEST_CASE("non-cubic grids round trip") {
    VoxelObject o;
    o.occupancy = Grid3(3, 5, 7);
    o.occupancy(2, 4, 6) = 1;
    o.occupancy(0, 1, 0) = 1;
    o.scale = {0.25f, 0.5f, 0.75f};
    CHECK(same_content(decode_grid(encode_grid(o)), o));
}

TEST_CASE("bad magic, truncation and trailing bytes are rejected") {
    auto bytes = encode_grid(generate_prototype("ring", 2));
    auto bad = bytes;
    bad[0] = 'X';
    bad[1] = 'X';
    bad[2] = 'X';
    bad[3] = 'X';
    CHECK_THROWS_WITH_AS(decode_grid(bad), "unsupported format", Error);
    auto wrong_version = bytes;
    wrong_version[5] = 9;
    CHECK_THROWS_WITH_AS(decode_grid(wrong_version), "unsupported format", Error);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 1);
    CHECK_THROWS_WITH_AS(decode_grid(truncated), "corrupt file", Error);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_WITH_AS(decode_grid(trailing), "corrupt file", Error);
}

TEST_CASE("write and read set the id from the file name") {
    const auto dir = std::filesystem::temp_directory_path() / "wsret_test_grid_io";
    std::filesystem::create_directories(dir);
    const auto scan = degrade(generate_prototype("cross", 1), {}, 2);
    write_grid(scan, dir / "scan_cross_0_1.wvox");
    const auto back = read_grid(dir / "scan_cross_0_1.wvox");
    CHECK(back.id == "scan_cross_0_1");
    CHECK(same_content(back, scan));
    std::filesystem::remove_all(dir);
}
