#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "wsret/error.hpp"
#include "wsret/pipeline.hpp"

using namespace wsret;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
    return parse_config(
        "dataset.families = 3\ndataset.prototypes_per_family = 2\ndataset.scans_per_prototype = 4\n"
        "proxy.render_resolution = 32\nproxy.views = 180:45,90:45\n"
        "encoder.channels = 4,8\nencoder.embed_dim = 16\n"
        "train.epochs = 2\ntrain.batch_size = 8\ntrain.calibration_objects = 8\ntopk.n_samples = 50\ntopk.k = 2\n"
        "split.train_scans_per_prototype = 3\nsplit.held_out_families = 1\n");
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

std::string read_text(const fs::path& p) {
    std::ifstream f(p);
    return {std::istreambuf_iterator<char>(f), {}};
}

std::size_t line_count(const fs::path& p) {
    std::ifstream f(p);
    return static_cast<std::size_t>(std::count(std::istreambuf_iterator<char>(f), {}, '\n'));
}

}  // namespace

TEST_CASE("seen and unseen splits") {
    auto cfg = small_config();
    const Dataset data = generate_dataset(dataset_spec(cfg));
    REQUIRE(data.scans.size() == 24);
    REQUIRE(data.cads.size() == 6);

    const Split seen = make_split(data, cfg);
    CHECK(seen.train_scans.size() == 18);
    CHECK(seen.test_scans.size() == 6);
    CHECK(seen.train_cads.size() == 6);
    CHECK(seen.db_cads.size() == 6);

    cfg.split.mode = SplitMode::unseen;
    const Split unseen = make_split(data, cfg);
    const std::string held = family_names()[2];
    CHECK(unseen.train_scans.size() == 16);
    CHECK(unseen.test_scans.size() == 8);
    CHECK(unseen.train_cads.size() == 4);
    CHECK(unseen.db_cads.size() == 6);
    for (int s : unseen.test_scans) CHECK(data.scans[static_cast<std::size_t>(s)].family == held);
    for (int s : unseen.train_scans) CHECK(data.scans[static_cast<std::size_t>(s)].family != held);
    for (int c : unseen.train_cads) CHECK(data.cads[static_cast<std::size_t>(c)].family != held);
}

TEST_CASE("end-to-end pipeline on a small dataset") {
    TempDir tmp("wsret_test_pipeline");
    const auto cfg = small_config();
    std::ostringstream log;
    cmd_gen_data(cfg, tmp.path, false, log);
    CHECK(fs::exists(tmp.path / "manifest.json"));
    const auto manifest = nlohmann::json::parse(read_text(tmp.path / "manifest.json"));
    CHECK(manifest["n_cads"] == 6);
    CHECK(manifest["n_scans"] == 24);

    CHECK_THROWS_AS(cmd_gen_data(cfg, tmp.path, false, log), Error);

    const auto first = cmd_compute_proxy(cfg, tmp.path, log);
    CHECK_FALSE(first.cache_hit);
    const auto second = cmd_compute_proxy(cfg, tmp.path, log);
    CHECK(second.cache_hit);
    CHECK(second.matrix == first.matrix);
    for (float v : first.matrix.values) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }

    const fs::path run = run_directory(cfg, tmp.path);
    const auto trained = cmd_train(cfg, tmp.path, run, log);
    CHECK(trained.log.size() == 6);
    CHECK(line_count(run / "train_log.ndjson") == 6);
    CHECK(fs::exists(run / "checkpoint_best.wckp"));

    const auto rep = cmd_eval(cfg, tmp.path, run, {}, false, log);
    CHECK(rep.overall.queries == 6);
    CHECK(line_count(run / "retrieval.csv") == 7);
    const auto json = nlohmann::json::parse(read_text(run / "eval.json"));
    CHECK(json["top1"] == rep.overall.top1);

    const auto orep = cmd_eval(cfg, tmp.path, run, {}, true, log);
    CHECK(orep.overall.rq == 1.0);
    CHECK(line_count(run / "retrieval_oracle.csv") == 7);
    const std::string table = cmd_report(run);
    CHECK(table.find("| all | learned |") != std::string::npos);
    CHECK(table.find("| all | proxy oracle |") != std::string::npos);

    SUBCASE("a checkpoint from a different config is rejected") {
        auto other = cfg;
        other.train.epochs = 3;
        CHECK_THROWS_WITH_AS(load_run_checkpoint(other, run / "checkpoint_final.wckp"),
                             "checkpoint/config hash mismatch", Error);
    }
    SUBCASE("a dataset generated with other settings is rejected") {
        auto other = cfg;
        other.seed = 5;
        CHECK_THROWS_AS(load_dataset(other, tmp.path), Error);
    }
    SUBCASE("a missing proxy cache is reported") {
        auto other = cfg;
        other.proxy.w_percep = 0.6;
        other.proxy.w_geo = 0.4;
        CHECK_THROWS_AS(load_proxy(other, load_dataset(other, tmp.path), tmp.path), Error);
    }
    SUBCASE("regenerating with force succeeds") {
        cmd_gen_data(cfg, tmp.path, true, log);
        CHECK(load_dataset(cfg, tmp.path).scans.size() == 24);
    }
}

TEST_CASE("ground truth comes from the source prototype and the proxy ranking") {
    const auto cfg = small_config();
    const Dataset data = generate_dataset(dataset_spec(cfg));
    ProxyMatrix proxy;
    proxy.n_scans = 24;
    proxy.n_cads = 6;
    for (int i = 0; i < 24; ++i)
        for (int j = 0; j < 6; ++j) proxy.values.push_back(static_cast<float>((i + 2 * j) % 7) / 7.0f);
    const std::vector<int> queries{0, 5}, db{0, 1, 2, 3, 4, 5};
    const auto gt = make_ground_truth(data, proxy, queries, db);
    REQUIRE(gt.size() == 2);
    for (std::size_t n = 0; n < 2; ++n) {
        const int q = queries[n];
        const auto& proto = data.cads[static_cast<std::size_t>(data.scan_prototype[static_cast<std::size_t>(q)])];
        CHECK(gt[n].query_id == data.scans[static_cast<std::size_t>(q)].id);
        CHECK(gt[n].cad_id == proto.id);
        CHECK(gt[n].family == proto.family);
        REQUIRE(gt[n].ranked_ids.size() == 3);
        const auto oracle = retrieve_oracle(data, proxy, std::vector<int>{q}, db, 3);
        CHECK(gt[n].ranked_ids == oracle[0].ranked_cad_ids);
    }
}

TEST_CASE("bench prints one row per sample count") {
    std::ostringstream out;
    cmd_bench(20, 3, 0.05, 3, 1, out);
    std::istringstream is(out.str());
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(is, line)) lines.push_back(line);
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "n_samples,forward_variance,vjp_variance");
    CHECK(lines[1].rfind("10,", 0) == 0);
    CHECK(lines[4].rfind("10000,", 0) == 0);
    CHECK_THROWS_AS(cmd_bench(5, 6, 0.05, 3, 1, out), Error);
}
