#include "wsret/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <unordered_map>

#include <json.hpp>

#include "wsret/binio.hpp"
#include "wsret/error.hpp"
#include "wsret/grid_io.hpp"
#include "wsret/rng.hpp"

namespace wsret {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kFinalCheckpoint = "checkpoint_final.wckp";
constexpr const char* kBestCheckpoint = "checkpoint_best.wckp";
constexpr const char* kEmbeddings = "embeddings.wemb";

std::string hex12(const Digest& d) { return to_hex(d).substr(0, 12); }

std::string read_text(const fs::path& p) {
    const auto bytes = read_file_bytes(p);
    return std::string(bytes.begin(), bytes.end());
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path default_checkpoint(const fs::path& run_dir, const fs::path& checkpoint) {
    return checkpoint.empty() ? run_dir / kFinalCheckpoint : checkpoint;
}

}  // namespace

DatasetSpec dataset_spec(const ExperimentConfig& cfg) {
    DatasetSpec s = cfg.dataset;
    s.seed = cfg.seed;
    return s;
}

TrainConfig train_config(const ExperimentConfig& cfg) {
    TrainConfig t = cfg.train;
    t.seed = cfg.seed;
    t.topk.seed = mix_seed({cfg.seed, 0x746f706bULL});
    return t;
}

std::unique_ptr<FeatureExtractor> feature_extractor(const ExperimentConfig& cfg) {
    return make_feature_extractor(cfg.features, cfg.feature_seed, cfg.features_path);
}

fs::path run_directory(const ExperimentConfig& cfg, const fs::path& data_dir) {
    return data_dir / "runs" / hex12(config_hash(cfg));
}

Split make_split(const Dataset& data, const ExperimentConfig& cfg) {
    Split s;
    const int n_fam = cfg.dataset.n_families;
    const int held_from = n_fam - cfg.split.held_out_families;
    const auto& fams = family_names();
    auto family_index = [&](const std::string& f) {
        return static_cast<int>(std::find(fams.begin(), fams.end(), f) - fams.begin());
    };
    std::map<int, int> seen_count;
    for (std::size_t i = 0; i < data.scans.size(); ++i) {
        const int proto = data.scan_prototype[i];
        if (cfg.split.mode == SplitMode::seen) {
            const int n = seen_count[proto]++;
            (n < cfg.split.train_scans_per_prototype ? s.train_scans : s.test_scans).push_back(static_cast<int>(i));
        } else {
            const bool held = family_index(data.cads[static_cast<std::size_t>(proto)].family) >= held_from;
            (held ? s.test_scans : s.train_scans).push_back(static_cast<int>(i));
        }
    }
    for (std::size_t c = 0; c < data.cads.size(); ++c) {
        s.db_cads.push_back(static_cast<int>(c));
        if (cfg.split.mode == SplitMode::seen || family_index(data.cads[c].family) < held_from)
            s.train_cads.push_back(static_cast<int>(c));
    }
    if (s.train_scans.empty() || s.test_scans.empty() || s.train_cads.empty()) throw Error("split leaves an empty set");
    return s;
}

std::vector<GroundTruth> make_ground_truth(const Dataset& data, const ProxyMatrix& proxy, std::span<const int> queries,
                                           std::span<const int> db) {
    std::vector<std::string> ids;
    for (int c : db) ids.push_back(data.cads[static_cast<std::size_t>(c)].id);
    const int k = std::min<int>(3, static_cast<int>(db.size()));
    std::vector<GroundTruth> out;
    for (int q : queries) {
        const auto& scan = data.scans[static_cast<std::size_t>(q)];
        const auto& proto = data.cads[static_cast<std::size_t>(data.scan_prototype[static_cast<std::size_t>(q)])];
        std::vector<double> row;
        for (int c : db) row.push_back(proxy.at(q, c));
        GroundTruth g;
        g.query_id = scan.id;
        g.cad_id = proto.id;
        g.family = proto.family;
        g.ranked_ids = rank_by_scores(scan.id, row, ids, k).ranked_cad_ids;
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<RetrievalResult> retrieve_learned(const Dataset& data, const EncoderParams& params,
                                              std::span<const int> queries, std::span<const int> db, int k) {
    std::vector<VoxelObject> q_objs, db_objs;
    for (int q : queries) q_objs.push_back(data.scans[static_cast<std::size_t>(q)]);
    for (int c : db) db_objs.push_back(data.cads[static_cast<std::size_t>(c)]);
    const EmbeddingSet db_set = embed_set(db_objs, params);
    const EmbeddingSet q_set = embed_set(q_objs, params);
    std::vector<RetrievalResult> out;
    for (std::size_t i = 0; i < q_set.size(); ++i) out.push_back(retrieve_topk(q_set.ids[i], q_set.row(i), db_set, k));
    return out;
}

std::vector<RetrievalResult> retrieve_oracle(const Dataset& data, const ProxyMatrix& proxy,
                                             std::span<const int> queries, std::span<const int> db, int k) {
    std::vector<std::string> ids;
    for (int c : db) ids.push_back(data.cads[static_cast<std::size_t>(c)].id);
    std::vector<RetrievalResult> out;
    for (int q : queries) {
        std::vector<double> row;
        for (int c : db) row.push_back(proxy.at(q, c));
        out.push_back(rank_by_scores(data.scans[static_cast<std::size_t>(q)].id, row, ids, k));
    }
    return out;
}

std::string log_hash(std::span<const TrainLogRecord> log) {
    std::string text;
    for (TrainLogRecord r : log) {
        r.wall_ms = 0.0;
        text += to_ndjson(r) + "\n";
    }
    return to_hex(sha256(text));
}

void cmd_gen_data(const ExperimentConfig& cfg, const fs::path& data_dir, bool force, std::ostream& out) {
    cfg.validate();
    if (fs::exists(data_dir) && !fs::is_empty(data_dir)) {
        if (!force) throw Error("output directory is not empty (use --force): " + data_dir.string());
        fs::remove_all(data_dir / "cads");
        fs::remove_all(data_dir / "scans");
        fs::remove(data_dir / kManifest);
    }
    fs::create_directories(data_dir / "cads");
    fs::create_directories(data_dir / "scans");

    const Dataset data = generate_dataset(dataset_spec(cfg));
    ordered_json objects = ordered_json::array();
    for (const auto& c : data.cads) {
        write_grid(c, data_dir / "cads" / (c.id + ".wvox"));
        objects.push_back({{"id", c.id}, {"family", c.family}, {"role", "cad"}, {"prototype", c.id},
                           {"file", "cads/" + c.id + ".wvox"}});
    }
    for (std::size_t i = 0; i < data.scans.size(); ++i) {
        const auto& s = data.scans[i];
        const auto& proto = data.cads[static_cast<std::size_t>(data.scan_prototype[i])];
        write_grid(s, data_dir / "scans" / (s.id + ".wvox"));
        objects.push_back({{"id", s.id}, {"family", s.family}, {"role", "scan"}, {"prototype", proto.id},
                           {"file", "scans/" + s.id + ".wvox"}});
    }
    ordered_json manifest;
    manifest["dataset_hash"] = to_hex(dataset_hash(cfg));
    manifest["n_cads"] = data.cads.size();
    manifest["n_scans"] = data.scans.size();
    manifest["objects"] = objects;
    write_text_atomic(data_dir / kManifest, manifest.dump(1) + "\n");
    out << "wrote " << data.cads.size() << " CADs and " << data.scans.size() << " scans to " << data_dir.string()
        << "\n";
}

Dataset load_dataset(const ExperimentConfig& cfg, const fs::path& data_dir) {
    const fs::path mpath = data_dir / kManifest;
    if (!fs::exists(mpath)) throw Error("missing dataset: " + mpath.string());
    ordered_json m;
    try {
        m = ordered_json::parse(read_text(mpath));
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("corrupt manifest: ") + e.what());
    }
    if (m.value("dataset_hash", std::string()) != to_hex(dataset_hash(cfg)))
        throw Error("dataset was generated with different settings (hash mismatch)");
    Dataset data;
    std::unordered_map<std::string, int> cad_index;
    std::vector<std::string> scan_proto;
    try {
        for (const auto& o : m.at("objects")) {
            VoxelObject obj = read_grid(data_dir / o.at("file").get<std::string>());
            obj.id = o.at("id").get<std::string>();
            obj.family = o.at("family").get<std::string>();
            if (o.at("role") == "cad") {
                cad_index[obj.id] = static_cast<int>(data.cads.size());
                data.cads.push_back(std::move(obj));
            } else {
                scan_proto.push_back(o.at("prototype").get<std::string>());
                data.scans.push_back(std::move(obj));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("corrupt manifest: ") + e.what());
    }
    for (const auto& p : scan_proto) {
        const auto it = cad_index.find(p);
        if (it == cad_index.end()) throw Error("manifest references unknown prototype " + p);
        data.scan_prototype.push_back(it->second);
    }
    return data;
}

fs::path proxy_cache_path(const ExperimentConfig& cfg, const Dataset& data, const fs::path& data_dir) {
    const auto fx = feature_extractor(cfg);
    return data_dir / "proxy" / (hex12(proxy_content_hash(data.scans, data.cads, cfg.proxy, *fx)) + ".wprx");
}

ProxyBuild cmd_compute_proxy(const ExperimentConfig& cfg, const fs::path& data_dir, std::ostream& out) {
    cfg.validate();
    const Dataset data = load_dataset(cfg, data_dir);
    const auto fx = feature_extractor(cfg);
    const fs::path path = proxy_cache_path(cfg, data, data_dir);
    fs::create_directories(path.parent_path());
    ProxyBuild b = build_proxy_matrix(data.scans, data.cads, cfg.proxy, *fx, path);
    const auto& v = b.matrix.values;
    double lo = 1e300, hi = -1e300, sum = 0.0;
    for (float x : v) {
        lo = std::min<double>(lo, x);
        hi = std::max<double>(hi, x);
        sum += x;
    }
    out << (b.cache_hit ? "proxy cache hit: " : "proxy computed: ") << path.string() << "\n";
    out << "proxy " << b.matrix.n_scans << "x" << b.matrix.n_cads << " min " << fmt("%.6f", lo) << " mean "
        << fmt("%.6f", v.empty() ? 0.0 : sum / static_cast<double>(v.size())) << " max " << fmt("%.6f", hi) << "\n";
    return b;
}

ProxyMatrix load_proxy(const ExperimentConfig& cfg, const Dataset& data, const fs::path& data_dir) {
    const fs::path path = proxy_cache_path(cfg, data, data_dir);
    if (!fs::exists(path)) throw Error("proxy cache missing (run compute-proxy): " + path.string());
    auto [m, hash] = decode_proxy_cache(read_file_bytes(path));
    const auto fx = feature_extractor(cfg);
    if (hash != proxy_content_hash(data.scans, data.cads, cfg.proxy, *fx))
        throw Error("proxy cache does not match dataset/config");
    return m;
}

TrainResult cmd_train(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& run_dir,
                      std::ostream& out) {
    cfg.validate();
    const Dataset data = load_dataset(cfg, data_dir);
    const ProxyMatrix proxy = load_proxy(cfg, data, data_dir);
    const Split split = make_split(data, cfg);
    const TrainConfig tc = train_config(cfg);
    fs::create_directories(run_dir);
    write_text_atomic(run_dir / "config.txt", serialize_config(cfg));

    const int steps = steps_per_epoch(split.train_scans.size(), tc.batch_size);
    double epoch_sum = 0.0;
    auto progress = [&](const TrainLogRecord& r) {
        epoch_sum += r.loss;
        if (r.step % static_cast<std::uint64_t>(steps) == 0) {
            out << "epoch " << (r.epoch + 1) << "/" << tc.epochs << " loss " << fmt("%.6f", epoch_sum / steps) << "\n";
            out.flush();
            epoch_sum = 0.0;
        }
    };
    TrainResult res = train_encoder(data.scans, data.cads, proxy, split.train_scans, split.train_cads, cfg.encoder, tc,
                                    progress);
    const Digest h = config_hash(cfg);
    save_checkpoint(res.final_params, h, run_dir / kFinalCheckpoint);
    save_checkpoint(res.best_params, h, run_dir / kBestCheckpoint);
    std::string log;
    for (const auto& r : res.log) log += to_ndjson(r) + "\n";
    write_text_atomic(run_dir / "train_log.ndjson", log);
    out << "trained " << res.log.size() << " steps; best epoch " << (res.best_epoch + 1) << "; log hash "
        << log_hash(res.log) << "\n";
    return res;
}

EncoderParams load_run_checkpoint(const ExperimentConfig& cfg, const fs::path& path) {
    if (!fs::exists(path)) throw Error("missing checkpoint: " + path.string());
    Digest h{};
    EncoderParams p = load_checkpoint(path, cfg.encoder, &h);
    if (h != config_hash(cfg)) throw Error("checkpoint/config hash mismatch");
    return p;
}

EmbeddingSet cmd_embed(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& run_dir,
                       const fs::path& checkpoint, std::ostream& out) {
    cfg.validate();
    const Dataset data = load_dataset(cfg, data_dir);
    const EncoderParams params = load_run_checkpoint(cfg, default_checkpoint(run_dir, checkpoint));
    std::vector<VoxelObject> all(data.cads);
    all.insert(all.end(), data.scans.begin(), data.scans.end());
    const EmbeddingSet set = embed_set(all, params);
    fs::create_directories(run_dir);
    save_embeddings(set, config_hash(cfg), run_dir / kEmbeddings);
    out << "embedded " << set.size() << " objects to " << (run_dir / kEmbeddings).string() << "\n";
    return set;
}

std::vector<RetrievalResult> cmd_retrieve(const ExperimentConfig& cfg, const fs::path& data_dir,
                                          const fs::path& run_dir, bool oracle, std::ostream& out) {
    cfg.validate();
    const Dataset data = load_dataset(cfg, data_dir);
    const Split split = make_split(data, cfg);
    const ProxyMatrix proxy = load_proxy(cfg, data, data_dir);
    std::vector<RetrievalResult> results;
    if (oracle) {
        results = retrieve_oracle(data, proxy, split.test_scans, split.db_cads, cfg.retrieve_k);
    } else {
        const fs::path path = run_dir / kEmbeddings;
        if (!fs::exists(path)) throw Error("missing embeddings (run embed): " + path.string());
        Digest h{};
        const EmbeddingSet all = load_embeddings(path, &h);
        if (h != config_hash(cfg)) throw Error("embeddings/config hash mismatch");
        std::unordered_map<std::string, std::size_t> row;
        for (std::size_t i = 0; i < all.size(); ++i) row[all.ids[i]] = i;
        auto find = [&](const std::string& id) {
            const auto it = row.find(id);
            if (it == row.end()) throw Error("embeddings lack object " + id);
            return it->second;
        };
        EmbeddingSet db;
        db.dim = all.dim;
        for (int c : split.db_cads) {
            const auto& id = data.cads[static_cast<std::size_t>(c)].id;
            const auto r = all.row(find(id));
            db.ids.push_back(id);
            db.vectors.insert(db.vectors.end(), r.begin(), r.end());
        }
        for (int q : split.test_scans) {
            const auto& id = data.scans[static_cast<std::size_t>(q)].id;
            results.push_back(retrieve_topk(id, all.row(find(id)), db, cfg.retrieve_k));
        }
    }
    const auto gt = make_ground_truth(data, proxy, split.test_scans, split.db_cads);
    fs::create_directories(run_dir);
    const fs::path csv = run_dir / (oracle ? "retrieval_oracle.csv" : "retrieval.csv");
    write_text_atomic(csv, results_csv(results, gt));
    out << "wrote " << results.size() << " retrievals to " << csv.string() << "\n";
    return results;
}

EvalReport cmd_eval(const ExperimentConfig& cfg, const fs::path& data_dir, const fs::path& run_dir,
                    const fs::path& checkpoint, bool oracle, std::ostream& out) {
    if (!oracle) cmd_embed(cfg, data_dir, run_dir, checkpoint, out);
    const auto results = cmd_retrieve(cfg, data_dir, run_dir, oracle, out);
    const Dataset data = load_dataset(cfg, data_dir);
    const Split split = make_split(data, cfg);
    const ProxyMatrix proxy = load_proxy(cfg, data, data_dir);
    const auto gt = make_ground_truth(data, proxy, split.test_scans, split.db_cads);
    const EvalReport rep = evaluate(results, gt, data.cads);
    const fs::path path = run_dir / (oracle ? "eval_oracle.json" : "eval.json");
    write_text_atomic(path, report_json(rep));
    const auto& m = rep.overall;
    out << (oracle ? "oracle" : "learned") << " top1 " << fmt("%.4f", m.top1) << " top5 " << fmt("%.4f", m.top5)
        << " cat " << fmt("%.4f", m.cat) << " iou@1 " << fmt("%.4f", m.iou_top1) << " iou@5 "
        << fmt("%.4f", m.iou_top5) << " rq " << fmt("%.4f", m.rq) << " mrr " << fmt("%.4f", m.mrr) << "\n";
    out << "wrote " << path.string() << "\n";
    return rep;
}

void cmd_bench(int n, int k, double sigma, int repeats, std::uint64_t seed, std::ostream& out) {
    if (n < 1 || k < 1 || k > n) throw Error("bench: need 1 <= k <= n");
    if (repeats < 2) throw Error("bench: repeats must be >= 2");
    Rng rng(seed, 0x62656e6368ULL);
    std::vector<double> scores(static_cast<std::size_t>(n));
    for (auto& s : scores) s = rng.uniform(-1.0, 1.0);
    const std::vector<int> counts{10, 100, 1000, 10000};
    out << "n_samples,forward_variance,vjp_variance\n";
    for (const auto& r : estimator_variance(scores, k, sigma, counts, repeats, seed))
        out << r.n_samples << "," << fmt("%.6e", r.forward_variance) << "," << fmt("%.6e", r.vjp_variance) << "\n";
}

std::string cmd_report(const fs::path& run_dir) {
    auto load = [&](const char* name) -> ordered_json {
        const fs::path p = run_dir / name;
        if (!fs::exists(p)) return nullptr;
        try {
            return ordered_json::parse(read_text(p));
        } catch (const nlohmann::json::exception& e) {
            throw Error(std::string("corrupt report ") + name + ": " + e.what());
        }
    };
    const ordered_json learned = load("eval.json");
    const ordered_json oracle = load("eval_oracle.json");
    if (learned.is_null() && oracle.is_null()) throw Error("no evaluation reports in " + run_dir.string());
    static const char* keys[] = {"top1", "top5", "cat", "iou_top1", "iou_top5", "rq", "mrr"};
    auto cell = [](const ordered_json& j, const char* key) {
        return j.is_null() ? std::string("-") : fmt("%.4f", j.at(key).get<double>());
    };
    std::string s = "| scope | method |";
    for (const char* k : keys) s += std::string(" ") + k + " |";
    s += "\n|---|---|";
    for (std::size_t i = 0; i < std::size(keys); ++i) s += "---|";
    s += "\n";
    auto rows = [&](const std::string& scope, const ordered_json& l, const ordered_json& o) {
        for (const auto& [name, j] : {std::pair{"learned", &l}, std::pair{"proxy oracle", &o}}) {
            s += "| " + scope + " | " + name + " |";
            for (const char* k : keys) s += " " + cell(*j, k) + " |";
            s += "\n";
        }
    };
    rows("all", learned, oracle);
    const ordered_json& fam_src = learned.is_null() ? oracle : learned;
    for (const auto& [fam, _] : fam_src.at("per_family").items()) {
        const ordered_json l = learned.is_null() ? ordered_json() : learned["per_family"].value(fam, ordered_json());
        const ordered_json o = oracle.is_null() ? ordered_json() : oracle["per_family"].value(fam, ordered_json());
        rows(fam, l, o);
    }
    return s;
}

}  // namespace wsret
