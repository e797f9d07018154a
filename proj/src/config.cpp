#include "wsret/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "wsret/binio.hpp"
#include "wsret/error.hpp"

namespace wsret {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw Error("");
        return d;
    } catch (...) {
        throw Error("config: bad number for " + key + ": " + v);
    }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw Error("config: bad integer for " + key + ": " + v);
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw Error("config: bad integer for " + key + ": " + v);
    return out;
}

int parse_i32(const std::string& key, const std::string& v) {
    const auto x = parse_int(key, v);
    if (x < -(1LL << 31) || x >= (1LL << 31)) throw Error("config: integer out of range for " + key);
    return static_cast<int>(x);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw Error("config: bad boolean for " + key + ": " + v);
}

std::string fmt_views(const std::vector<ViewPose>& views) {
    std::string s;
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (i) s += ",";
        s += fmt_double(views[i].azimuth_deg) + ":" + fmt_double(views[i].elevation_deg);
    }
    return s;
}

std::vector<ViewPose> parse_views(const std::string& key, const std::string& v) {
    std::vector<ViewPose> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw Error("config: bad view for " + key + ": " + item);
        out.push_back({parse_double(key, trim(item.substr(0, colon))), parse_double(key, trim(item.substr(colon + 1)))});
    }
    return out;
}

std::string fmt_ints(const std::vector<int>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

std::vector<int> parse_ints(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_i32(key, trim(item)));
    return out;
}

struct Field {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

#define WSRET_DOUBLE(KEY, EXPR) \
    {KEY, {[](const ExperimentConfig& c) { return fmt_double(c.EXPR); }, \
           [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.EXPR = parse_double(k, v); }}}
#define WSRET_INT(KEY, EXPR) \
    {KEY, {[](const ExperimentConfig& c) { return std::to_string(c.EXPR); }, \
           [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.EXPR = parse_i32(k, v); }}}
#define WSRET_U64(KEY, EXPR) \
    {KEY, {[](const ExperimentConfig& c) { return std::to_string(c.EXPR); }, \
           [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.EXPR = parse_u64(k, v); }}}
#define WSRET_BOOL(KEY, EXPR) \
    {KEY, {[](const ExperimentConfig& c) { return std::string(c.EXPR ? "true" : "false"); }, \
           [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.EXPR = parse_bool(k, v); }}}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table = {
        WSRET_U64("seed", seed),
        WSRET_INT("dataset.families", dataset.n_families),
        WSRET_INT("dataset.prototypes_per_family", dataset.n_prototypes_per_family),
        WSRET_INT("dataset.scans_per_prototype", dataset.n_scans_per_prototype),
        WSRET_DOUBLE("dataset.noise_flip_prob", dataset.degradation.noise_flip_prob),
        WSRET_INT("dataset.carve_view_count", dataset.degradation.carve_view_count),
        WSRET_DOUBLE("dataset.dropout_fraction", dataset.degradation.dropout_fraction),
        WSRET_DOUBLE("dataset.clutter_prob", dataset.degradation.clutter_prob),
        WSRET_DOUBLE("dataset.jitter_scale", dataset.degradation.jitter_scale),
        WSRET_DOUBLE("proxy.w_percep", proxy.w_percep),
        WSRET_DOUBLE("proxy.w_geo", proxy.w_geo),
        WSRET_INT("proxy.render_resolution", proxy.render_resolution),
        {"proxy.views",
         {[](const ExperimentConfig& c) { return fmt_views(c.proxy.views); },
          [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.proxy.views = parse_views(k, v); }}},
        {"proxy.features",
         {[](const ExperimentConfig& c) {
              return std::string(c.features == FeatureKind::filter_bank ? "filter_bank" : "external");
          },
          [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "filter_bank") c.features = FeatureKind::filter_bank;
              else if (v == "external") c.features = FeatureKind::external;
              else throw Error("config: bad value for " + k + ": " + v);
          }}},
        WSRET_U64("proxy.feature_seed", feature_seed),
        {"proxy.features_path",
         {[](const ExperimentConfig& c) { return c.features_path; },
          [](ExperimentConfig& c, const std::string&, const std::string& v) { c.features_path = v; }}},
        WSRET_DOUBLE("topk.sigma", train.topk.sigma),
        WSRET_INT("topk.n_samples", train.topk.n_samples),
        WSRET_DOUBLE("topk.soft_sigma", train.soft_sigma),
        WSRET_INT("topk.k", train.k),
        WSRET_BOOL("topk.share_samples", train.topk.share_samples_fwd_bwd),
        WSRET_BOOL("topk.ordered", train.ordered),
        WSRET_INT("train.batch_size", train.batch_size),
        WSRET_DOUBLE("train.lr", train.adam.lr),
        WSRET_INT("train.epochs", train.epochs),
        {"train.loss",
         {[](const ExperimentConfig& c) { return to_string(c.train.loss); },
          [](ExperimentConfig& c, const std::string&, const std::string& v) { c.train.loss = parse_loss_kind(v); }}},
        WSRET_DOUBLE("train.triplet_margin", train.triplet_margin),
        WSRET_INT("train.calibration_objects", train.calibration_objects),
        {"encoder.channels",
         {[](const ExperimentConfig& c) { return fmt_ints(c.encoder.channels); },
          [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.encoder.channels = parse_ints(k, v); }}},
        WSRET_INT("encoder.residual_blocks", encoder.residual_blocks),
        WSRET_INT("encoder.embed_dim", encoder.embed_dim),
        WSRET_U64("encoder.seed", encoder.seed),
        {"split.mode",
         {[](const ExperimentConfig& c) { return std::string(c.split.mode == SplitMode::seen ? "seen" : "unseen"); },
          [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "seen") c.split.mode = SplitMode::seen;
              else if (v == "unseen") c.split.mode = SplitMode::unseen;
              else throw Error("config: bad value for " + k + ": " + v);
          }}},
        WSRET_INT("split.train_scans_per_prototype", split.train_scans_per_prototype),
        WSRET_INT("split.held_out_families", split.held_out_families),
        WSRET_INT("eval.k", retrieve_k),
    };
    return table;
}

#undef WSRET_DOUBLE
#undef WSRET_INT
#undef WSRET_U64
#undef WSRET_BOOL

}  // namespace

void ExperimentConfig::validate() const {
    const auto& fams = family_names();
    if (dataset.n_families < 1 || dataset.n_families > static_cast<int>(fams.size()))
        throw Error("config: dataset.families must be in [1, " + std::to_string(fams.size()) + "]");
    if (dataset.n_prototypes_per_family < 1 || dataset.n_scans_per_prototype < 1)
        throw Error("config: dataset counts must be >= 1");
    proxy.validate();
    train.validate();
    encoder.validate();
    if (encoder.input_res != kGridRes) throw Error("config: encoder input must match the grid resolution");
    if (features == FeatureKind::external && features_path.empty())
        throw Error("config: proxy.features_path required for external features");
    if (split.mode == SplitMode::seen) {
        if (split.train_scans_per_prototype < 1 || split.train_scans_per_prototype >= dataset.n_scans_per_prototype)
            throw Error("config: split.train_scans_per_prototype must leave train and test scans");
    } else if (split.held_out_families < 1 || split.held_out_families >= dataset.n_families) {
        throw Error("config: split.held_out_families must leave train and test families");
    }
    if (retrieve_k < 1) throw Error("config: eval.k must be >= 1");
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [key, f] : fields()) out += key + " = " + f.get(cfg) + "\n";
    return out;
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw Error("config: unknown key " + key);
    it->second.set(cfg, key, value);
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("config: line " + std::to_string(lineno) + " has no '='");
        set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_config(std::string(bytes.begin(), bytes.end()));
}

Digest config_hash(const ExperimentConfig& cfg) { return sha256(serialize_config(cfg)); }

Digest dataset_hash(const ExperimentConfig& cfg) {
    std::string text;
    for (const auto& [key, f] : fields())
        if (key == "seed" || key.rfind("dataset.", 0) == 0) text += key + " = " + f.get(cfg) + "\n";
    return sha256(text);
}

}  // namespace wsret
