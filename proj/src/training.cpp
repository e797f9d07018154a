#include "wsret/training.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "wsret/error.hpp"
#include "wsret/rng.hpp"

namespace wsret {

LossKind parse_loss_kind(const std::string& s) {
    if (s == "topk") return LossKind::topk;
    if (s == "triplet") return LossKind::triplet;
    if (s == "mse") return LossKind::mse;
    throw Error("unknown loss: " + s);
}

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::topk: return "topk";
        case LossKind::triplet: return "triplet";
        case LossKind::mse: return "mse";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    if (epochs < 1) throw Error("epochs must be >= 1");
    if (k < 1) throw Error("k must be >= 1");
    if (!(topk.sigma > 0.0) || !(soft_sigma > 0.0)) throw Error("sigma must be > 0");
    if (topk.n_samples < 1) throw Error("n_samples must be >= 1");
    if (!(adam.lr > 0.0)) throw Error("lr must be > 0");
    if (calibration_objects < 1) throw Error("calibration_objects must be >= 1");
}

std::string to_ndjson(const TrainLogRecord& r) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j["wall_ms"] = r.wall_ms;
    j["seed"] = r.seed;
    return j.dump();
}

int steps_per_epoch(std::size_t n_train, int batch_size) {
    if (batch_size < 1) throw Error("batch_size must be >= 1");
    return std::max(1, static_cast<int>((n_train + static_cast<std::size_t>(batch_size) - 1) / batch_size));
}

std::vector<std::vector<double>> embed_all(std::span<const VoxelObject> objects, const EncoderParams& params) {
    for (const auto& o : objects)
        if (o.occupancy.dims() != std::array<int, 3>{params.config.input_res, params.config.input_res,
                                                   params.config.input_res})
            throw Error("resolution mismatch");
    std::vector<std::vector<double>> out(objects.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(objects.size()); ++i)
        out[static_cast<std::size_t>(i)] = encode(objects[static_cast<std::size_t>(i)], params);
    return out;
}

EmbeddingSet embed_set(std::span<const VoxelObject> objects, const EncoderParams& params) {
    EmbeddingSet set;
    set.dim = params.config.embed_dim;
    const auto rows = embed_all(objects, params);
    for (std::size_t i = 0; i < objects.size(); ++i) {
        set.ids.push_back(objects[i].id);
        set.vectors.insert(set.vectors.end(), rows[i].begin(), rows[i].end());
    }
    return set;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Backward through every object, summing per-object gradients in object
// order so the result does not depend on the thread count.
EncoderGrads backward_all(const std::vector<EncoderCache>& caches, const std::vector<std::vector<double>>& upstream,
                          const EncoderParams& params) {
    EncoderGrads total = zero_grads(params);
    const std::size_t n = caches.size();
    const std::size_t chunk = 8;
    std::vector<EncoderGrads> local(std::min(chunk, n));
    for (std::size_t base = 0; base < n; base += chunk) {
        const std::size_t m = std::min(chunk, n - base);
        for (std::size_t i = 0; i < m; ++i) local[i] = zero_grads(params);
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
            const auto o = base + static_cast<std::size_t>(i);
            encode_backward(caches[o], params, upstream[o], local[static_cast<std::size_t>(i)]);
        }
        for (std::size_t i = 0; i < m; ++i) add_grads(total, local[i]);
    }
    return total;
}

}  // namespace

StepOutcome batch_gradients(const Batch& batch, std::span<const VoxelObject> scans, std::span<const VoxelObject> cads,
                            const EncoderParams& params, const TrainConfig& cfg, std::uint64_t nonce) {
    const int n_s = static_cast<int>(batch.scans.size());
    const int n_c = static_cast<int>(batch.cads.size());
    const int dim = params.config.embed_dim;

    std::vector<const VoxelObject*> objs;
    for (int s : batch.scans) objs.push_back(&scans[static_cast<std::size_t>(s)]);
    for (int c : batch.cads) objs.push_back(&cads[static_cast<std::size_t>(c)]);
    std::vector<EncoderCache> caches(objs.size());
    std::vector<std::vector<double>> emb(objs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(objs.size()); ++i) {
        const auto u = static_cast<std::size_t>(i);
        emb[u] = encode(*objs[u], params, &caches[u]);
    }
    auto scan_emb = [&](int i) { return std::span<const double>(emb[static_cast<std::size_t>(i)]); };
    auto cad_emb = [&](int j) { return std::span<const double>(emb[static_cast<std::size_t>(n_s + j)]); };

    std::vector<std::vector<double>> up(objs.size(), std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    StepOutcome out;

    if (cfg.loss == LossKind::triplet) {
        double total = 0.0;
        for (int i = 0; i < n_s; ++i) {
            const int pos = batch.positive[static_cast<std::size_t>(i)];
            std::vector<std::span<const double>> negs;
            std::vector<int> neg_cols;
            for (int j = 0; j < n_c; ++j)
                if (j != pos) {
                    negs.push_back(cad_emb(j));
                    neg_cols.push_back(j);
                }
            const auto r = triplet_loss(scan_emb(i), cad_emb(pos), negs, cfg.triplet_margin);
            total += r.loss;
            if (r.hardest < 0 || r.loss == 0.0) continue;
            auto& ua = up[static_cast<std::size_t>(i)];
            auto& up_pos = up[static_cast<std::size_t>(n_s + pos)];
            auto& un = up[static_cast<std::size_t>(n_s + neg_cols[static_cast<std::size_t>(r.hardest)])];
            for (int d = 0; d < dim; ++d) {
                const auto u = static_cast<std::size_t>(d);
                ua[u] += r.d_anchor[u] / n_s;
                up_pos[u] += r.d_positive[u] / n_s;
                un[u] += r.d_negative[u] / n_s;
            }
        }
        out.loss = total / n_s;
    } else {
        Matrix S(n_s, n_c);
        for (int i = 0; i < n_s; ++i)
            for (int j = 0; j < n_c; ++j) S.at(i, j) = dot(scan_emb(i), cad_emb(j));
        LossAndGrad lg;
        if (cfg.loss == LossKind::mse) {
            lg = mse_embedding_loss(S, batch.proxy_rows);
        } else {
            RetrievalLossOptions opt;
            opt.ordered = cfg.ordered;
            opt.soft_sigma = cfg.soft_sigma;
            opt.nonce = nonce;
            lg = retrieval_loss(S, batch.proxy_rows, std::min(cfg.k, n_c), cfg.topk, opt);
        }
        out.loss = lg.loss;
        for (int i = 0; i < n_s; ++i)
            for (int j = 0; j < n_c; ++j) {
                const double g = lg.grad.at(i, j);
                if (g == 0.0) continue;
                auto& ui = up[static_cast<std::size_t>(i)];
                auto& uj = up[static_cast<std::size_t>(n_s + j)];
                const auto fi = scan_emb(i);
                const auto fj = cad_emb(j);
                for (int d = 0; d < dim; ++d) {
                    const auto u = static_cast<std::size_t>(d);
                    ui[u] += g * fj[u];
                    uj[u] += g * fi[u];
                }
            }
    }
    if (!std::isfinite(out.loss)) return out;
    out.grads = backward_all(caches, up, params);
    return out;
}

TrainResult train_encoder(std::span<const VoxelObject> scans, std::span<const VoxelObject> cads,
                          const ProxyMatrix& proxy, std::span<const int> train_scans, std::span<const int> train_cads,
                          const EncoderConfig& enc_cfg, const TrainConfig& cfg,
                          const std::function<void(const TrainLogRecord&)>& on_step) {
    cfg.validate();
    enc_cfg.validate();
    if (train_scans.empty() || train_cads.empty()) throw Error("empty training pool");
    if (static_cast<std::size_t>(cfg.batch_size) > train_scans.size()) throw Error("batch size exceeds dataset size");
    if (proxy.n_scans != static_cast<int>(scans.size()) || proxy.n_cads != static_cast<int>(cads.size()))
        throw Error("proxy matrix does not cover the dataset");

    EncoderParams params = init_encoder(enc_cfg);
    {
        std::vector<VoxelObject> calib;
        for (int s : train_scans) {
            if (static_cast<int>(calib.size()) >= cfg.calibration_objects) break;
            calib.push_back(scans[static_cast<std::size_t>(s)]);
        }
        for (int c : train_cads) {
            if (static_cast<int>(calib.size()) >= 2 * cfg.calibration_objects) break;
            calib.push_back(cads[static_cast<std::size_t>(c)]);
        }
        calibrate_normalization(params, calib);
    }

    TrainResult result;
    result.best_params = params;
    Rng rng(cfg.seed, 0x7472616eULL);
    const int steps = steps_per_epoch(train_scans.size(), cfg.batch_size);
    double best = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_total = 0.0;
        for (int s = 0; s < steps; ++s) {
            const auto t0 = std::chrono::steady_clock::now();
            const Batch batch = assemble_batch(train_scans, train_cads, proxy, cfg.batch_size, rng);
            const std::uint64_t nonce = mix_seed({cfg.seed, params.step, 0x6e6f6e6365ULL});
            StepOutcome st = batch_gradients(batch, scans, cads, params, cfg, nonce);
            if (!std::isfinite(st.loss)) throw Error("non-finite loss at step " + std::to_string(params.step + 1));
            adam_step(params, st.grads, cfg.adam);
            epoch_total += st.loss;
            TrainLogRecord rec;
            rec.step = params.step;
            rec.epoch = epoch;
            rec.loss = st.loss;
            rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            rec.seed = cfg.seed;
            result.log.push_back(rec);
            if (on_step) on_step(rec);
        }
        const double mean = epoch_total / steps;
        result.epoch_loss.push_back(mean);
        if (mean < best) {
            best = mean;
            result.best_epoch = epoch;
            result.best_params = params;
        }
    }
    result.final_params = std::move(params);
    return result;
}

}  // namespace wsret
