#include "wsret/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "wsret/difftopk.hpp"
#include "wsret/error.hpp"

namespace wsret {

Matrix similarity_matrix(std::span<const double> a, std::span<const double> b, int dim) {
    if (dim < 1 || a.size() % static_cast<std::size_t>(dim) != 0 || b.size() % static_cast<std::size_t>(dim) != 0)
        throw Error("similarity: dimension mismatch");
    const int n = static_cast<int>(a.size() / static_cast<std::size_t>(dim));
    const int m = static_cast<int>(b.size() / static_cast<std::size_t>(dim));
    Matrix s(n, m);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double d = 0.0;
            for (int e = 0; e < dim; ++e)
                d += a[static_cast<std::size_t>(i) * dim + e] * b[static_cast<std::size_t>(j) * dim + e];
            s.at(i, j) = d;
        }
    return s;
}

RetrievalResult rank_by_scores(const std::string& query_id, std::span<const double> scores,
                               std::span<const std::string> ids, int k) {
    if (scores.size() != ids.size()) throw Error("retrieve: id/score count mismatch");
    if (k < 1 || static_cast<std::size_t>(k) > ids.size()) throw Error("retrieve: k exceeds database size");
    RetrievalResult r;
    r.query_id = query_id;
    for (int idx : topk_indices(scores, k)) {
        r.ranked_cad_ids.push_back(ids[static_cast<std::size_t>(idx)]);
        r.scores.push_back(scores[static_cast<std::size_t>(idx)]);
    }
    return r;
}

RetrievalResult retrieve_topk(const std::string& query_id, std::span<const double> query_emb, const EmbeddingSet& db,
                              int k) {
    if (query_emb.size() != static_cast<std::size_t>(db.dim)) throw Error("similarity: dimension mismatch");
    const Matrix s = similarity_matrix(query_emb, db.vectors, db.dim);
    return rank_by_scores(query_id, s.row(0), db.ids, k);
}

double occupancy_iou(const Grid3& a, const Grid3& b) {
    if (a.dims() != b.dims()) throw Error("iou: shape mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        const bool x = a.values()[i] != 0, y = b.values()[i] != 0;
        inter += (x && y) ? 1 : 0;
        uni += (x || y) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

struct Accum {
    double top1 = 0, top5 = 0, cat = 0, iou1 = 0, iou5 = 0, mrr = 0;
    std::size_t rq_hits = 0, rq_total = 0;
    int n = 0;

    EvalMetrics finish() const {
        EvalMetrics m;
        m.queries = n;
        if (n == 0) return m;
        m.top1 = top1 / n;
        m.top5 = top5 / n;
        m.cat = cat / n;
        m.iou_top1 = iou1 / n;
        m.iou_top5 = iou5 / n;
        m.mrr = mrr / n;
        m.rq = rq_total == 0 ? 0.0 : static_cast<double>(rq_hits) / static_cast<double>(rq_total);
        return m;
    }
};

nlohmann::ordered_json metrics_json(const EvalMetrics& m) {
    nlohmann::ordered_json j;
    j["top1"] = m.top1;
    j["top5"] = m.top5;
    j["cat"] = m.cat;
    j["iou_top1"] = m.iou_top1;
    j["iou_top5"] = m.iou_top5;
    j["rq"] = m.rq;
    j["mrr"] = m.mrr;
    return j;
}

}  // namespace

EvalReport evaluate(std::span<const RetrievalResult> results, std::span<const GroundTruth> ground_truth,
                    std::span<const VoxelObject> cad_db) {
    std::unordered_map<std::string, const GroundTruth*> gt;
    for (const auto& g : ground_truth) gt[g.query_id] = &g;
    std::unordered_map<std::string, const VoxelObject*> cads;
    for (const auto& c : cad_db) cads[c.id] = &c;
    auto cad = [&](const std::string& id) -> const VoxelObject& {
        const auto it = cads.find(id);
        if (it == cads.end()) throw Error("unknown CAD id: " + id);
        return *it->second;
    };

    Accum all;
    std::map<std::string, Accum> fam;
    for (const auto& r : results) {
        const auto it = gt.find(r.query_id);
        if (it == gt.end()) throw Error("missing ground truth for query " + r.query_id);
        const GroundTruth& g = *it->second;
        if (r.ranked_cad_ids.empty()) throw Error("empty retrieval for query " + r.query_id);
        const Grid3& truth = cad(g.cad_id).occupancy;

        double top1 = 0, top5 = 0, rr = 0, iou5 = 0;
        for (std::size_t i = 0; i < r.ranked_cad_ids.size(); ++i) {
            if (r.ranked_cad_ids[i] == g.cad_id) {
                if (i == 0) top1 = 1;
                if (i < 5) top5 = 1;
                if (rr == 0) rr = 1.0 / static_cast<double>(i + 1);
            }
            if (i < 5) iou5 = std::max(iou5, occupancy_iou(cad(r.ranked_cad_ids[i]).occupancy, truth));
        }
        const double iou1 = occupancy_iou(cad(r.ranked_cad_ids[0]).occupancy, truth);
        const double cat = cad(r.ranked_cad_ids[0]).family == g.family ? 1 : 0;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < g.ranked_ids.size(); ++i)
            if (i < r.ranked_cad_ids.size() && r.ranked_cad_ids[i] == g.ranked_ids[i]) ++hits;

        for (Accum* a : {&all, &fam[g.family]}) {
            a->top1 += top1;
            a->top5 += top5;
            a->cat += cat;
            a->iou1 += iou1;
            a->iou5 += iou5;
            a->mrr += rr;
            a->rq_hits += hits;
            a->rq_total += g.ranked_ids.size();
            a->n += 1;
        }
    }
    EvalReport rep;
    rep.overall = all.finish();
    for (const auto& [name, a] : fam) rep.per_family[name] = a.finish();
    return rep;
}

std::string report_json(const EvalReport& report) {
    nlohmann::ordered_json j = metrics_json(report.overall);
    nlohmann::ordered_json pf = nlohmann::ordered_json::object();
    for (const auto& [name, m] : report.per_family) pf[name] = metrics_json(m);
    j["per_family"] = pf;
    return j.dump(2) + "\n";
}

std::string results_csv(std::span<const RetrievalResult> results, std::span<const GroundTruth> ground_truth) {
    std::unordered_map<std::string, const GroundTruth*> gt;
    for (const auto& g : ground_truth) gt[g.query_id] = &g;
    std::size_t k = 0;
    for (const auto& r : results) k = std::max(k, r.ranked_cad_ids.size());
    std::ostringstream os;
    os << "query_id,gt_id";
    for (std::size_t i = 1; i <= k; ++i) os << ",rank_" << i;
    for (std::size_t i = 1; i <= k; ++i) os << ",score_" << i;
    os << "\n";
    char buf[32];
    for (const auto& r : results) {
        const auto it = gt.find(r.query_id);
        os << r.query_id << "," << (it == gt.end() ? "" : it->second->cad_id);
        for (std::size_t i = 0; i < k; ++i) os << "," << (i < r.ranked_cad_ids.size() ? r.ranked_cad_ids[i] : "");
        for (std::size_t i = 0; i < k; ++i) {
            os << ",";
            if (i < r.scores.size()) {
                std::snprintf(buf, sizeof buf, "%.9g", r.scores[i]);
                os << buf;
            }
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace wsret
