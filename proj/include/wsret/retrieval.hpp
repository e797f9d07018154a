#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "wsret/checkpoint.hpp"
#include "wsret/trainloss.hpp"
#include "wsret/voxcore.hpp"

namespace wsret {

struct RetrievalResult {
    std::string query_id;
    std::vector<std::string> ranked_cad_ids;
    std::vector<double> scores;  // descending
};

/// S_ij = a_i . b_j for row-major embedding blocks of width `dim`.
Matrix similarity_matrix(std::span<const double> a, std::span<const double> b, int dim);

/// Top-k of a score row over `ids`; same ranking as hard_topk.
RetrievalResult rank_by_scores(const std::string& query_id, std::span<const double> scores,
                               std::span<const std::string> ids, int k);

/// Exact k nearest database entries by cosine similarity.
RetrievalResult retrieve_topk(const std::string& query_id, std::span<const double> query_emb, const EmbeddingSet& db,
                              int k);

struct GroundTruth {
    std::string query_id;
    std::string cad_id;                   // source prototype
    std::string family;
    std::vector<std::string> ranked_ids;  // annotated ranking for RQ (up to 3)
};

struct EvalMetrics {
    double top1 = 0.0;
    double top5 = 0.0;
    double cat = 0.0;
    double iou_top1 = 0.0;
    double iou_top5 = 0.0;
    double rq = 0.0;
    double mrr = 0.0;
    int queries = 0;
};

struct EvalReport {
    EvalMetrics overall;
    std::map<std::string, EvalMetrics> per_family;
};

/// Plain IoU of two occupancy grids (1 when both are empty).
double occupancy_iou(const Grid3& a, const Grid3& b);

/// Metrics over `results` (one per query). `cad_db` supplies family and
/// clean occupancy for every retrievable id. iou_top5 is the best IoU among
/// the first five results.
EvalReport evaluate(std::span<const RetrievalResult> results, std::span<const GroundTruth> ground_truth,
                    std::span<const VoxelObject> cad_db);

/// JSON object with top1, top5, cat, iou_top1, iou_top5, rq, mrr and
/// per_family (family -> the same seven keys).
std::string report_json(const EvalReport& report);

/// One row per query: query_id, gt_id, rank_1..rank_k, score_1..score_k.
std::string results_csv(std::span<const RetrievalResult> results, std::span<const GroundTruth> ground_truth);

}  // namespace wsret
