#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wsret/difftopk.hpp"
#include "wsret/proxysim.hpp"
#include "wsret/rng.hpp"

namespace wsret {

/// Dense row-major matrix of doubles.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, fill) {}
    double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }
    std::span<const double> row(int i) const {
        return std::span<const double>(v).subspan(static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols));
    }
};

/// A training batch. `scans` and `cads` index the proxy matrix rows and
/// columns; `positive[i]` is the column (within `cads`) of scan i's top-1
/// proxy match.
struct Batch {
    std::vector<int> scans;
    std::vector<int> cads;
    std::vector<int> positive;
    Matrix proxy_rows;
};

/// Column of the largest proxy value in `row` restricted to `cad_pool`
/// (lowest pool position wins ties).
int proxy_argmax(const ProxyMatrix& proxy, int scan, std::span<const int> cad_pool);

/// Uniform sample of `batch_size` scans from `scan_pool` without
/// replacement, plus the deduplicated (ascending) set of their top-1 CADs.
Batch assemble_batch(std::span<const int> scan_pool, std::span<const int> cad_pool, const ProxyMatrix& proxy,
                     int batch_size, Rng& rng);

struct RetrievalLossOptions {
    /// Weight each rank by the soft top-k of the proxy row (ordered loss);
    /// false gives the unordered variant with the raw proxy row.
    bool ordered = true;
    /// Use hard top-k everywhere (evaluation / duality checks; zero gradient).
    bool hard = false;
    double soft_sigma = kSoftTopkSigma;
    std::uint64_t nonce = 0;
};

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad;  // dL/dS
};

/// -1/(N K) sum_i sum_j sum_k Y_ijk Phat_ijk with Y_i = DiffTopK(S_i) and
/// Phat = SoftTopK(P) * P (row-wise); dL/dS through the perturbed VJP,
/// Phat held constant.
LossAndGrad retrieval_loss(const Matrix& similarity, const Matrix& proxy, int k, const PerturbConfig& cfg,
                           const RetrievalLossOptions& opt = {});

struct TripletResult {
    double loss = 0.0;
    int hardest = -1;  // index into negatives, -1 when none
    std::vector<double> d_anchor;
    std::vector<double> d_positive;
    std::vector<double> d_negative;  // gradient for negatives[hardest]
};

inline constexpr double kTripletMargin = 0.2;

/// max(0, |a-p|^2 - |a-n|^2 + margin) against the closest negative.
TripletResult triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                           const std::vector<std::span<const double>>& negatives, double margin = kTripletMargin);

/// Mean squared error over all entries; gradient 2(S-P)/count.
LossAndGrad mse_embedding_loss(const Matrix& similarity, const Matrix& proxy);

}  // namespace wsret
