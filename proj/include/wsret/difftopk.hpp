#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace wsret {

/// N x K indicators; column k is a (soft) one-hot over the N candidates for
/// rank k (rank 0 = largest score).
struct IndicatorStack {
    int n = 0;
    int k = 0;
    std::vector<double> values;  // row-major [candidate][rank]

    IndicatorStack() = default;
    IndicatorStack(int n_, int k_) : n(n_), k(k_), values(static_cast<std::size_t>(n_) * k_, 0.0) {}
    double& at(int cand, int rank) { return values[static_cast<std::size_t>(cand) * k + rank]; }
    double at(int cand, int rank) const { return values[static_cast<std::size_t>(cand) * k + rank]; }
};

struct PerturbConfig {
    double sigma = 0.05;
    int n_samples = 1000;
    std::uint64_t seed = 0;
    bool share_samples_fwd_bwd = true;
    /// Keep per-sample selections so the backward pass skips re-sorting.
    bool store_samples = false;
};

inline constexpr double kSoftTopkSigma = 0.005;

/// What the backward pass needs to regenerate (or reuse) the forward noise.
struct PerturbState {
    std::uint64_t seed = 0;
    std::uint64_t nonce = 0;
    int n = 0;
    int k = 0;
    double sigma = 0.0;
    int n_samples = 0;
    std::vector<std::int32_t> selected;  // n_samples x k when stored
};

/// Candidate indices of the k largest scores in rank order; ties go to the
/// lower index.
std::vector<int> topk_indices(std::span<const double> scores, int k);

IndicatorStack hard_topk(std::span<const double> scores, int k);

/// Standard-normal perturbation Z_m for sample m, from (seed, nonce, m).
void perturbation(std::uint64_t seed, std::uint64_t nonce, int sample, std::span<double> z);

/// Monte-Carlo mean of hard_topk(scores + sigma * Z_m).
std::pair<IndicatorStack, PerturbState> perturbed_topk_forward(std::span<const double> scores, int k,
                                                               const PerturbConfig& cfg, std::uint64_t nonce);

/// Vector-Jacobian product of the smoothed operator with `upstream`
/// (N x K, same layout as IndicatorStack::values): the full contraction
/// (1/n) sum_m <upstream, Y_m> Z_m / sigma.
std::vector<double> perturbed_topk_vjp(std::span<const double> upstream, std::span<const double> scores, int k,
                                       const PerturbConfig& cfg, const PerturbState& state);

/// Forward-only smoothed top-k used to rank proxy targets.
IndicatorStack soft_topk(std::span<const double> scores, int k, double sigma = kSoftTopkSigma,
                         int n_samples = 1000, std::uint64_t seed = 0, std::uint64_t nonce = 0);

struct EstimatorVarianceRow {
    int n_samples = 0;
    double forward_variance = 0.0;  // mean over entries of the across-repeat variance
    double vjp_variance = 0.0;
};

/// Across-repeat variance of the forward and VJP estimators for each sample
/// count, using independent nonces per repeat.
std::vector<EstimatorVarianceRow> estimator_variance(std::span<const double> scores, int k, double sigma,
                                                     std::span<const int> sample_counts, int repeats,
                                                     std::uint64_t seed);

}  // namespace wsret
