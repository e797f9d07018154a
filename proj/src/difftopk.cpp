#include "wsret/difftopk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wsret/error.hpp"
#include "wsret/rng.hpp"

namespace wsret {

namespace {

constexpr int kChunk = 256;
constexpr std::uint64_t kBackwardStream = 0x6277642d6e6f6e63ULL;

void check_args(std::span<const double> scores, int k) {
    const int n = static_cast<int>(scores.size());
    if (k < 1 || k > n) throw Error("top-k: k must be in [1, N]");
    for (double s : scores)
        if (!std::isfinite(s)) throw Error("top-k: non-finite score");
}

void check_cfg(const PerturbConfig& cfg) {
    if (!(cfg.sigma > 0.0)) throw Error("top-k: sigma must be positive");
    if (cfg.n_samples < 1) throw Error("top-k: n_samples must be >= 1");
}

// Top-k selection into a reusable index buffer.
void select_into(std::span<const double> scores, int k, std::vector<int>& order) {
    order.resize(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    });
}

// Runs `visit(m, z, selection)` for every sample in order.
template <typename Visit>
void for_each_sample(std::span<const double> scores, int k, double sigma, int n_samples, std::uint64_t seed,
                     std::uint64_t nonce, Visit&& visit) {
    const std::size_t n = scores.size();
    std::vector<double> z(n), perturbed(n);
    std::vector<int> order;
    for (int m = 0; m < n_samples; ++m) {
        perturbation(seed, nonce, m, z);
        for (std::size_t j = 0; j < n; ++j) perturbed[j] = scores[j] + sigma * z[j];
        select_into(perturbed, k, order);
        visit(m, std::span<const double>(z), std::span<const int>(order.data(), static_cast<std::size_t>(k)));
    }
}

}  // namespace

std::vector<int> topk_indices(std::span<const double> scores, int k) {
    check_args(scores, k);
    std::vector<int> order;
    select_into(scores, k, order);
    order.resize(static_cast<std::size_t>(k));
    return order;
}

IndicatorStack hard_topk(std::span<const double> scores, int k) {
    const auto idx = topk_indices(scores, k);
    IndicatorStack y(static_cast<int>(scores.size()), k);
    for (int r = 0; r < k; ++r) y.at(idx[r], r) = 1.0;
    return y;
}

void perturbation(std::uint64_t seed, std::uint64_t nonce, int sample, std::span<double> z) {
    const auto key = key_from_seed(seed);
    for (std::size_t j = 0; j < z.size(); j += 4) {
        const auto normals = philox_normals({static_cast<std::uint32_t>(j / 4), static_cast<std::uint32_t>(sample),
                                             static_cast<std::uint32_t>(nonce), static_cast<std::uint32_t>(nonce >> 32)},
                                            key);
        for (std::size_t t = 0; t < 4 && j + t < z.size(); ++t) z[j + t] = normals[t];
    }
}

std::pair<IndicatorStack, PerturbState> perturbed_topk_forward(std::span<const double> scores, int k,
                                                               const PerturbConfig& cfg, std::uint64_t nonce) {
    check_args(scores, k);
    check_cfg(cfg);
    const int n = static_cast<int>(scores.size());
    PerturbState state{cfg.seed, nonce, n, k, cfg.sigma, cfg.n_samples, {}};
    if (cfg.store_samples) state.selected.reserve(static_cast<std::size_t>(cfg.n_samples) * k);

    std::vector<std::int64_t> counts(static_cast<std::size_t>(n) * k, 0);
    for_each_sample(scores, k, cfg.sigma, cfg.n_samples, cfg.seed, nonce,
                    [&](int, std::span<const double>, std::span<const int> sel) {
                        for (int r = 0; r < k; ++r) ++counts[static_cast<std::size_t>(sel[r]) * k + r];
                        if (cfg.store_samples) state.selected.insert(state.selected.end(), sel.begin(), sel.end());
                    });

    IndicatorStack y(n, k);
    const double inv = 1.0 / cfg.n_samples;
    for (std::size_t i = 0; i < counts.size(); ++i) y.values[i] = static_cast<double>(counts[i]) * inv;
    return {std::move(y), std::move(state)};
}

std::vector<double> perturbed_topk_vjp(std::span<const double> upstream, std::span<const double> scores, int k,
                                       const PerturbConfig& cfg, const PerturbState& state) {
    check_args(scores, k);
    check_cfg(cfg);
    const int n = static_cast<int>(scores.size());
    if (state.n != n || state.k != k || state.seed != cfg.seed || state.sigma != cfg.sigma ||
        state.n_samples != cfg.n_samples)
        throw Error("top-k backward: retained state does not match this call");
    if (upstream.size() != static_cast<std::size_t>(n) * k) throw Error("top-k backward: upstream shape mismatch");

    const bool reuse = cfg.share_samples_fwd_bwd && !state.selected.empty();
    if (reuse && state.selected.size() != static_cast<std::size_t>(cfg.n_samples) * k)
        throw Error("top-k backward: retained selections have the wrong size");
    const std::uint64_t nonce = cfg.share_samples_fwd_bwd ? state.nonce : mix_seed({state.nonce, kBackwardStream});

    // Per-chunk partial sums, combined pairwise so the result does not
    // depend on how samples are scheduled.
    const int n_chunks = (cfg.n_samples + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> chunk_sums(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n_chunks), 0.0));
    auto accumulate = [&](int m, std::span<const double> z, std::span<const int> sel) {
        double weight = 0.0;
        for (int r = 0; r < k; ++r) weight += upstream[static_cast<std::size_t>(sel[r]) * k + r];
        if (weight == 0.0) return;
        for (int j = 0; j < n; ++j) chunk_sums[j][m / kChunk] += weight * z[j];
    };

    if (reuse) {
        std::vector<double> z(static_cast<std::size_t>(n));
        for (int m = 0; m < cfg.n_samples; ++m) {
            perturbation(cfg.seed, nonce, m, z);
            accumulate(m, z, std::span<const int>(state.selected.data() + static_cast<std::size_t>(m) * k, static_cast<std::size_t>(k)));
        }
    } else {
        for_each_sample(scores, k, cfg.sigma, cfg.n_samples, cfg.seed, nonce, accumulate);
    }

    std::vector<double> grad(static_cast<std::size_t>(n));
    const double scale = 1.0 / (cfg.n_samples * cfg.sigma);
    for (int j = 0; j < n; ++j) grad[j] = pairwise_sum(chunk_sums[j]) * scale;
    return grad;
}

IndicatorStack soft_topk(std::span<const double> scores, int k, double sigma, int n_samples, std::uint64_t seed,
                         std::uint64_t nonce) {
    PerturbConfig cfg;
    cfg.sigma = sigma;
    cfg.n_samples = n_samples;
    cfg.seed = seed;
    return perturbed_topk_forward(scores, k, cfg, nonce).first;
}

std::vector<EstimatorVarianceRow> estimator_variance(std::span<const double> scores, int k, double sigma,
                                                     std::span<const int> sample_counts, int repeats,
                                                     std::uint64_t seed) {
    if (repeats < 2) throw Error("estimator variance needs at least two repeats");
    const int n = static_cast<int>(scores.size());
    std::vector<double> upstream(static_cast<std::size_t>(n) * k);
    Rng rng(seed, 1);
    for (auto& u : upstream) u = rng.normal();

    std::vector<EstimatorVarianceRow> rows;
    for (int ns : sample_counts) {
        PerturbConfig cfg;
        cfg.sigma = sigma;
        cfg.n_samples = ns;
        cfg.seed = seed;
        std::vector<std::vector<double>> fwd, bwd;
        for (int r = 0; r < repeats; ++r) {
            auto [y, st] = perturbed_topk_forward(scores, k, cfg, static_cast<std::uint64_t>(r));
            bwd.push_back(perturbed_topk_vjp(upstream, scores, k, cfg, st));
            fwd.push_back(std::move(y.values));
        }
        auto mean_variance = [&](const std::vector<std::vector<double>>& reps) {
            double total = 0.0;
            const std::size_t dim = reps[0].size();
            for (std::size_t e = 0; e < dim; ++e) {
                double mean = 0.0;
                for (const auto& rep : reps) mean += rep[e];
                mean /= repeats;
                double var = 0.0;
                for (const auto& rep : reps) var += (rep[e] - mean) * (rep[e] - mean);
                total += var / (repeats - 1);
            }
            return total / static_cast<double>(dim);
        };
        rows.push_back({ns, mean_variance(fwd), mean_variance(bwd)});
    }
    return rows;
}

}  // namespace wsret
