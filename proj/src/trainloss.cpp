#include "wsret/trainloss.hpp"

#include <algorithm>
#include <cmath>

#include "wsret/error.hpp"

namespace wsret {

int proxy_argmax(const ProxyMatrix& proxy, int scan, std::span<const int> cad_pool) {
    if (cad_pool.empty()) throw Error("empty CAD pool");
    int best = cad_pool[0];
    for (int c : cad_pool)
        if (proxy.at(scan, c) > proxy.at(scan, best)) best = c;
    return best;
}

Batch assemble_batch(std::span<const int> scan_pool, std::span<const int> cad_pool, const ProxyMatrix& proxy,
                     int batch_size, Rng& rng) {
    if (batch_size < 1 || static_cast<std::size_t>(batch_size) > scan_pool.size())
        throw Error("batch size exceeds dataset size");
    for (int s : scan_pool)
        if (s < 0 || s >= proxy.n_scans) throw Error("proxy matrix does not cover scan index");
    for (int c : cad_pool)
        if (c < 0 || c >= proxy.n_cads) throw Error("proxy matrix does not cover cad index");

    std::vector<int> pool(scan_pool.begin(), scan_pool.end());
    Batch b;
    for (int i = 0; i < batch_size; ++i) {
        const auto j = static_cast<std::size_t>(i) + rng.below(pool.size() - static_cast<std::size_t>(i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
        b.scans.push_back(pool[static_cast<std::size_t>(i)]);
    }

    std::vector<int> top1;
    for (int s : b.scans) top1.push_back(proxy_argmax(proxy, s, cad_pool));
    b.cads = top1;
    std::sort(b.cads.begin(), b.cads.end());
    b.cads.erase(std::unique(b.cads.begin(), b.cads.end()), b.cads.end());
    for (int c : top1)
        b.positive.push_back(static_cast<int>(std::lower_bound(b.cads.begin(), b.cads.end(), c) - b.cads.begin()));

    b.proxy_rows = Matrix(batch_size, static_cast<int>(b.cads.size()));
    for (int i = 0; i < batch_size; ++i)
        for (std::size_t j = 0; j < b.cads.size(); ++j)
            b.proxy_rows.at(i, static_cast<int>(j)) = proxy.at(b.scans[static_cast<std::size_t>(i)], b.cads[j]);
    return b;
}

LossAndGrad retrieval_loss(const Matrix& S, const Matrix& P, int k, const PerturbConfig& cfg,
                           const RetrievalLossOptions& opt) {
    if (S.rows != P.rows || S.cols != P.cols) throw Error("retrieval loss: shape mismatch");
    if (S.rows < 1 || S.cols < 1) throw Error("retrieval loss: empty batch");
    if (k < 1 || k > S.cols) throw Error("top-k: k must be in [1, N]");
    const int n_rows = S.rows, n_cols = S.cols;
    const double scale = 1.0 / (static_cast<double>(n_rows) * k);

    LossAndGrad out;
    out.grad = Matrix(n_rows, n_cols);
    double total = 0.0;
    std::vector<double> phat(static_cast<std::size_t>(n_cols) * k);
    std::vector<double> upstream(phat.size());
    for (int i = 0; i < n_rows; ++i) {
        const auto p_row = P.row(i);
        const std::uint64_t row_nonce = mix_seed({opt.nonce, static_cast<std::uint64_t>(i), 0});
        if (opt.ordered) {
            const IndicatorStack soft = opt.hard ? hard_topk(p_row, k)
                                                 : soft_topk(p_row, k, opt.soft_sigma, cfg.n_samples, cfg.seed,
                                                             mix_seed({opt.nonce, static_cast<std::uint64_t>(i), 1}));
            for (int j = 0; j < n_cols; ++j)
                for (int r = 0; r < k; ++r) phat[static_cast<std::size_t>(j) * k + r] = soft.at(j, r) * p_row[j];
        } else {
            for (int j = 0; j < n_cols; ++j)
                for (int r = 0; r < k; ++r) phat[static_cast<std::size_t>(j) * k + r] = p_row[j];
        }

        const auto s_row = S.row(i);
        IndicatorStack y;
        PerturbState state;
        if (opt.hard) {
            y = hard_topk(s_row, k);
        } else {
            auto fwd = perturbed_topk_forward(s_row, k, cfg, row_nonce);
            y = std::move(fwd.first);
            state = std::move(fwd.second);
        }
        double row_sum = 0.0;
        for (std::size_t e = 0; e < phat.size(); ++e) row_sum += y.values[e] * phat[e];
        total += row_sum;

        if (!opt.hard) {
            for (std::size_t e = 0; e < phat.size(); ++e) upstream[e] = -phat[e] * scale;
            const auto g = perturbed_topk_vjp(upstream, s_row, k, cfg, state);
            for (int j = 0; j < n_cols; ++j) out.grad.at(i, j) = g[static_cast<std::size_t>(j)];
        }
    }
    out.loss = -total / (static_cast<double>(n_rows) * k);
    return out;
}

TripletResult triplet_loss(std::span<const double> a, std::span<const double> p,
                           const std::vector<std::span<const double>>& negatives, double margin) {
    if (a.size() != p.size()) throw Error("triplet loss: dimension mismatch");
    auto sqdist = [&](std::span<const double> x, std::span<const double> y) {
        if (x.size() != y.size()) throw Error("triplet loss: dimension mismatch");
        double d = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - y[i]) * (x[i] - y[i]);
        return d;
    };
    TripletResult r;
    r.d_anchor.assign(a.size(), 0.0);
    r.d_positive.assign(a.size(), 0.0);
    r.d_negative.assign(a.size(), 0.0);
    if (negatives.empty()) return r;

    double best = 0.0;
    for (std::size_t n = 0; n < negatives.size(); ++n) {
        const double d = sqdist(a, negatives[n]);
        if (r.hardest < 0 || d < best) {
            best = d;
            r.hardest = static_cast<int>(n);
        }
    }
    const double value = sqdist(a, p) - best + margin;
    if (value <= 0.0) return r;
    r.loss = value;
    const auto& n = negatives[static_cast<std::size_t>(r.hardest)];
    for (std::size_t i = 0; i < a.size(); ++i) {
        r.d_anchor[i] = 2.0 * (n[i] - p[i]);
        r.d_positive[i] = -2.0 * (a[i] - p[i]);
        r.d_negative[i] = 2.0 * (a[i] - n[i]);
    }
    return r;
}

LossAndGrad mse_embedding_loss(const Matrix& S, const Matrix& P) {
    if (S.rows != P.rows || S.cols != P.cols) throw Error("mse loss: shape mismatch");
    if (S.v.empty()) throw Error("mse loss: empty matrices");
    LossAndGrad out;
    out.grad = Matrix(S.rows, S.cols);
    const double count = static_cast<double>(S.v.size());
    double total = 0.0;
    for (std::size_t e = 0; e < S.v.size(); ++e) {
        const double d = S.v[e] - P.v[e];
        total += d * d;
        out.grad.v[e] = 2.0 * d / count;
    }
    out.loss = total / count;
    return out;
}

}  // namespace wsret
