#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wsret/difftopk.hpp"
#include "wsret/error.hpp"
#include "wsret/rng.hpp"

using namespace wsret;

namespace {

std::vector<double> random_scores(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> s(static_cast<std::size_t>(n));
    for (auto& v : s) v = rng.uniform(-1, 1);
    return s;
}

void check_stack(const IndicatorStack& y, double tol) {
    for (double v : y.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    for (int r = 0; r < y.k; ++r) {
        double col = 0;
        for (int j = 0; j < y.n; ++j) col += y.at(j, r);
        CHECK(std::abs(col - 1.0) <= tol);
    }
    for (int j = 0; j < y.n; ++j) {
        double row = 0;
        for (int r = 0; r < y.k; ++r) row += y.at(j, r);
        CHECK(row <= 1.0 + tol);
    }
}

}  // namespace

TEST_CASE("hard top-k examples") {
    const std::vector<double> s{0.9, 0.1, 0.5};
    const auto y = hard_topk(s, 2);
    CHECK(y.at(0, 0) == 1.0);
    CHECK(y.at(2, 1) == 1.0);
    CHECK(std::accumulate(y.values.begin(), y.values.end(), 0.0) == 2.0);
    const auto eq = hard_topk(std::vector<double>{0.3, 0.3, 0.3}, 2);
    CHECK(eq.at(0, 0) == 1.0);
    CHECK(eq.at(1, 1) == 1.0);
    CHECK_THROWS_AS(hard_topk(s, 4), Error);
    CHECK_THROWS_AS(hard_topk(s, 0), Error);
    CHECK_THROWS_AS(hard_topk(std::vector<double>{0.1, NAN}, 1), Error);
}

TEST_CASE("hard top-k matches a full-sort oracle and is shift invariant") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = random_scores(50, seed);
        std::vector<int> order(50);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return s[a] > s[b]; });
        const auto idx = topk_indices(s, 5);
        CHECK(idx == std::vector<int>(order.begin(), order.begin() + 5));
        const auto y = hard_topk(s, 5);
        for (int r = 0; r < 5; ++r) CHECK(y.at(order[static_cast<std::size_t>(r)], r) == 1.0);
        auto shifted = s;
        for (auto& v : shifted) v += 0.375;
        CHECK(hard_topk(shifted, 5).values == y.values);
    }
}

TEST_CASE("perturbed forward large-margin and symmetric cases") {
    PerturbConfig cfg;
    cfg.seed = 3;
    const auto [y, st] = perturbed_topk_forward(std::vector<double>{10, 0, -10}, 1, cfg, 1);
    CHECK(std::abs(y.at(0, 0) - 1.0) <= 1e-3);
    CHECK(std::abs(y.at(1, 0)) <= 1e-3);
    CHECK(std::abs(y.at(2, 0)) <= 1e-3);
    check_stack(y, 1e-5);

    cfg.n_samples = 1000000;
    const auto sym = perturbed_topk_forward(std::vector<double>{0.5, 0.5}, 1, cfg, 2).first;
    const double se = std::sqrt(0.25 / cfg.n_samples);
    CHECK(std::abs(sym.at(0, 0) - 0.5) <= 3 * se);
}

TEST_CASE("perturbed forward is deterministic per (seed, nonce)") {
    PerturbConfig cfg;
    cfg.seed = 9;
    const auto s = random_scores(12, 4);
    const auto a = perturbed_topk_forward(s, 3, cfg, 5).first;
    CHECK(a.values == perturbed_topk_forward(s, 3, cfg, 5).first.values);
    CHECK(a.values != perturbed_topk_forward(s, 3, cfg, 6).first.values);
}

TEST_CASE("operators satisfy the constraint set on random inputs") {
    Rng rng(77);
    PerturbConfig cfg;
    cfg.n_samples = 200;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(40));
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(n, 8))));
        const auto s = random_scores(n, static_cast<std::uint64_t>(trial) + 1000);
        check_stack(hard_topk(s, k), 0.0);
        check_stack(perturbed_topk_forward(s, k, cfg, static_cast<std::uint64_t>(trial)).first, 1e-5);
        check_stack(soft_topk(s, k, kSoftTopkSigma, 200, 1, static_cast<std::uint64_t>(trial)), 1e-5);
    }
}

TEST_CASE("soft top-k examples") {
    const auto y = soft_topk(std::vector<double>{0.2, 0.8}, 1);
    CHECK(std::abs(y.at(0, 0)) <= 1e-3);
    CHECK(std::abs(y.at(1, 0) - 1.0) <= 1e-3);
    const auto s = random_scores(6, 8);
    const auto all = soft_topk(s, 6, 0.05, 500, 2, 3);
    for (int j = 0; j < 6; ++j) {
        double row = 0;
        for (int r = 0; r < 6; ++r) row += all.at(j, r);
        CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    }
    const std::vector<double> sep{0.9, 0.5, 0.1, -0.3};
    const auto near_hard = soft_topk(sep, 2);
    const auto hard = hard_topk(sep, 2);
    for (std::size_t e = 0; e < hard.values.size(); ++e) CHECK(std::abs(near_hard.values[e] - hard.values[e]) <= 1e-3);
}

TEST_CASE("vjp: zero upstream, mismatched state, stored samples") {
    PerturbConfig cfg;
    cfg.seed = 1;
    cfg.n_samples = 500;
    const auto s = random_scores(7, 2);
    auto [y, st] = perturbed_topk_forward(s, 2, cfg, 4);
    const std::vector<double> zero(14, 0.0);
    for (double g : perturbed_topk_vjp(zero, s, 2, cfg, st)) CHECK(g == 0.0);

    std::vector<double> up(14);
    Rng rng(3);
    for (auto& u : up) u = rng.normal();
    const auto g = perturbed_topk_vjp(up, s, 2, cfg, st);
    PerturbConfig stored = cfg;
    stored.store_samples = true;
    auto [y2, st2] = perturbed_topk_forward(s, 2, stored, 4);
    CHECK(y2.values == y.values);
    CHECK(perturbed_topk_vjp(up, s, 2, stored, st2) == g);

    CHECK_THROWS_AS(perturbed_topk_vjp(up, s, 3, cfg, st), Error);
    PerturbConfig other = cfg;
    other.sigma = 0.1;
    CHECK_THROWS_AS(perturbed_topk_vjp(up, s, 2, other, st), Error);
    CHECK_THROWS_AS(perturbed_topk_vjp(std::vector<double>(3), s, 2, cfg, st), Error);
}

TEST_CASE("vjp matches finite differences of the shared-seed smoothed map (N=3, k=1)") {
    PerturbConfig cfg;
    cfg.seed = 5;
    cfg.n_samples = 100000;
    const std::vector<double> s{0.31, 0.27, 0.22};
    const std::uint64_t nonce = 17;
    const auto [y, st] = perturbed_topk_forward(s, 1, cfg, nonce);
    const int sel = static_cast<int>(std::max_element(y.values.begin(), y.values.end()) - y.values.begin());
    std::vector<double> up(3, 0.0);
    up[static_cast<std::size_t>(sel)] = 1.0;
    const auto g = perturbed_topk_vjp(up, s, 1, cfg, st);
    const double h = 0.01;
    for (int j = 0; j < 3; ++j) {
        auto plus = s, minus = s;
        plus[static_cast<std::size_t>(j)] += h;
        minus[static_cast<std::size_t>(j)] -= h;
        const double fd = (perturbed_topk_forward(plus, 1, cfg, nonce).first.at(sel, 0) -
                           perturbed_topk_forward(minus, 1, cfg, nonce).first.at(sel, 0)) /
                          (2 * h);
        CAPTURE(j);
        CHECK(std::abs(g[static_cast<std::size_t>(j)] - fd) <= 0.1 * std::abs(fd));
    }
}

TEST_CASE("vjp is unchanged in expectation by a constant shift") {
    PerturbConfig cfg;
    cfg.seed = 6;
    cfg.n_samples = 20000;
    const auto s = random_scores(5, 10);
    auto shifted = s;
    for (auto& v : shifted) v += 0.3;
    std::vector<double> up(10);
    Rng rng(4);
    for (auto& u : up) u = rng.uniform(-1, 1);
    const auto a = perturbed_topk_forward(s, 2, cfg, 3);
    const auto b = perturbed_topk_forward(shifted, 2, cfg, 3);
    const auto ga = perturbed_topk_vjp(up, s, 2, cfg, a.second);
    const auto gb = perturbed_topk_vjp(up, shifted, 2, cfg, b.second);
    // paired seeds: selections agree except for rounding-level near ties
    for (int j = 0; j < 5; ++j) CHECK(std::abs(ga[static_cast<std::size_t>(j)] - gb[static_cast<std::size_t>(j)]) <= 0.01);
}

TEST_CASE("independent backward samples stay close to the shared estimate") {
    PerturbConfig cfg;
    cfg.seed = 8;
    cfg.n_samples = 50000;
    const std::vector<double> s{0.30, 0.28, 0.25, 0.1};
    std::vector<double> up(4, 0.0);
    up[0] = 1.0;
    const auto [y, st] = perturbed_topk_forward(s, 1, cfg, 2);
    const auto shared = perturbed_topk_vjp(up, s, 1, cfg, st);
    PerturbConfig indep = cfg;
    indep.share_samples_fwd_bwd = false;
    const auto [y2, st2] = perturbed_topk_forward(s, 1, indep, 2);
    const auto fresh = perturbed_topk_vjp(up, s, 1, indep, st2);
    CHECK(fresh != shared);
    double norm = 0, diff = 0;
    for (int j = 0; j < 4; ++j) {
        norm += shared[static_cast<std::size_t>(j)] * shared[static_cast<std::size_t>(j)];
        diff += (fresh[static_cast<std::size_t>(j)] - shared[static_cast<std::size_t>(j)]) *
                (fresh[static_cast<std::size_t>(j)] - shared[static_cast<std::size_t>(j)]);
    }
    CHECK(std::sqrt(diff) <= 0.15 * std::sqrt(norm));
}

TEST_CASE("Monte-Carlo variance shrinks roughly as 1/n") {
    const auto s = random_scores(10, 12);
    const std::vector<int> counts{100, 400, 1600};
    const auto rows = estimator_variance(s, 3, 0.05, counts, 40, 9);
    REQUIRE(rows.size() == 3);
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
        const double ratio = rows[i].forward_variance / rows[i + 1].forward_variance;
        CHECK(ratio > 2.5);
        CHECK(ratio < 6.5);
        CHECK(rows[i].vjp_variance > rows[i + 1].vjp_variance);
    }
}

TEST_CASE("perturbation draws are standard normal") {
    std::vector<double> z(64);
    double s = 0, s2 = 0;
    int n = 0;
    for (int m = 0; m < 2000; ++m) {
        perturbation(1, 2, m, z);
        for (double v : z) {
            s += v;
            s2 += v * v;
            ++n;
        }
    }
    CHECK(std::abs(s / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.02);
}
