#include <cmath>
#include <numeric>

#include "doctest.h"
#include "ordimpute/dpmpm.hpp"
#include "ordimpute/error.hpp"
#include "ordimpute/missingness.hpp"
#include "test_support.hpp"

using namespace ordimpute;

namespace {

struct Mixture {
    std::vector<double> weights;
    // lambda[c][j] is the level pmf of variable j in class c
    std::vector<std::vector<std::vector<double>>> lambda;
};

OrdinalDataset simulate(const Mixture& m, const std::vector<int>& cards, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<int>> cols(cards.size(), std::vector<int>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = rng.categorical(m.weights);
        for (std::size_t j = 0; j < cards.size(); ++j) cols[j][i] = 1 + static_cast<int>(rng.categorical(m.lambda[c][j]));
    }
    return testing::from_columns(cards, cols);
}

double proportion(const OrdinalDataset& d, std::size_t a, int la, std::size_t b, int lb) {
    double hits = 0;
    for (std::size_t i = 0; i < d.rows(); ++i) hits += d.at(i, a) == la && d.at(i, b) == lb;
    return hits / static_cast<double>(d.rows());
}

}  // namespace

TEST_CASE("stick_break") {
    CHECK(stick_break(std::vector<double>{1.0}) == std::vector<double>{1.0});
    auto pi = stick_break(std::vector<double>{0.4, 0.5, 1.0});
    CHECK(pi[0] == doctest::Approx(0.4));
    CHECK(pi[1] == doctest::Approx(0.3));
    CHECK(pi[2] == doctest::Approx(0.3));
    CHECK_THROWS_AS(stick_break(std::vector<double>{0.4, 0.5}), std::invalid_argument);
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(1 + rng.uniform_index(60));
        for (auto& x : v) x = rng.uniform();
        v.back() = 1.0;
        auto w = stick_break(v);
        CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-12);
    }
}

TEST_CASE("retained sweeps are evenly spaced after burn-in") {
    CHECK(retained_sweeps(3000, 1000, 10) == std::vector<int>{1200, 1400, 1600, 1800, 2000, 2200, 2400, 2600, 2800, 3000});
    CHECK(retained_sweeps(10, 0, 1) == std::vector<int>{10});
    CHECK_THROWS_AS(retained_sweeps(10, 10, 1), ConfigError);
    CHECK_THROWS_AS(retained_sweeps(10, 5, 6), ConfigError);
}

TEST_CASE("defaults") {
    DpmpmOptions o;
    CHECK(o.initial_classes == 40);
    CHECK(o.iterations == 15000);
    CHECK(o.burn_in == 5000);
}

TEST_CASE("empty mask gives copies of the input") {
    auto data = testing::uniform_dataset({3, 4}, 40, 1);
    DpmpmOptions o;
    o.iterations = 50;
    o.burn_in = 10;
    o.imputations = 3;
    auto r = dpmpm_impute(IncompleteDataset(data), o, 5);
    REQUIRE(r.completed.size() == 3);
    for (const auto& c : r.completed) CHECK(c == data);
}

TEST_CASE("single class: imputations follow the Dirichlet-smoothed observed pmf") {
    Rng rng(2);
    std::vector<int> col(600);
    const std::vector<double> pmf{0.6, 0.3, 0.1};
    for (auto& v : col) v = 1 + static_cast<int>(rng.categorical(pmf));
    auto data = testing::from_columns({3, 2}, {col, std::vector<int>(600, 1)});
    auto input = inject_mcar(data, {{0, 0.5}}, 3);
    DpmpmOptions o;
    o.initial_classes = 1;
    o.grow_classes = false;
    DpmpmSampler s(input, o, 4);
    const auto counts = input.observed_counts(0);
    const double n_obs = static_cast<double>(counts[0] + counts[1] + counts[2]);
    std::vector<double> imputed(3, 0.0);
    double total = 0;
    for (int t = 0; t < 3000; ++t) {
        s.sweep();
        for (int z : s.state().z) REQUIRE(z == 0);
        REQUIRE(s.state().pi == std::vector<double>{1.0});
        if (t < 200) continue;
        auto c = s.completed();
        for (std::size_t i = 0; i < 600; ++i) {
            if (!input.mask().missing(i, 0)) continue;
            imputed[static_cast<std::size_t>(c.at(i, 0) - 1)] += 1;
            total += 1;
        }
    }
    for (std::size_t d = 0; d < 3; ++d) {
        const double smoothed = (static_cast<double>(counts[d]) + 1.0) / (n_obs + 3.0);
        CHECK(std::abs(imputed[d] / total - smoothed) < 0.02);
    }
}

TEST_CASE("two well-separated classes are found") {
    // disjoint level supports, so no row is ambiguous
    const std::vector<double> a{0.5, 0.5, 0.0, 0.0};
    const std::vector<double> b{0.0, 0.0, 0.5, 0.5};
    Mixture m{{0.5, 0.5}, {std::vector<std::vector<double>>(10, a), std::vector<std::vector<double>>(10, b)}};
    auto data = simulate(m, std::vector<int>(10, 4), 1000, 5);
    auto input = inject_mcar(data, {{0, 0.2}, {3, 0.2}}, 6);
    DpmpmOptions o;
    o.initial_classes = 10;
    DpmpmSampler s(input, o, 7);
    int two = 0;
    int post = 0;
    for (int t = 1; t <= 1500; ++t) {
        s.sweep();
        s.check_invariants();
        if (t <= 500) continue;
        ++post;
        two += occupied_classes(s.class_sizes()) == 2;
    }
    CHECK(static_cast<double>(two) / post >= 0.95);
}

TEST_CASE("three-class recovery, marginal trace stability, and determinism") {
    Mixture m;
    m.weights = {0.5, 0.3, 0.2};
    m.lambda = {{{0.7, 0.2, 0.1}, {0.6, 0.2, 0.1, 0.1}, {0.8, 0.1, 0.1}},
                {{0.1, 0.8, 0.1}, {0.1, 0.1, 0.7, 0.1}, {0.2, 0.6, 0.2}},
                {{0.1, 0.2, 0.7}, {0.1, 0.1, 0.1, 0.7}, {0.1, 0.1, 0.8}}};
    const std::vector<int> cards{3, 4, 3};
    auto data = simulate(m, cards, 3000, 8);
    auto input = inject_mcar(data, {{0, 0.3}, {1, 0.3}, {2, 0.3}}, 9);
    DpmpmOptions o;
    o.iterations = 2000;
    o.burn_in = 500;
    o.imputations = 10;
    std::vector<SweepTrace> trace;
    auto result = dpmpm_impute(input, o, 10, &trace);
    REQUIRE(result.completed.size() == 10);
    check_imputation(input, result);
    CHECK(trace.size() == 2000);

    const std::pair<std::size_t, std::size_t> pairs[] = {{0, 1}, {0, 2}, {1, 2}};
    for (auto [a, b] : pairs) {
        for (int la = 1; la <= cards[a]; ++la) {
            for (int lb = 1; lb <= cards[b]; ++lb) {
                double truth = 0;
                for (std::size_t c = 0; c < 3; ++c) {
                    truth += m.weights[c] * m.lambda[c][a][static_cast<std::size_t>(la - 1)] *
                             m.lambda[c][b][static_cast<std::size_t>(lb - 1)];
                }
                double pooled = 0;
                for (const auto& d : result.completed) pooled += proportion(d, a, la, b, lb);
                pooled /= 10.0;
                CHECK(std::abs(pooled - truth) < 0.03);
            }
        }
    }

    // Geweke-style comparison of the first 10% and last 50% of the kept trace
    auto segment_stats = [&](std::size_t from, std::size_t to) {
        const std::size_t batch = 50;
        std::vector<double> means;
        for (std::size_t s = from; s + batch <= to; s += batch) {
            double acc = 0;
            for (std::size_t t = s; t < s + batch; ++t) acc += trace[t].marginals[0];
            means.push_back(acc / batch);
        }
        const double mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
        double var = 0;
        for (double x : means) var += (x - mean) * (x - mean);
        var /= static_cast<double>(means.size() - 1);
        return std::pair{mean, var / static_cast<double>(means.size())};
    };
    auto [m1, v1] = segment_stats(500, 650);
    auto [m2, v2] = segment_stats(1250, 2000);
    CHECK(std::abs(m1 - m2) / std::sqrt(v1 + v2) < 1.96);

    auto again = dpmpm_impute(input, o, 10);
    CHECK(again.completed == result.completed);
}

TEST_CASE("posterior predictive of a tiny two-class model matches grid integration") {
    // n = 20 rows over a 2x2 table
    const int n11 = 8, n12 = 2, n21 = 3, n22 = 7;
    std::vector<int> y1, y2;
    auto add = [&](int a, int b, int count) {
        for (int i = 0; i < count; ++i) {
            y1.push_back(a);
            y2.push_back(b);
        }
    };
    add(1, 1, n11);
    add(1, 2, n12);
    add(2, 1, n21);
    add(2, 2, n22);
    auto data = testing::from_columns({2, 2}, {y1, y2});

    // Oracle: integrate alpha out of Beta(1, alpha) x Gamma(0.25, 0.25), which
    // gives P(V <= v) = 1 - (b / (b - log(1 - v)))^a; place v on prior-quantile
    // midpoints and the four lambda's (uniform priors) on a midpoint grid.
    const double a = 0.25, b = 0.25;
    const int gv = 80, gl = 22;
    std::vector<double> vs, ls;
    for (int g = 0; g < gv; ++g) {
        const double u = (g + 0.5) / gv;
        vs.push_back(1.0 - std::exp(b * (1.0 - std::pow(1.0 - u, -1.0 / a))));
    }
    for (int g = 0; g < gl; ++g) ls.push_back((g + 0.5) / gl);
    double num = 0, den = 0;
    for (double v : vs) {
        for (double l11 : ls) {         // class 1, P(Y1 = 1)
            for (double l12 : ls) {     // class 1, P(Y2 = 1)
                for (double l21 : ls) { // class 2, P(Y1 = 1)
                    for (double l22 : ls) {
                        const double p11 = v * l11 * l12 + (1 - v) * l21 * l22;
                        const double p12 = v * l11 * (1 - l12) + (1 - v) * l21 * (1 - l22);
                        const double p21 = v * (1 - l11) * l12 + (1 - v) * (1 - l21) * l22;
                        const double p22 = 1 - p11 - p12 - p21;
                        const double w = std::exp(n11 * std::log(p11) + n12 * std::log(p12) + n21 * std::log(p21) +
                                                  n22 * std::log(p22) + 13.0);
                        num += w * p11;
                        den += w;
                    }
                }
            }
        }
    }
    const double oracle = num / den;

    DpmpmOptions o;
    o.initial_classes = 2;
    o.grow_classes = false;
    DpmpmSampler s(IncompleteDataset(data), o, 11);
    double acc = 0;
    int kept = 0;
    for (int t = 0; t < 100000; ++t) {
        s.sweep();
        if (t < 1000) continue;
        acc += s.cell_probability({{0, 1}, {1, 1}});
        ++kept;
    }
    MESSAGE("oracle " << oracle << " chain " << acc / kept);
    CHECK(std::abs(acc / kept - oracle) < 0.02);
}

TEST_CASE("classes grow when all are occupied") {
    auto data = testing::uniform_dataset({5, 5, 5, 5}, 300, 12);
    auto input = inject_mcar(data, {{0, 0.2}}, 13);
    DpmpmOptions o;
    o.initial_classes = 1;
    DpmpmSampler s(input, o, 14);
    s.sweep();
    CHECK(s.state().classes == 11);
    s.check_invariants();
    for (int t = 0; t < 20; ++t) s.sweep();
    CHECK(s.state().classes >= 11);
    CHECK((s.state().classes - 1) % 10 == 0);
    s.check_invariants();
}

TEST_CASE("invalid options are rejected") {
    auto input = IncompleteDataset(testing::uniform_dataset({3, 3}, 10, 1));
    DpmpmOptions o;
    o.initial_classes = 0;
    CHECK_THROWS_AS(dpmpm_impute(input, o, 1), ConfigError);
    o = DpmpmOptions{};
    o.burn_in = o.iterations;
    CHECK_THROWS_AS(dpmpm_impute(input, o, 1), ConfigError);
}
