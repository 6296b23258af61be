#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "textad/baselines.hpp"
#include "textad/metrics.hpp"
#include "textad/rng.hpp"

using namespace textad;

namespace {

std::vector<std::vector<double>> gaussian(std::size_t n, std::size_t d, Rng& rng, std::vector<double> mean,
                                          double sd = 1.0) {
    std::vector<std::vector<double>> out(n, std::vector<double>(d));
    for (auto& v : out) {
        for (std::size_t j = 0; j < d; ++j) v[j] = mean[j] + sd * rng.normal();
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Word vectors and BoW

TEST(WordVectors, ParseWithAndWithoutHeader) {
    auto t = WordVectorTable::parse("2 3\ncat 1 2 3\ndog 4 5 6\n");
    EXPECT_EQ(t.dim(), 3u);
    EXPECT_EQ(t.size(), 2u);
    ASSERT_NE(t.find("dog"), nullptr);
    EXPECT_EQ((*t.find("dog"))[2], 6.0);
    auto u = WordVectorTable::parse("cat 1 2\ndog 3 4\n");
    EXPECT_EQ(u.dim(), 2u);
    EXPECT_THROW(WordVectorTable::parse("cat 1 2\ndog 3\n"), std::invalid_argument);
}

TEST(Bow, MeanOfInTableVectors) {
    WordVectorTable t(2);
    t.add("u", {1.0, 2.0});
    t.add("v", {3.0, -2.0});
    auto one = bow_embed(Tokens{"u"}, t);
    EXPECT_EQ(one.vector, (std::vector<double>{1.0, 2.0}));
    auto two = bow_embed(Tokens{"u", "oov", "v"}, t);
    EXPECT_EQ(two.vector, (std::vector<double>{2.0, 0.0}));
    EXPECT_EQ(two.in_table, 2u);
    auto none = bow_embed(Tokens{"x", "y"}, t);
    EXPECT_TRUE(none.all_oov());
    EXPECT_EQ(none.vector, (std::vector<double>{0.0, 0.0}));
}

TEST(Bow, PermutationInvariantAndLinear) {
    Rng rng(4);
    WordVectorTable a(3), b(3), sum(3);
    const std::vector<std::string> words{"p", "q", "r", "s"};
    for (const auto& w : words) {
        std::vector<double> va(3), vb(3), vs(3);
        for (int j = 0; j < 3; ++j) {
            va[j] = rng.normal();
            vb[j] = rng.normal();
            vs[j] = 2.0 * va[j] - 0.5 * vb[j];
        }
        a.add(w, va);
        b.add(w, vb);
        sum.add(w, vs);
    }
    Tokens doc{"p", "q", "q", "s", "zz"};
    Tokens perm{"q", "zz", "s", "p", "q"};
    auto ea = bow_embed(doc, a), eb = bow_embed(doc, b), es = bow_embed(doc, sum), ep = bow_embed(perm, a);
    for (int j = 0; j < 3; ++j) {
        EXPECT_NEAR(ep.vector[j], ea.vector[j], 1e-15);
        EXPECT_NEAR(es.vector[j], 2.0 * ea.vector[j] - 0.5 * eb.vector[j], 1e-12);
    }
}

// ---------------------------------------------------------------------------
// OC-SVM

TEST(OcSvm, Errors) {
    std::vector<std::vector<double>> empty;
    EXPECT_THROW(ocsvm_fit(empty), std::invalid_argument);
    std::vector<std::vector<double>> one{{1.0}};
    EXPECT_THROW(ocsvm_fit(one), std::invalid_argument);
    std::vector<std::vector<double>> two{{1.0}, {2.0}};
    EXPECT_THROW(ocsvm_fit(two, {.nu = 0.0}), std::invalid_argument);
    EXPECT_THROW(ocsvm_fit(two, {.nu = 1.5}), std::invalid_argument);
}

TEST(OcSvm, IdenticalPointsSameScore) {
    std::vector<std::vector<double>> x(20, std::vector<double>{1.5, -0.5});
    auto m = ocsvm_fit(x);
    for (const auto& xi : x) EXPECT_EQ(ocsvm_score(m, xi), ocsvm_score(m, x[0]));
    for (double v : m.w) EXPECT_TRUE(std::isfinite(v));
    EXPECT_TRUE(std::isfinite(m.rho));
}

TEST(OcSvm, NuProperty) {
    Rng rng(8);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t d = 1 + rng.uniform_index(5), n = 20 + rng.uniform_index(200);
        std::vector<double> mean(d);
        for (auto& m : mean) m = 3.0 * rng.normal();
        auto x = gaussian(n, d, rng, mean);
        const double nu = 0.05 + 0.5 * rng.uniform();
        auto model = ocsvm_fit(x, {.nu = nu, .steps = 2000, .batch_size = 32, .seed = std::uint64_t(trial)});
        std::size_t positive = 0;
        for (const auto& xi : x) positive += ocsvm_score(model, xi) > 0.0;
        EXPECT_LE(static_cast<double>(positive) / n, nu + 0.05);
    }
}

TEST(OcSvm, RhoIsOptimalForFixedW) {
    Rng rng(9);
    auto x = gaussian(100, 3, rng, {4, 1, 2});
    auto m = ocsvm_fit(x, {.nu = 0.2});
    const double base = ocsvm_objective(m, x);
    for (double delta : {-0.1, -0.01, 0.01, 0.1}) {
        auto p = m;
        p.rho += delta;
        EXPECT_GE(ocsvm_objective(p, x), base - 1e-12);
    }
}

TEST(OcSvm, MatchesOneDimensionalOptimum) {
    // Convex in (w, rho); minimize the exact objective by nested ternary search.
    Rng rng(10);
    auto x = gaussian(150, 1, rng, {4.0});
    const double nu = 0.15;
    auto objective = [&](double w, double rho) { return ocsvm_objective({{w}, rho, nu}, x); };
    auto best_rho = [&](double w) {
        double lo = -50, hi = 50;
        for (int it = 0; it < 200; ++it) {
            const double a = lo + (hi - lo) / 3, b = hi - (hi - lo) / 3;
            if (objective(w, a) < objective(w, b)) hi = b;
            else lo = a;
        }
        return objective(w, 0.5 * (lo + hi));
    };
    double lo = -20, hi = 20;
    for (int it = 0; it < 200; ++it) {
        const double a = lo + (hi - lo) / 3, b = hi - (hi - lo) / 3;
        if (best_rho(a) < best_rho(b)) hi = b;
        else lo = a;
    }
    const double optimum = best_rho(0.5 * (lo + hi));
    auto m = ocsvm_fit(x, {.nu = nu});
    EXPECT_NEAR(ocsvm_objective(m, x), optimum, 1e-4 * std::abs(optimum));
}

TEST(OcSvm, MiniBatchNearFullBatch) {
    Rng rng(10);
    auto x = gaussian(200, 4, rng, {3, 3, 0, 1});
    const double full = ocsvm_objective(ocsvm_fit(x, {.nu = 0.1}), x);
    const double mini = ocsvm_objective(ocsvm_fit(x, {.nu = 0.1, .batch_size = 64}), x);
    EXPECT_LE(full, mini + 1e-12);
    EXPECT_NEAR(mini, full, 0.01 * std::abs(full));
    const double few = ocsvm_objective(ocsvm_fit(x, {.nu = 0.1, .steps = 3}), x);
    EXPECT_LE(full, few + 1e-12);
}

TEST(OcSvm, SeparableToyAurocOne) {
    Rng rng(11);
    auto train = gaussian(200, 2, rng, {5, 5}, 0.3);
    auto test_in = gaussian(100, 2, rng, {5, 5}, 0.3);
    auto test_out = gaussian(100, 2, rng, {-15, 5}, 0.3);
    auto m = ocsvm_fit(train);
    std::vector<double> si, so;
    for (const auto& x : test_in) si.push_back(ocsvm_score(m, x));
    for (const auto& x : test_out) so.push_back(ocsvm_score(m, x));
    EXPECT_EQ(auroc(si, so), 1.0);
}

TEST(OcSvm, Deterministic) {
    Rng rng(12);
    auto x = gaussian(50, 3, rng, {1, 1, 1});
    auto a = ocsvm_fit(x, {.seed = 3});
    auto b = ocsvm_fit(x, {.seed = 3});
    EXPECT_EQ(a.w, b.w);
    EXPECT_EQ(a.rho, b.rho);
}

// ---------------------------------------------------------------------------
// kNN

TEST(Knn, Basics) {
    std::vector<std::vector<double>> train{{0, 0}, {3, 4}, {6, 8}};
    EXPECT_EQ(knn_score(std::vector<double>{3, 4}, train, 1), 0.0);
    EXPECT_DOUBLE_EQ(knn_score(std::vector<double>{0, 0}, train, 2), 2.5);
    EXPECT_THROW(knn_score(std::vector<double>{0, 0}, train, 4), std::invalid_argument);
    EXPECT_THROW(knn_score(std::vector<double>{0, 0}, train, 0), std::invalid_argument);
}

TEST(Knn, MatchesBruteForce) {
    Rng rng(13);
    auto train = gaussian(50, 4, rng, {0, 0, 0, 0});
    auto queries = gaussian(20, 4, rng, {0.5, 0, 0, 0});
    for (std::size_t k : {1u, 5u, 10u, 50u}) {
        auto got = knn_scores(queries, train, k);
        for (std::size_t q = 0; q < queries.size(); ++q) {
            std::vector<double> all;
            for (const auto& t : train) {
                double s = 0;
                for (int j = 0; j < 4; ++j) s += (queries[q][j] - t[j]) * (queries[q][j] - t[j]);
                all.push_back(std::sqrt(s));
            }
            std::sort(all.begin(), all.end());
            double mean = 0;
            for (std::size_t i = 0; i < k; ++i) mean += all[i] / k;
            EXPECT_NEAR(got[q], mean, 1e-12);
        }
    }
}

TEST(Knn, MonotoneAlongRay) {
    Rng rng(14);
    auto train = gaussian(30, 3, rng, {0, 0, 0});
    std::vector<double> dir{1, 2, -1};
    double prev = -1;
    for (double s = 20; s <= 100; s += 5) {
        std::vector<double> q{s * dir[0], s * dir[1], s * dir[2]};
        const double v = knn_score(q, train, 5);
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(Knn, IsometryInvariant) {
    Rng rng(15);
    auto train = gaussian(40, 2, rng, {0, 0});
    auto queries = gaussian(10, 2, rng, {1, 0});
    const double th = 0.7, c = std::cos(th), s = std::sin(th);
    auto iso = [&](std::vector<double> v) { return std::vector<double>{c * v[0] - s * v[1] + 3.0, s * v[0] + c * v[1] - 7.0}; };
    std::vector<std::vector<double>> t2, q2;
    for (const auto& v : train) t2.push_back(iso(v));
    for (const auto& v : queries) q2.push_back(iso(v));
    auto a = knn_scores(queries, train, 7), b = knn_scores(q2, t2, 7);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}
