#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "textad/metrics.hpp"
#include "textad/rng.hpp"

using namespace textad;

namespace {

// Exhaustive pair counting, doubled to stay integral.
unsigned long long pair_count_twice(const std::vector<double>& in, const std::vector<double>& an) {
    unsigned long long c = 0;
    for (double a : an) {
        for (double i : in) c += a > i ? 2 : (a == i ? 1 : 0);
    }
    return c;
}

void random_instance(Rng& rng, std::vector<double>& in, std::vector<double>& an) {
    const std::size_t n = 2 + rng.uniform_index(49);
    const std::size_t na = 1 + rng.uniform_index(n - 1);
    const std::size_t levels = 1 + rng.uniform_index(12);  // few levels -> many ties
    in.clear();
    an.clear();
    for (std::size_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(rng.uniform_index(levels)) * 0.25 - 1.0;
        (i < na ? an : in).push_back(v);
    }
}

} // namespace

TEST(Auroc, Examples) {
    EXPECT_EQ(auroc(std::vector<double>{0.1, 0.2}, std::vector<double>{0.5, 0.9}), 1.0);
    EXPECT_EQ(auroc(std::vector<double>{0.3, 0.3}, std::vector<double>{0.3, 0.3, 0.3}), 0.5);
    EXPECT_EQ(auroc(std::vector<double>{0.1, 0.4}, std::vector<double>{0.3, 0.9}), 0.75);
    EXPECT_THROW(auroc(std::vector<double>{}, std::vector<double>{1.0}), std::invalid_argument);
    EXPECT_THROW(auroc(std::vector<double>{1.0}, std::vector<double>{}), std::invalid_argument);
    EXPECT_THROW(auroc(std::vector<double>{NAN}, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Auroc, MatchesPairCountingExactly) {
    Rng rng(2024);
    std::vector<double> in, an;
    for (int trial = 0; trial < 1000; ++trial) {
        random_instance(rng, in, an);
        ASSERT_EQ(auroc_twice_u(in, an), pair_count_twice(in, an));
        const double expect = static_cast<double>(pair_count_twice(in, an)) / (2.0 * in.size() * an.size());
        ASSERT_EQ(auroc(in, an), expect);
    }
}

TEST(Auroc, MonotoneTransformAndNegation) {
    Rng rng(7);
    std::vector<double> in, an;
    for (int trial = 0; trial < 200; ++trial) {
        random_instance(rng, in, an);
        auto f = [](double x) { return std::exp(3.0 * x) + x; };
        std::vector<double> tin, tan, nin, nan_;
        for (double x : in) {
            tin.push_back(f(x));
            nin.push_back(-x);
        }
        for (double x : an) {
            tan.push_back(f(x));
            nan_.push_back(-x);
        }
        EXPECT_EQ(auroc(tin, tan), auroc(in, an));
        EXPECT_EQ(auroc_twice_u(nin, nan_), 2ull * in.size() * an.size() - auroc_twice_u(in, an));
        EXPECT_NEAR(auroc(nin, nan_), 1.0 - auroc(in, an), 1e-15);
    }
}

TEST(Auroc, Dataset) {
    ScoredDataset d{"mlm", "m.json", {{"a", 0.1, false}, {"b", 0.4, false}, {"c", 0.3, true}, {"d", 0.9, true}}};
    EXPECT_EQ(auroc(d), 0.75);
}

TEST(Scores, JsonlRoundTripExact) {
    Rng rng(3);
    ScoredDataset d;
    d.objective = "clm";
    for (int i = 0; i < 50; ++i) d.items.push_back({"doc" + std::to_string(i), rng.normal() * 1e3, i % 3 == 0});
    d.items.push_back({"tiny", 5e-324, false});
    auto back = parse_scores(scores_jsonl(d));
    EXPECT_EQ(back.objective, d.objective);
    EXPECT_EQ(back.items, d.items);
    const auto path = std::filesystem::temp_directory_path() / "textad_scores.jsonl";
    write_scores(path, d);
    EXPECT_EQ(read_scores(path).items, d.items);
    std::filesystem::remove(path);
}

TEST(Scores, RejectsDuplicatesAndMixedObjectives) {
    ScoredDataset d{"x", "", {{"a", 1, false}, {"a", 2, true}}};
    EXPECT_THROW(scores_jsonl(d), std::invalid_argument);
    EXPECT_THROW(parse_scores("{\"id\":\"a\",\"objective\":\"x\",\"score\":1,\"is_anomaly\":false}\n"
                              "{\"id\":\"b\",\"objective\":\"y\",\"score\":1,\"is_anomaly\":false}\n"),
                 std::runtime_error);
}

TEST(Embeddings, RoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "textad_emb.jsonl";
    std::vector<std::string> ids{"a", "b"};
    std::vector<std::vector<double>> v{{1.0, 0.1}, {-2.5, 1e-17}};
    write_embeddings(path, ids, v);
    auto back = read_embeddings(path);
    std::filesystem::remove(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].first, "b");
    EXPECT_EQ(back[1].second, v[1]);
}
