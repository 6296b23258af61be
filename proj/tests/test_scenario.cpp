#include <algorithm>
#include <map>
#include <unordered_set>

#include <gtest/gtest.h>

#include "textad/rng.hpp"
#include "textad/scenario.hpp"

using namespace textad;

namespace {

std::vector<ScenarioDocument> labeled_corpus(std::size_t per_label, std::vector<std::string> labels) {
    std::vector<ScenarioDocument> out;
    Rng rng(17);
    for (const auto& l : labels) {
        for (std::size_t i = 0; i < per_label; ++i) {
            ScenarioDocument d;
            d.id = l + "-" + std::to_string(i);
            d.label = l;
            const std::size_t n = 1 + rng.uniform_index(9);
            for (std::size_t t = 0; t < n; ++t) d.tokens.push_back(l + std::to_string(rng.uniform_index(20)));
            d.source_id = d.id;
            out.push_back(d);
        }
    }
    return out;
}

std::map<std::string, int> multiset(const Tokens& t) {
    std::map<std::string, int> m;
    for (const auto& s : t) ++m[s];
    return m;
}

std::unordered_set<std::string> ids(const std::vector<ScenarioDocument>& docs) {
    std::unordered_set<std::string> s;
    for (const auto& d : docs) s.insert(d.id);
    return s;
}

void expect_disjoint(const ScenarioSplit& s) {
    std::unordered_set<std::string> all;
    std::size_t total = 0;
    for (const auto* set : {&s.train_inliers, &s.val_inliers, &s.test_inliers, &s.test_anomalies}) {
        for (const auto& d : *set) all.insert(d.id);
        total += set->size();
    }
    EXPECT_EQ(all.size(), total);
}

} // namespace

TEST(ShuffleNgrams, ForcedCases) {
    EXPECT_EQ(shuffle_ngrams(Tokens{"a", "b"}, {1, 0}), (Tokens{"b", "a"}));
    EXPECT_EQ(shuffle_ngrams(Tokens{"a", "b", "c", "d"}, {2, 5}), (Tokens{"c", "d", "a", "b"}));
    EXPECT_EQ(shuffle_ngrams(Tokens{"a", "b", "c"}, {2, 5}), (Tokens{"c", "a", "b"}));  // short tail block
    EXPECT_THROW(shuffle_ngrams(Tokens{"a"}, {1, 0}), NotPermutable);
    EXPECT_THROW(shuffle_ngrams(Tokens{"a", "b", "c"}, {3, 0}), NotPermutable);
    EXPECT_THROW(shuffle_ngrams(Tokens{}, {1, 0}), NotPermutable);
}

TEST(ShuffleNgrams, DerangementProperty) {
    Rng rng(99);
    for (int trial = 0; trial < 3000; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(4);
        const std::size_t len = n + 1 + rng.uniform_index(20);
        Tokens t;
        for (std::size_t i = 0; i < len; ++i) t.push_back("t" + std::to_string(i));  // distinct: positions traceable
        const std::uint64_t seed = rng.next_u64();
        auto out = shuffle_ngrams(t, {n, seed});
        ASSERT_EQ(multiset(out), multiset(t));
        EXPECT_EQ(out, shuffle_ngrams(t, {n, seed}));
        // block starting at output block position k must originate elsewhere
        std::size_t pos = 0, k = 0;
        while (pos < out.size()) {
            const std::size_t src = std::stoul(out[pos].substr(1));
            ASSERT_EQ(src % n, 0u);
            EXPECT_NE(src / n, k);
            pos += std::min(n, len - src);
            ++k;
        }
        if (n == 1) {
            for (std::size_t i = 0; i < len; ++i) EXPECT_NE(out[i], t[i]);
        }
    }
}

TEST(SyntacticAnomalies, PairedAndExcluded) {
    std::vector<ScenarioDocument> docs{
        {"one", "x", {"a"}, "one", 0},
        {"two", "x", {"a", "b"}, "two", 0},
        {"six", "x", {"a", "b", "c", "d", "e", "f"}, "six", 0},
    };
    auto pair = make_syntactic_anomalies(docs, {2, 3});
    ASSERT_EQ(pair.inliers.size(), 1u);  // only "six" has >= 2 bigram blocks
    ASSERT_EQ(pair.anomalies.size(), pair.inliers.size());
    EXPECT_EQ(pair.anomalies[0].id, "six#shuffle2");
    EXPECT_EQ(pair.anomalies[0].source_id, "six");
    EXPECT_EQ(pair.anomalies[0].shuffle_n, 2u);
    EXPECT_EQ(multiset(pair.anomalies[0].tokens), multiset(docs[2].tokens));
    auto p1 = make_syntactic_anomalies(docs, {1, 3});
    EXPECT_EQ(p1.inliers.size(), 2u);
}

TEST(Scenario, UnimodalSemantic) {
    auto corpus = labeled_corpus(100, {"a", "b", "c"});
    auto s = build_scenario(corpus, {NormalityMode::Unimodal, "a", "toy"}, AnomalyKind::Semantic, 0, {}, 5);
    for (const auto* set : {&s.train_inliers, &s.val_inliers, &s.test_inliers}) {
        for (const auto& d : *set) EXPECT_EQ(d.label, "a");
    }
    for (const auto& d : s.test_anomalies) EXPECT_NE(d.label, "a");
    EXPECT_EQ(s.test_inliers.size(), 20u);
    EXPECT_EQ(s.val_inliers.size(), 8u);
    EXPECT_EQ(s.train_inliers.size(), 72u);
    EXPECT_EQ(s.test_anomalies.size(), 40u);
    EXPECT_EQ(s.anomaly_pool.size(), 160u);
    expect_disjoint(s);
    for (const auto& d : s.anomaly_pool) EXPECT_FALSE(ids(s.test_anomalies).count(d.id));
}

TEST(Scenario, MultimodalHoldsOutOneLabel) {
    auto corpus = labeled_corpus(50, {"a", "b", "c", "d"});
    auto s = build_scenario(corpus, {NormalityMode::Multimodal, "c", ""}, AnomalyKind::Semantic, 0, {}, 1);
    EXPECT_EQ(s.inlier_labels, (std::set<std::string>{"a", "b", "d"}));
    std::set<std::string> train_labels;
    for (const auto& d : s.train_inliers) train_labels.insert(d.label);
    EXPECT_EQ(train_labels, s.inlier_labels);
    for (const auto& d : s.test_anomalies) EXPECT_EQ(d.label, "c");
    expect_disjoint(s);
}

TEST(Scenario, Syntactic) {
    auto corpus = labeled_corpus(100, {"a", "b"});
    for (std::size_t n = 1; n <= 4; ++n) {
        auto s = build_scenario(corpus, {NormalityMode::Unimodal, "b", ""}, AnomalyKind::Syntactic, n, {}, 3);
        ASSERT_EQ(s.test_inliers.size(), s.test_anomalies.size());
        std::unordered_set<std::string> inlier_ids = ids(s.test_inliers);
        for (std::size_t i = 0; i < s.test_anomalies.size(); ++i) {
            const auto& a = s.test_anomalies[i];
            EXPECT_EQ(a.label, "b");
            EXPECT_EQ(a.source_id, s.test_inliers[i].id);
            EXPECT_EQ(multiset(a.tokens), multiset(s.test_inliers[i].tokens));
            EXPECT_EQ(a.shuffle_n, n);
        }
        expect_disjoint(s);
    }
}

TEST(Scenario, DeterministicAndOrderIndependent) {
    auto corpus = labeled_corpus(60, {"a", "b"});
    NormalitySpec spec{NormalityMode::Unimodal, "a", ""};
    auto s1 = build_scenario(corpus, spec, AnomalyKind::Semantic, 0, {}, 9);
    auto s2 = build_scenario(corpus, spec, AnomalyKind::Semantic, 0, {}, 9);
    EXPECT_EQ(s1, s2);
    auto reversed = corpus;
    std::reverse(reversed.begin(), reversed.end());
    EXPECT_EQ(build_scenario(reversed, spec, AnomalyKind::Semantic, 0, {}, 9), s1);
    EXPECT_FALSE(build_scenario(corpus, spec, AnomalyKind::Semantic, 0, {}, 10) == s1);
}

TEST(Scenario, Errors) {
    auto corpus = labeled_corpus(60, {"a", "b"});
    EXPECT_THROW(build_scenario(corpus, {NormalityMode::Unimodal, "zzz", ""}, AnomalyKind::Semantic, 0, {}, 0),
                 ScenarioError);
    auto single = labeled_corpus(60, {"a"});
    EXPECT_THROW(build_scenario(single, {NormalityMode::Unimodal, "a", ""}, AnomalyKind::Semantic, 0, {}, 0),
                 ScenarioError);
    EXPECT_NO_THROW(build_scenario(single, {NormalityMode::Unimodal, "a", ""}, AnomalyKind::Syntactic, 1, {}, 0));
    auto tiny = labeled_corpus(3, {"a", "b"});
    EXPECT_THROW(build_scenario(tiny, {NormalityMode::Unimodal, "a", ""}, AnomalyKind::Semantic, 0, {}, 0),
                 ScenarioError);
}

TEST(Scenario, EmptyDocumentsExcluded) {
    auto corpus = labeled_corpus(60, {"a", "b"});
    corpus[0].tokens.clear();
    auto s = build_scenario(corpus, {NormalityMode::Unimodal, "a", ""}, AnomalyKind::Semantic, 0, {}, 0);
    for (const auto* set : {&s.train_inliers, &s.val_inliers, &s.test_inliers}) EXPECT_FALSE(ids(*set).count(corpus[0].id));
}

TEST(Contamination, Counts) {
    EXPECT_EQ(contamination_count(900, 0.10), 100u);
    EXPECT_EQ(contamination_count(900, 0.0), 0u);
    auto corpus = labeled_corpus(400, {"a", "b", "c"});
    auto s = build_scenario(corpus, {NormalityMode::Unimodal, "a", ""}, AnomalyKind::Semantic, 0, {}, 2);
    EXPECT_EQ(contaminate(s, {0.0, 1}), s);
    for (double rate : {0.05, 0.10, 0.15}) {
        auto c = contaminate(s, {rate, 1});
        const std::size_t k = c.train_inliers.size() - s.train_inliers.size();
        EXPECT_EQ(k, contamination_count(s.train_inliers.size(), rate));
        EXPECT_NEAR(static_cast<double>(k) / c.train_inliers.size(), rate, 0.5 / c.train_inliers.size() + 1e-12);
        EXPECT_EQ(c.test_inliers, s.test_inliers);
        EXPECT_EQ(c.test_anomalies, s.test_anomalies);
        EXPECT_EQ(c.val_inliers, s.val_inliers);
        EXPECT_EQ(c.contamination.injected.size(), k);
        for (const auto& [id, label] : c.contamination.injected) EXPECT_NE(label, "a");
        EXPECT_EQ(contaminate(s, {rate, 1}), c);
    }
    EXPECT_THROW(contaminate(s, {0.5, 1}), ScenarioError);
    auto small_pool = s;
    small_pool.anomaly_pool.resize(3);
    EXPECT_THROW(contaminate(small_pool, {0.15, 1}), ScenarioError);
}

TEST(Manifest, RebuildsBitExact) {
    auto corpus = labeled_corpus(80, {"a", "b", "c"});
    auto sem = contaminate(
        build_scenario(corpus, {NormalityMode::Multimodal, "b", "toy"}, AnomalyKind::Semantic, 0, {}, 4), {0.1, 7});
    EXPECT_EQ(scenario_from_manifest(scenario_manifest(sem), corpus), sem);
    auto syn = build_scenario(corpus, {NormalityMode::Unimodal, "c", "toy"}, AnomalyKind::Syntactic, 3, {}, 4);
    auto rebuilt = scenario_from_manifest(scenario_manifest(syn), corpus);
    EXPECT_EQ(rebuilt, syn);
    EXPECT_EQ(scenario_manifest(rebuilt), scenario_manifest(syn));
    auto missing = corpus;
    missing.erase(std::find_if(missing.begin(), missing.end(),
                               [&](const auto& d) { return d.id == syn.train_inliers[0].id; }));
    EXPECT_THROW(scenario_from_manifest(scenario_manifest(syn), missing), ScenarioError);
}
