#include "textad/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "textad/rng.hpp"

namespace textad {

std::string to_string(NormalityMode m) { return m == NormalityMode::Unimodal ? "unimodal" : "multimodal"; }
std::string to_string(AnomalyKind k) { return k == AnomalyKind::Semantic ? "semantic" : "syntactic"; }

NormalityMode normality_mode_from_string(const std::string& s) {
    if (s == "unimodal") return NormalityMode::Unimodal;
    if (s == "multimodal") return NormalityMode::Multimodal;
    throw std::invalid_argument("unknown normality mode: " + s);
}

AnomalyKind anomaly_kind_from_string(const std::string& s) {
    if (s == "semantic") return AnomalyKind::Semantic;
    if (s == "syntactic") return AnomalyKind::Syntactic;
    throw std::invalid_argument("unknown anomaly kind: " + s);
}

std::vector<ScenarioDocument> tokenize_corpus(const std::vector<Document>& docs, const PreprocessConfig& cfg) {
    std::vector<ScenarioDocument> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back({d.id, d.label, preprocess(d.text, cfg), d.id, 0});
    return out;
}

namespace {

constexpr std::uint64_t kShuffleSalt = 0x5AFF1E;

std::uint64_t shuffle_seed(std::uint64_t scenario_seed) { return mix_seed(scenario_seed, kShuffleSalt); }

std::size_t fraction_count(std::size_t n, double f) {
    return static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
}

void sort_by_id(std::vector<ScenarioDocument>& docs) {
    std::sort(docs.begin(), docs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
}

} // namespace

ScenarioSplit build_scenario(const std::vector<ScenarioDocument>& corpus, const NormalitySpec& normality,
                             AnomalyKind kind, std::size_t ngram, const SplitRatios& ratios, std::uint64_t seed) {
    if (!(ratios.test_fraction > 0.0 && ratios.test_fraction < 1.0)) throw ScenarioError("test_fraction must be in (0,1)");
    if (!(ratios.val_fraction > 0.0 && ratios.val_fraction < 1.0)) throw ScenarioError("val_fraction must be in (0,1)");
    if (kind == AnomalyKind::Syntactic && ngram == 0) throw ScenarioError("syntactic scenario needs n >= 1");

    std::set<std::string> labels;
    std::unordered_set<std::string> ids;
    for (const auto& d : corpus) {
        labels.insert(d.label);
        if (!ids.insert(d.id).second) throw ScenarioError("duplicate document id " + d.id);
    }
    if (!labels.count(normality.label)) throw ScenarioError("label \"" + normality.label + "\" not in corpus");
    if (kind == AnomalyKind::Semantic && labels.size() < 2) {
        throw ScenarioError("semantic scenarios need at least 2 labels");
    }

    ScenarioSplit split;
    split.kind = kind;
    split.ngram = kind == AnomalyKind::Syntactic ? ngram : 0;
    split.normality = normality;
    split.ratios = ratios;
    split.seed = seed;
    if (normality.mode == NormalityMode::Unimodal) {
        split.inlier_labels = {normality.label};
    } else {
        if (labels.size() < 2) throw ScenarioError("multimodal normality needs at least 2 labels");
        split.inlier_labels = labels;
        split.inlier_labels.erase(normality.label);
    }

    std::vector<ScenarioDocument> inliers, outliers;
    for (const auto& d : corpus) {
        if (d.tokens.empty()) continue;
        (split.inlier_labels.count(d.label) ? inliers : outliers).push_back(d);
    }
    sort_by_id(inliers);
    sort_by_id(outliers);

    Rng(mix_seed(seed, 1)).shuffle(inliers);
    const std::size_t n_test = fraction_count(inliers.size(), ratios.test_fraction);
    const std::size_t rest = inliers.size() - std::min(n_test, inliers.size());
    const std::size_t n_val = fraction_count(rest, ratios.val_fraction);
    if (n_test == 0 || n_val == 0 || rest <= n_val) {
        throw ScenarioError("too few inlier documents (" + std::to_string(inliers.size()) + ") for the split");
    }
    auto it = inliers.begin();
    split.test_inliers.assign(it, it + static_cast<std::ptrdiff_t>(n_test));
    it += static_cast<std::ptrdiff_t>(n_test);
    split.val_inliers.assign(it, it + static_cast<std::ptrdiff_t>(n_val));
    it += static_cast<std::ptrdiff_t>(n_val);
    split.train_inliers.assign(it, inliers.end());

    if (kind == AnomalyKind::Semantic) {
        Rng(mix_seed(seed, 2)).shuffle(outliers);
        const std::size_t n_anom = fraction_count(outliers.size(), ratios.test_fraction);
        if (n_anom == 0) throw ScenarioError("too few anomaly documents for the split");
        split.test_anomalies.assign(outliers.begin(), outliers.begin() + static_cast<std::ptrdiff_t>(n_anom));
        split.anomaly_pool.assign(outliers.begin() + static_cast<std::ptrdiff_t>(n_anom), outliers.end());
    } else {
        auto pair = make_syntactic_anomalies(split.test_inliers, {ngram, shuffle_seed(seed)});
        if (pair.inliers.empty()) throw ScenarioError("no test inlier could be permuted");
        split.test_inliers = std::move(pair.inliers);
        split.test_anomalies = std::move(pair.anomalies);
        split.anomaly_pool = std::move(outliers);  // contamination source only
    }
    return split;
}

Tokens shuffle_ngrams(std::span<const std::string> tokens, const ShuffleSpec& spec) {
    if (spec.n == 0) throw std::invalid_argument("shuffle_ngrams: n must be >= 1");
    const std::size_t blocks = (tokens.size() + spec.n - 1) / spec.n;
    if (blocks < 2) {
        throw NotPermutable("shuffle_ngrams: " + std::to_string(tokens.size()) + " token(s) form fewer than 2 blocks of " +
                            std::to_string(spec.n));
    }
    std::vector<std::size_t> perm(blocks);
    Rng rng(spec.seed);
    for (;;) {
        for (std::size_t i = 0; i < blocks; ++i) perm[i] = i;
        rng.shuffle(perm);
        bool deranged = true;
        for (std::size_t i = 0; i < blocks && deranged; ++i) deranged = perm[i] != i;
        if (deranged) break;
    }
    Tokens out;
    out.reserve(tokens.size());
    for (auto b : perm) {
        const std::size_t begin = b * spec.n;
        const std::size_t end = std::min(begin + spec.n, tokens.size());
        out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(begin),
                   tokens.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

SyntacticPair make_syntactic_anomalies(const std::vector<ScenarioDocument>& test_inliers, const ShuffleSpec& spec) {
    SyntacticPair out;
    for (const auto& d : test_inliers) {
        Tokens shuffled;
        try {
            shuffled = shuffle_ngrams(d.tokens, {spec.n, mix_seed(spec.seed, hash_string(d.id))});
        } catch (const NotPermutable&) {
            continue;
        }
        out.inliers.push_back(d);
        out.anomalies.push_back({d.id + "#shuffle" + std::to_string(spec.n), d.label, std::move(shuffled), d.id, spec.n});
    }
    return out;
}

std::size_t contamination_count(std::size_t inliers, double rate) {
    return static_cast<std::size_t>(std::llround(rate * static_cast<double>(inliers) / (1.0 - rate)));
}

ScenarioSplit contaminate(const ScenarioSplit& split, const ContaminationSpec& spec) {
    if (!(spec.rate >= 0.0 && spec.rate < 0.5)) throw ScenarioError("contamination rate must be in [0, 0.5)");
    if (spec.rate == 0.0) return split;
    std::unordered_set<std::string> test_ids;
    for (const auto* set : {&split.test_inliers, &split.test_anomalies}) {
        for (const auto& d : *set) test_ids.insert(d.id);
    }
    for (const auto& d : split.anomaly_pool) {
        if (test_ids.count(d.id)) throw ScenarioError("anomaly pool overlaps the test sets at " + d.id);
    }
    const std::size_t k = contamination_count(split.train_inliers.size(), spec.rate);
    if (k > split.anomaly_pool.size()) {
        throw ScenarioError("anomaly pool has " + std::to_string(split.anomaly_pool.size()) + " documents, need " +
                            std::to_string(k));
    }
    ScenarioSplit out = split;
    auto pool = split.anomaly_pool;
    sort_by_id(pool);
    Rng(mix_seed(spec.seed, 0xC0)).shuffle(pool);
    out.contamination = {spec.rate, spec.seed, {}};
    for (std::size_t i = 0; i < k; ++i) {
        out.contamination.injected.emplace_back(pool[i].id, pool[i].label);
        out.train_inliers.push_back(pool[i]);
    }
    out.anomaly_pool.assign(pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end());
    return out;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

nlohmann::json ids_of(const std::vector<ScenarioDocument>& docs) {
    auto arr = nlohmann::json::array();
    for (const auto& d : docs) arr.push_back(d.id);
    return arr;
}

} // namespace

std::string scenario_manifest(const ScenarioSplit& s) {
    nlohmann::json injected = nlohmann::json::array();
    for (const auto& [id, label] : s.contamination.injected) injected.push_back({{"id", id}, {"label", label}});
    nlohmann::json anomalies = nlohmann::json::array();
    for (const auto& d : s.test_anomalies) {
        anomalies.push_back({{"id", d.id}, {"source_id", d.source_id}, {"n", d.shuffle_n}});
    }
    nlohmann::json j{
        {"normality", {{"mode", to_string(s.normality.mode)}, {"label", s.normality.label},
                       {"corpus_id", s.normality.corpus_id}}},
        {"inlier_labels", s.inlier_labels},
        {"anomaly_kind", to_string(s.kind)},
        {"n", s.ngram},
        {"seed", s.seed},
        {"shuffle_seed", s.kind == AnomalyKind::Syntactic ? shuffle_seed(s.seed) : 0},
        {"split_ratios", {{"test_fraction", s.ratios.test_fraction}, {"val_fraction", s.ratios.val_fraction}}},
        {"contamination", {{"rate", s.contamination.rate}, {"seed", s.contamination.seed}, {"injected", injected}}},
        {"train_inliers", ids_of(s.train_inliers)},
        {"val_inliers", ids_of(s.val_inliers)},
        {"test_inliers", ids_of(s.test_inliers)},
        {"test_anomalies", anomalies},
        {"anomaly_pool", ids_of(s.anomaly_pool)},
    };
    return j.dump(1);
}

ScenarioSplit scenario_from_manifest(const std::string& manifest, const std::vector<ScenarioDocument>& corpus) {
    const auto j = nlohmann::json::parse(manifest);
    std::unordered_map<std::string, const ScenarioDocument*> by_id;
    for (const auto& d : corpus) by_id[d.id] = &d;
    auto lookup = [&](const std::string& id) -> const ScenarioDocument& {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ScenarioError("manifest references unknown document " + id);
        return *it->second;
    };
    auto collect = [&](const nlohmann::json& arr) {
        std::vector<ScenarioDocument> docs;
        for (const auto& id : arr) docs.push_back(lookup(id.get<std::string>()));
        return docs;
    };

    ScenarioSplit s;
    s.normality.mode = normality_mode_from_string(j.at("normality").at("mode").get<std::string>());
    s.normality.label = j.at("normality").at("label").get<std::string>();
    s.normality.corpus_id = j.at("normality").value("corpus_id", "");
    s.inlier_labels = j.at("inlier_labels").get<std::set<std::string>>();
    s.kind = anomaly_kind_from_string(j.at("anomaly_kind").get<std::string>());
    s.ngram = j.at("n").get<std::size_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.ratios.test_fraction = j.at("split_ratios").at("test_fraction").get<double>();
    s.ratios.val_fraction = j.at("split_ratios").at("val_fraction").get<double>();
    const auto& c = j.at("contamination");
    s.contamination.rate = c.at("rate").get<double>();
    s.contamination.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& e : c.at("injected")) {
        s.contamination.injected.emplace_back(e.at("id").get<std::string>(), e.at("label").get<std::string>());
    }
    s.train_inliers = collect(j.at("train_inliers"));
    s.val_inliers = collect(j.at("val_inliers"));
    s.test_inliers = collect(j.at("test_inliers"));
    s.anomaly_pool = collect(j.at("anomaly_pool"));
    const std::uint64_t sseed = j.at("shuffle_seed").get<std::uint64_t>();
    for (const auto& a : j.at("test_anomalies")) {
        const auto n = a.at("n").get<std::size_t>();
        const auto& src = lookup(a.at("source_id").get<std::string>());
        if (n == 0) {
            s.test_anomalies.push_back(src);
            continue;
        }
        ScenarioDocument d{a.at("id").get<std::string>(), src.label,
                           shuffle_ngrams(src.tokens, {n, mix_seed(sseed, hash_string(src.id))}), src.id, n};
        s.test_anomalies.push_back(std::move(d));
    }
    return s;
}

} // namespace textad
