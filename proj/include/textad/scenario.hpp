#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "textad/corpus.hpp"
#include "textad/text.hpp"

namespace textad {

enum class NormalityMode { Unimodal, Multimodal };
enum class AnomalyKind { Semantic, Syntactic };

std::string to_string(NormalityMode m);
std::string to_string(AnomalyKind k);
NormalityMode normality_mode_from_string(const std::string& s);
AnomalyKind anomaly_kind_from_string(const std::string& s);

struct NormalitySpec {
    NormalityMode mode = NormalityMode::Unimodal;
    std::string label;      // inlier label (unimodal) or held-out label (multimodal)
    std::string corpus_id;  // free-form corpus identifier, echoed in manifests
};

struct ScenarioDocument {
    std::string id;
    std::string label;
    Tokens tokens;
    std::string source_id;    // document this one was derived from (== id if original)
    std::size_t shuffle_n = 0; // n-gram size of the derangement, 0 if unchanged

    bool operator==(const ScenarioDocument&) const = default;
};

std::vector<ScenarioDocument> tokenize_corpus(const std::vector<Document>& docs, const PreprocessConfig& cfg = {});

struct SplitRatios {
    double test_fraction = 0.2;  // of each label group
    double val_fraction = 0.1;   // of the remaining training inliers
};

struct ShuffleSpec {
    std::size_t n = 1;
    std::uint64_t seed = 0;
};

struct ContaminationSpec {
    double rate = 0.0;  // in [0, 0.5)
    std::uint64_t seed = 0;
};

struct ContaminationRecord {
    double rate = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> injected;  // (id, true label)

    bool operator==(const ContaminationRecord&) const = default;
};

struct ScenarioSplit {
    std::vector<ScenarioDocument> train_inliers;
    std::vector<ScenarioDocument> val_inliers;
    std::vector<ScenarioDocument> test_inliers;
    std::vector<ScenarioDocument> test_anomalies;
    std::vector<ScenarioDocument> anomaly_pool;  // off-test non-inlier-label documents, for contamination
    std::set<std::string> inlier_labels;

    AnomalyKind kind = AnomalyKind::Semantic;
    std::size_t ngram = 0;
    NormalitySpec normality;
    SplitRatios ratios;
    std::uint64_t seed = 0;
    ContaminationRecord contamination;

    bool operator==(const ScenarioSplit& o) const {
        return train_inliers == o.train_inliers && val_inliers == o.val_inliers && test_inliers == o.test_inliers &&
               test_anomalies == o.test_anomalies && anomaly_pool == o.anomaly_pool &&
               inlier_labels == o.inlier_labels && kind == o.kind && ngram == o.ngram && seed == o.seed &&
               contamination == o.contamination;
    }
};

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotPermutable : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Documents with no tokens after preprocessing are excluded. Groups are
// ordered by id before seeded shuffling, so corpus order does not matter.
ScenarioSplit build_scenario(const std::vector<ScenarioDocument>& corpus, const NormalitySpec& normality,
                             AnomalyKind kind, std::size_t ngram, const SplitRatios& ratios, std::uint64_t seed);

// Block derangement by seeded rejection. Blocks are consecutive runs of n
// tokens, the last possibly shorter. Throws NotPermutable below 2 blocks.
Tokens shuffle_ngrams(std::span<const std::string> tokens, const ShuffleSpec& spec);

struct SyntacticPair {
    std::vector<ScenarioDocument> inliers;    // sources that could be permuted
    std::vector<ScenarioDocument> anomalies;  // one per kept inlier, same order
};

// Per-document seed mix(spec.seed, hash(id)). Anomaly ids are "<id>#shuffle<n>".
SyntacticPair make_syntactic_anomalies(const std::vector<ScenarioDocument>& test_inliers, const ShuffleSpec& spec);

// Adds round(rate * n / (1 - rate)) pool documents to train_inliers.
ScenarioSplit contaminate(const ScenarioSplit& split, const ContaminationSpec& spec);
std::size_t contamination_count(std::size_t inliers, double rate);

// Manifest: split membership by id plus everything needed to rebuild.
std::string scenario_manifest(const ScenarioSplit& split);
ScenarioSplit scenario_from_manifest(const std::string& manifest, const std::vector<ScenarioDocument>& corpus);

} // namespace textad
