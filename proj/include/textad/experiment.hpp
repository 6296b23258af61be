#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "textad/baselines.hpp"
#include "textad/diagnostics.hpp"
#include "textad/encoder.hpp"
#include "textad/metrics.hpp"
#include "textad/objectives.hpp"
#include "textad/scenario.hpp"
#include "textad/text.hpp"
#include "textad/train.hpp"

namespace textad {

// ---------------------------------------------------------------------------
// Configuration

// Flat key = value document; '#' starts a comment. List values are
// comma-separated. See config_keys() for the accepted keys.
struct ExperimentConfig {
    std::filesystem::path corpus;
    std::string corpus_id;
    NormalitySpec normality;
    std::vector<AnomalyKind> anomaly_kinds{AnomalyKind::Semantic};
    std::vector<std::size_t> ngrams{1, 2, 3, 4};
    std::vector<std::string> objectives{"mlm", "clm", "simcse", "pretrained"};
    std::vector<double> contamination{0.0};
    std::uint64_t contamination_seed = 0;
    SplitRatios ratios;
    std::uint64_t seed = 0;        // scenario construction
    std::uint64_t model_seed = 0;  // parameter initialization

    bool lowercase = true;
    bool strip_punctuation = true;
    std::filesystem::path stopwords;  // empty = bundled English list
    std::size_t min_count = 2;

    EncoderConfig encoder;  // vocab_size is filled in from the vocabulary
    TrainConfig train;
    MaskingPolicy masking;
    ContrastiveConfig contrastive;

    // Generic checkpoint for the pre-trained baseline and as the starting
    // point for fine-tuning: loaded from file, or MLM-trained on a generic
    // corpus, or (neither given) left at its random initialization.
    std::filesystem::path pretrained_checkpoint;
    std::filesystem::path pretrained_vocab;
    std::filesystem::path pretrain_corpus;
    std::size_t pretrain_steps = 2000;

    std::filesystem::path word_vectors;
    OcSvmConfig ocsvm;

    bool probe = false;
    bool brittleness = false;
    bool knn = false;
    std::size_t knn_k = 10;
    std::size_t probe_folds = 5;
    std::size_t brittleness_docs = 200;

    std::filesystem::path output;
    bool save_checkpoints = false;

    void validate() const;
};

std::vector<std::string> config_keys();
// Throws std::invalid_argument naming the key on unknown keys or bad values.
void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical key = value rendering; parse_config(config_text(c)) reproduces c.
std::string config_text(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Scenario plumbing

struct EncodedSet {
    std::vector<std::string> ids;
    std::vector<TokenSequence> seqs;
};

struct EncodedScenario {
    EncodedSet train, val, test_inliers, test_anomalies;
};

EncodedScenario encode_scenario(const ScenarioSplit& split, const Vocabulary& vocab, std::size_t max_len,
                                EncodeOptions opts = {});

// Loss-as-score over the test sets (inliers then anomalies).
ScoredDataset score_scenario(const Objective& objective, const EncoderModel& model, const EncodedScenario& data);

// Mean word vectors + linear OC-SVM fitted on the training inliers.
ScoredDataset bow_scores(const ScenarioSplit& split, const WordVectorTable& table, const OcSvmConfig& cfg);

struct ScoringComparison {
    std::vector<std::string> ids;  // shared by both modes, inliers first
    std::vector<bool> is_anomaly;
    std::vector<double> loss_scores;
    std::vector<double> knn_scores;
    double loss_auroc = 0.0;
    double knn_auroc = 0.0;
};

// Loss-based vs kNN-on-embeddings scoring over the identical test set; kNN
// uses mean-pooled final-layer embeddings of the training set.
ScoringComparison compare_scoring_modes(const EncoderModel& model, const Objective& objective,
                                        const EncodedScenario& data, std::size_t k);

// ---------------------------------------------------------------------------
// Report

struct CellResult {
    std::string scenario;
    std::string objective;
    AnomalyKind kind = AnomalyKind::Semantic;
    std::size_t n = 0;
    double contamination = 0.0;
    double auroc = 0.0;
    std::size_t inliers = 0;
    std::size_t anomalies = 0;
    std::string score_file;  // relative to the output directory
    std::string manifest;

    bool operator==(const CellResult&) const = default;
};

struct DiagnosticResult {
    std::string scenario;
    std::string objective;
    double auroc = 0.0;
    std::optional<ProbeReport> probe;
    std::optional<BrittlenessReport> brittleness;
    std::optional<double> knn_auroc;
};

struct TrainingRecord {
    std::string objective;
    std::string scenario;  // first scenario that used this training set
    std::string history_file;
    std::size_t best_step = 0;
    std::size_t steps_run = 0;
    double best_val_loss = 0.0;
    bool early_stopped = false;
};

struct ExperimentReport {
    std::string config;  // canonical config echo
    std::size_t vocab_size = 0;
    bool pretrained_untrained = false;
    std::string error;  // set when the run failed part way
    std::vector<CellResult> cells;
    std::vector<DiagnosticResult> diagnostics;
    std::vector<TrainingRecord> trainings;
};

// ---------------------------------------------------------------------------
// Pipeline stages, in the order run_experiment applies them.

struct NamedScenario {
    std::string name;  // e.g. semantic_c0, syntactic_n2_c0.05
    ScenarioSplit split;
};

std::string scenario_name(AnomalyKind kind, std::size_t n, double rate);
PreprocessConfig preprocess_config(const ExperimentConfig& cfg);
// Every (anomaly kind, n, contamination rate) in config order.
std::vector<NamedScenario> build_scenarios(const ExperimentConfig& cfg);

// Loaded from pretrained_vocab, else built from the uncontaminated training
// inliers of every scenario plus the pre-training corpus.
Vocabulary experiment_vocabulary(const ExperimentConfig& cfg, const std::vector<NamedScenario>& scenarios);

struct GenericModel {
    EncoderModel model;
    bool untrained = false;                // random init, no checkpoint or pre-training corpus
    std::optional<TrainResult> pretraining;
};

// Bidirectional model every objective starts from: the configured checkpoint,
// MLM pre-training on pretrain_corpus, or a seeded random init.
GenericModel generic_model(const ExperimentConfig& cfg, const Vocabulary& vocab);

bool uses_bos(const std::string& objective);
// Fine-tunes `objective` (mlm, clm or simcse) from the generic model; CLM
// switches to causal attention.
TrainResult fine_tune(const ExperimentConfig& cfg, const EncoderModel& generic, const std::string& objective,
                      const EncodedScenario& data);

// Probe, brittleness and kNN comparison as enabled in cfg. If embeddings_dir
// is given the kNN inputs are dumped there as <stem>__train/__test.jsonl.
DiagnosticResult diagnose_cell(const ExperimentConfig& cfg, const std::string& scenario, const std::string& objective_name,
                               const EncoderModel& model, const Objective& objective, const EncodedScenario& data,
                               double cell_auroc, const std::filesystem::path* embeddings_dir = nullptr);

// Deterministic JSON (no timing or host data).
std::string report_json(const ExperimentReport& report);
ExperimentReport parse_report(const std::string& json);

// Builds scenarios, trains each objective on the training inliers, scores the
// test sets and runs the requested diagnostics. Writes into cfg.output:
// manifests/, scores/, history/, report.json, cells.csv, diagnostics.csv,
// aggregate.csv and runtime.json. On failure the outputs written so far are
// kept, report.json records the error, and the exception is rethrown.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// AUROC of every cell recomputed from its persisted score file.
std::vector<double> recompute_cells(const ExperimentReport& report, const std::filesystem::path& output_dir);

struct AggregateRow {
    std::string objective;
    std::string group_by;  // all | anomaly_kind | n | contamination
    std::string group;
    std::size_t cells = 0;
    double mean = 0.0;
    double median = 0.0;
};

std::vector<AggregateRow> aggregate(std::span<const ExperimentReport> reports);

// Columns objective,scenario,anomaly_kind,n,contamination,auroc.
std::string cells_csv(std::span<const ExperimentReport> reports);
// Columns scenario,objective,probe_accuracy,brittleness_log_ratio,auroc.
std::string diagnostics_csv(const ExperimentReport& report);
std::string aggregate_csv(const std::vector<AggregateRow>& rows);

std::string format_double(double v);

} // namespace textad
