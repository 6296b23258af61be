#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "textad/encoder.hpp"
#include "textad/tensor.hpp"
#include "textad/text.hpp"

namespace textad {

struct MaskingPolicy {
    double mask_fraction = 0.15;
    std::size_t num_draws = 5;      // inference-time draws averaged per score
    std::uint64_t seed = 0;
    bool bert_mix = false;          // 80% MASK / 10% random / 10% unchanged

    void validate() const;
};

struct ContrastiveConfig {
    double temperature = 0.05;
    double dropout_p = 0.1;
    std::size_t reference_batch_size = 64;
    std::uint64_t reference_seed = 0;

    void validate() const;
};

struct AnomalyScore {
    std::string id;
    std::string objective;
    double score = 0.0;  // higher = more anomalous
};

// Positions of one masking draw for a sequence of `length` real tokens:
// max(1, round(fraction * length)) distinct positions, keyed by `key`.
std::vector<std::size_t> mask_positions(std::size_t length, double fraction, std::uint64_t key);

struct MaskedBatch {
    std::vector<TokenSequence> inputs;
    std::vector<std::size_t> rows;     // row index into the batch layout
    std::vector<std::size_t> targets;  // original ids at those rows
    std::vector<std::size_t> owner;    // batch index of each masked row
};

// Applies one masking draw per sequence; draw keys are mix(policy.seed, keys[i], draw).
MaskedBatch apply_masking(std::span<const TokenSequence> batch, std::span<const std::uint64_t> keys,
                          const MaskingPolicy& policy, std::size_t draw, std::size_t vocab_size,
                          std::size_t seq_len);

// ---------------------------------------------------------------------------
// Loss primitives

// Mean cross-entropy over masked positions of the batch.
Tensor mlm_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                std::span<const std::uint64_t> keys, const MaskingPolicy& policy, std::size_t draw,
                const ForwardOptions& fwd);

// Mean next-token cross-entropy over real positions (inputs BOS-prefixed).
Tensor clm_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                const ForwardOptions& fwd, const Tensor* token_embeddings = nullptr);

// NT-Xent over paired views: row i of `anchors` against every row of
// `candidates`, positive at column i. Both inputs [N, d], unnormalized.
Tensor ntxent_from_embeddings(Tape& tape, const Tensor& anchors, const Tensor& candidates, double temperature);

// Encodes the batch twice with distinct dropout sub-seeds and applies NT-Xent.
Tensor ntxent_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                   const ContrastiveConfig& cfg, std::uint64_t step_seed);

// Cached dropout views of fixed reference inliers, used as negatives at scoring.
struct ReferenceBatch {
    Tensor views;  // [N, d], L2-normalized
    double temperature = 0.05;
    double dropout_p = 0.1;
    std::uint64_t seed = 0;
};

ReferenceBatch build_reference_batch(const EncoderModel& model, std::span<const TokenSequence> inliers,
                                     const ContrastiveConfig& cfg);

// ---------------------------------------------------------------------------
// Objectives

// A self-supervised objective: a training loss over batches and a per-example
// loss used as the anomaly score.
class Objective {
public:
    virtual ~Objective() = default;

    virtual std::string name() const = 0;
    virtual EncodeOptions encode_options() const { return {}; }
    virtual void check_model(const EncoderModel&) const {}

    // Training/validation loss. `train` selects dropout for the LM objectives.
    virtual Tensor batch_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                              std::uint64_t step_seed, bool train) const = 0;

    // Mean loss over the validation set with a fixed seed.
    virtual double validation_loss(const EncoderModel& model, std::span<const TokenSequence> val,
                                   std::uint64_t seed) const;

    // Per-example differentiable loss; `token_embeddings` overrides the
    // embedding lookup ([T, d] rows of the trimmed single-sequence layout).
    virtual Tensor example_loss(Tape& tape, const EncoderModel& model, const TokenSequence& seq,
                                std::uint64_t key, const Tensor* token_embeddings = nullptr) const = 0;

    // Called once on the frozen model before scoring.
    virtual void prepare_scoring(const EncoderModel&, std::span<const TokenSequence> /*train_inliers*/) {}

    virtual double score(const EncoderModel& model, const TokenSequence& seq, std::uint64_t key) const;
};

class MlmObjective : public Objective {
public:
    explicit MlmObjective(MaskingPolicy policy = {}) : policy_(policy) { policy_.validate(); }

    std::string name() const override { return "mlm"; }
    Tensor batch_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                      std::uint64_t step_seed, bool train) const override;
    // Mean over num_draws single-draw losses.
    Tensor example_loss(Tape& tape, const EncoderModel& model, const TokenSequence& seq, std::uint64_t key,
                        const Tensor* token_embeddings = nullptr) const override;
    // Single-example loss of one draw.
    double draw_loss(const EncoderModel& model, const TokenSequence& seq, std::uint64_t key, std::size_t draw) const;

    const MaskingPolicy& policy() const { return policy_; }

private:
    MaskingPolicy policy_;
};

class ClmObjective : public Objective {
public:
    std::string name() const override { return "clm"; }
    EncodeOptions encode_options() const override { return {.prepend_bos = true}; }
    void check_model(const EncoderModel& model) const override;
    Tensor batch_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                      std::uint64_t step_seed, bool train) const override;
    // Mean token NLL (log perplexity).
    Tensor example_loss(Tape& tape, const EncoderModel& model, const TokenSequence& seq, std::uint64_t key,
                        const Tensor* token_embeddings = nullptr) const override;
    // Perplexity.
    double score(const EncoderModel& model, const TokenSequence& seq, std::uint64_t key) const override;
};

class ContrastiveObjective : public Objective {
public:
    explicit ContrastiveObjective(ContrastiveConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    std::string name() const override { return "simcse"; }
    Tensor batch_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                      std::uint64_t step_seed, bool train) const override;
    double validation_loss(const EncoderModel& model, std::span<const TokenSequence> val,
                           std::uint64_t seed) const override;
    // Anchor loss of the example's two views against the cached reference.
    Tensor example_loss(Tape& tape, const EncoderModel& model, const TokenSequence& seq, std::uint64_t key,
                        const Tensor* token_embeddings = nullptr) const override;
    void prepare_scoring(const EncoderModel& model, std::span<const TokenSequence> train_inliers) override;

    void set_reference(ReferenceBatch ref) { reference_ = std::move(ref); }
    const std::optional<ReferenceBatch>& reference() const { return reference_; }
    const ContrastiveConfig& config() const { return cfg_; }

    // The two L2-normalized dropout views of a test example, [2, d].
    Tensor example_views(Tape& tape, const EncoderModel& model, const TokenSequence& seq, std::uint64_t key,
                         const Tensor* token_embeddings = nullptr) const;

private:
    ContrastiveConfig cfg_;
    std::optional<ReferenceBatch> reference_;
};

AnomalyScore score_example(const Objective& objective, const EncoderModel& model, const std::string& id,
                           const TokenSequence& seq);

// MLM scoring on a checkpoint that was never fine-tuned on the scenario.
AnomalyScore pretrained_baseline_score(const EncoderModel& generic, const std::string& id, const TokenSequence& seq,
                                       const MaskingPolicy& policy);

std::unique_ptr<Objective> make_objective(const std::string& name, const MaskingPolicy& masking,
                                          const ContrastiveConfig& contrastive);

} // namespace textad
