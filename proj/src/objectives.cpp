#include "textad/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "textad/rng.hpp"

namespace textad {

void MaskingPolicy::validate() const {
    if (!(mask_fraction > 0.0 && mask_fraction < 1.0)) throw std::invalid_argument("mask_fraction must be in (0,1)");
    if (num_draws == 0) throw std::invalid_argument("num_draws must be >= 1");
}

void ContrastiveConfig::validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("contrastive dropout_p must be in [0,1)");
    if (reference_batch_size == 0) throw std::invalid_argument("reference_batch_size must be >= 1");
}

std::vector<std::size_t> mask_positions(std::size_t length, double fraction, std::uint64_t key) {
    if (length == 0) return {};
    auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(length)));
    count = std::clamp<std::size_t>(count, 1, length);
    std::vector<std::size_t> idx(length);
    for (std::size_t i = 0; i < length; ++i) idx[i] = i;
    Rng rng(key);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.uniform_index(length - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

MaskedBatch apply_masking(std::span<const TokenSequence> batch, std::span<const std::uint64_t> keys,
                          const MaskingPolicy& policy, std::size_t draw, std::size_t vocab_size,
                          std::size_t seq_len) {
    if (keys.size() != batch.size()) throw std::invalid_argument("apply_masking: one key per sequence required");
    MaskedBatch mb;
    mb.inputs.assign(batch.begin(), batch.end());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::uint64_t key = mix_seed(policy.seed, keys[i], draw);
        for (auto pos : mask_positions(batch[i].length, policy.mask_fraction, key)) {
            auto& id = mb.inputs[i].ids[pos];
            mb.rows.push_back(i * seq_len + pos);
            mb.targets.push_back(id);
            mb.owner.push_back(i);
            if (!policy.bert_mix) {
                id = kMask;
                continue;
            }
            const double u = counter_uniform(mix_seed(key, pos, 0xB347));
            if (u < 0.8) {
                id = kMask;
            } else if (u < 0.9) {
                const std::size_t regular = vocab_size - kNumSpecial;
                id = kNumSpecial + static_cast<std::size_t>(splitmix64(mix_seed(key, pos, 0x5EED)) % regular);
            }
        }
    }
    return mb;
}

namespace {

std::vector<TokenSequence> non_empty(std::span<const TokenSequence> batch, std::size_t min_length,
                                     const char* what) {
    std::vector<TokenSequence> kept;
    std::size_t skipped = 0;
    for (const auto& s : batch) {
        if (s.length >= min_length) {
            kept.push_back(s);
        } else {
            ++skipped;
        }
    }
    if (skipped) std::clog << "warning: " << what << ": skipped " << skipped << " too-short sequence(s)\n";
    if (kept.empty()) throw std::invalid_argument(std::string(what) + ": no usable sequences in batch");
    return kept;
}

std::size_t trimmed_length(std::span<const TokenSequence> batch) {
    std::size_t t = 0;
    for (const auto& s : batch) t = std::max(t, s.length);
    return t;
}

// Weighted sum of per-position losses; weights are constants.
Tensor weighted_sum(Tape& tape, const Tensor& per_position, std::vector<double> weights) {
    const std::size_t n = weights.size();
    return tape.sum(tape.mul(per_position, Tensor::from({n}, std::move(weights))));
}

} // namespace

// ---------------------------------------------------------------------------
// MLM

Tensor mlm_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                std::span<const std::uint64_t> keys, const MaskingPolicy& policy, std::size_t draw,
                const ForwardOptions& fwd) {
    if (batch.empty()) throw std::invalid_argument("mlm_loss: empty batch");
    std::vector<TokenSequence> seqs;
    std::vector<std::uint64_t> kept_keys;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        if (batch[i].length == 0) continue;
        seqs.push_back(batch[i]);
        kept_keys.push_back(keys[i]);
    }
    if (seqs.size() != batch.size()) {
        std::clog << "warning: mlm_loss: skipped " << batch.size() - seqs.size() << " empty sequence(s)\n";
    }
    if (seqs.empty()) throw std::invalid_argument("mlm_loss: no non-empty sequences");
    const std::size_t seq_len = fwd.trim_padding ? trimmed_length(seqs) : seqs[0].max_len();
    MaskedBatch mb = apply_masking(seqs, kept_keys, policy, draw, model.config().vocab_size, seq_len);
    const auto layout = make_layout(mb.inputs, fwd.trim_padding);
    Tensor hidden = encode_batch(tape, model, layout, fwd);
    Tensor logits = output_logits(tape, model, tape.gather_rows(hidden, mb.rows));
    return tape.softmax_cross_entropy(logits, mb.targets).loss;
}

Tensor MlmObjective::batch_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                                std::uint64_t step_seed, bool train) const {
    std::vector<std::uint64_t> keys(batch.size());
    for (std::size_t i = 0; i < keys.size(); ++i) keys[i] = mix_seed(step_seed, i);
    ForwardOptions fwd;
    fwd.train = train;
    fwd.dropout_seed = mix_seed(step_seed, 0xD50);
    return mlm_loss(tape, model, batch, keys, policy_, 0, fwd);
}

Tensor MlmObjective::example_loss(Tape& tape, const EncoderModel& model, const TokenSequence& seq,
                                  std::uint64_t key, const Tensor* token_embeddings) const {
    if (seq.length == 0) throw std::invalid_argument("mlm_score: sequence of length 0");
    const std::size_t k = policy_.num_draws;
    const std::size_t T = seq.length;
    std::vector<TokenSequence> copies(k, seq);
    MaskedBatch all;
    for (std::size_t d = 0; d < k; ++d) {
        const std::uint64_t one_key[] = {key};
        MaskedBatch mb = apply_masking(std::span(&seq, 1), one_key, policy_, d, model.config().vocab_size, T);
        copies[d] = mb.inputs[0];
        for (std::size_t i = 0; i < mb.rows.size(); ++i) {
            all.rows.push_back(d * T + mb.rows[i]);
            all.targets.push_back(mb.targets[i]);
            all.owner.push_back(d);
        }
    }
    const auto layout = make_layout(copies, true);

    Tensor override_rows;
    if (token_embeddings) {
        // Unmasked positions read from the supplied rows; replaced positions
        // read the embedding of their replacement token.
        if (token_embeddings->shape() != Shape{T, model.config().model_dim}) {
            throw ShapeError("mlm example_loss: token embedding override must be [length, d]");
        }
        std::vector<std::size_t> replacement_ids, gather(k * T);
        for (std::size_t d = 0; d < k; ++d) {
            for (std::size_t t = 0; t < T; ++t) {
                if (copies[d].ids[t] == seq.ids[t]) {
                    gather[d * T + t] = t;
                } else {
                    gather[d * T + t] = T + replacement_ids.size();
                    replacement_ids.push_back(copies[d].ids[t]);
                }
            }
        }
        std::vector<Tensor> parts{*token_embeddings};
        if (!replacement_ids.empty()) parts.push_back(tape.embedding(model.param("embed.token"), replacement_ids));
        override_rows = tape.gather_rows(tape.concat_rows(parts), gather);
    }

    Tensor hidden = encode_batch(tape, model, layout, {}, token_embeddings ? &override_rows : nullptr);
    Tensor per = tape.cross_entropy(output_logits(tape, model, tape.gather_rows(hidden, all.rows)), all.targets);
    std::vector<std::size_t> per_draw(k, 0);
    for (auto o : all.owner) ++per_draw[o];
    std::vector<double> w(all.owner.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = 1.0 / (static_cast<double>(k) * static_cast<double>(per_draw[all.owner[i]]));
    }
    return weighted_sum(tape, per, std::move(w));
}

double MlmObjective::draw_loss(const EncoderModel& model, const TokenSequence& seq, std::uint64_t key,
                               std::size_t draw) const {
    Tape tape(false);
    const std::uint64_t keys[] = {key};
    return mlm_loss(tape, model, std::span(&seq, 1), keys, policy_, draw, {}).item();
}

// ---------------------------------------------------------------------------
// CLM

Tensor clm_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                const ForwardOptions& fwd, const Tensor* token_embeddings) {
    if (model.config().attention_mode != AttentionMode::Causal) {
        throw std::invalid_argument("clm_loss requires a causal-attention model");
    }
    if (batch.empty()) throw std::invalid_argument("clm_loss: empty batch");
    std::vector<TokenSequence> seqs;
    if (token_embeddings) {
        seqs.assign(batch.begin(), batch.end());  // caller's rows match the full batch
    } else {
        seqs = non_empty(batch, 2, "clm_loss");
    }
    const auto layout = make_layout(seqs, fwd.trim_padding);
    std::vector<std::size_t> rows, targets;
    for (std::size_t b = 0; b < seqs.size(); ++b) {
        for (std::size_t t = 0; t + 1 < seqs[b].length; ++t) {
            rows.push_back(layout.row(b, t));
            targets.push_back(seqs[b].ids[t + 1]);
        }
    }
    if (rows.empty()) throw std::invalid_argument("clm_loss: no next-token targets");
    Tensor hidden = encode_batch(tape, model, layout, fwd, token_embeddings);
    Tensor logits = output_logits(tape, model, tape.gather_rows(hidden, rows));
    return tape.softmax_cross_entropy(logits, targets).loss;
}

void ClmObjective::check_model(const EncoderModel& model) const {
    if (model.config().attention_mode != AttentionMode::Causal) {
        throw std::invalid_argument("CLM objective requires attention_mode=causal");
    }
}

Tensor ClmObjective::batch_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                                std::uint64_t step_seed, bool train) const {
    ForwardOptions fwd;
    fwd.train = train;
    fwd.dropout_seed = mix_seed(step_seed, 0xD51);
    return clm_loss(tape, model, batch, fwd);
}

Tensor ClmObjective::example_loss(Tape& tape, const EncoderModel& model, const TokenSequence& seq, std::uint64_t,
                                  const Tensor* token_embeddings) const {
    if (seq.length < 2) throw std::invalid_argument("clm: sequence needs BOS plus at least one token");
    return clm_loss(tape, model, std::span(&seq, 1), {}, token_embeddings);
}

double ClmObjective::score(const EncoderModel& model, const TokenSequence& seq, std::uint64_t key) const {
    Tape tape(false);
    return std::exp(example_loss(tape, model, seq, key).item());
}

// ---------------------------------------------------------------------------
// Contrastive

Tensor ntxent_from_embeddings(Tape& tape, const Tensor& anchors, const Tensor& candidates, double temperature) {
    if (anchors.rank() != 2 || candidates.rank() != 2 || anchors.dim(1) != candidates.dim(1) ||
        anchors.dim(0) > candidates.dim(0)) {
        throw ShapeError("ntxent: anchors " + shape_str(anchors.shape()) + " vs candidates " +
                         shape_str(candidates.shape()));
    }
    Tensor a = tape.l2_normalize_rows(anchors);
    Tensor c = tape.l2_normalize_rows(candidates);
    Tensor sims = tape.scale(tape.matmul(a, c, true), 1.0 / temperature);
    std::vector<std::size_t> targets(anchors.dim(0));
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = i;
    return tape.softmax_cross_entropy(sims, targets).loss;
}

namespace {

Tensor dropout_view(Tape& tape, const EncoderModel& model, const BatchLayout& layout, double p, std::uint64_t seed,
                    const Tensor* token_embeddings = nullptr) {
    ForwardOptions fwd;
    fwd.train = true;
    fwd.dropout_seed = seed;
    fwd.dropout_override = p;
    return sentence_embeddings(tape, model, encode_batch(tape, model, layout, fwd, token_embeddings), layout);
}

} // namespace

Tensor ntxent_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                   const ContrastiveConfig& cfg, std::uint64_t step_seed) {
    const auto seqs = non_empty(batch, 1, "ntxent_loss");
    if (seqs.size() < 2) throw std::invalid_argument("ntxent_loss needs at least 2 sequences");
    const auto layout = make_layout(seqs, true);
    Tensor v1 = dropout_view(tape, model, layout, cfg.dropout_p, mix_seed(step_seed, 1));
    Tensor v2 = dropout_view(tape, model, layout, cfg.dropout_p, mix_seed(step_seed, 2));
    return ntxent_from_embeddings(tape, v1, v2, cfg.temperature);
}

ReferenceBatch build_reference_batch(const EncoderModel& model, std::span<const TokenSequence> inliers,
                                     const ContrastiveConfig& cfg) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < inliers.size(); ++i) {
        if (inliers[i].length > 0) idx.push_back(i);
    }
    if (idx.empty()) throw std::invalid_argument("reference batch is empty");
    Rng rng(mix_seed(cfg.reference_seed, 0x2EF));
    rng.shuffle(idx);
    idx.resize(std::min(idx.size(), cfg.reference_batch_size));
    std::sort(idx.begin(), idx.end());
    std::vector<TokenSequence> chosen;
    for (auto i : idx) chosen.push_back(inliers[i]);

    Tape tape(false);
    const auto layout = make_layout(chosen, true);
    Tensor views = tape.l2_normalize_rows(
        dropout_view(tape, model, layout, cfg.dropout_p, mix_seed(cfg.reference_seed, 0x2EF, 1)));
    return ReferenceBatch{views, cfg.temperature, cfg.dropout_p, cfg.reference_seed};
}

Tensor ContrastiveObjective::batch_loss(Tape& tape, const EncoderModel& model, std::span<const TokenSequence> batch,
                                        std::uint64_t step_seed, bool) const {
    return ntxent_loss(tape, model, batch, cfg_, step_seed);
}

double ContrastiveObjective::validation_loss(const EncoderModel& model, std::span<const TokenSequence> val,
                                             std::uint64_t seed) const {
    if (val.size() < 2) throw std::invalid_argument("contrastive validation needs at least 2 sequences");
    const std::size_t n = std::max<std::size_t>(2, cfg_.reference_batch_size);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < val.size();) {
        std::size_t len = std::min(n, val.size() - start);
        if (val.size() - (start + len) == 1) ++len;  // never leave a singleton chunk
        Tape tape(false);
        total += ntxent_loss(tape, model, val.subspan(start, len), cfg_, mix_seed(seed, start)).item() *
                 static_cast<double>(len);
        count += len;
        start += len;
    }
    return total / static_cast<double>(count);
}

void ContrastiveObjective::prepare_scoring(const EncoderModel& model, std::span<const TokenSequence> train_inliers) {
    reference_ = build_reference_batch(model, train_inliers, cfg_);
}

Tensor ContrastiveObjective::example_views(Tape& tape, const EncoderModel& model, const TokenSequence& seq,
                                           std::uint64_t key, const Tensor* token_embeddings) const {
    if (!reference_) throw std::logic_error("ntxent_score: reference batch not prepared");
    if (seq.length == 0) throw std::invalid_argument("ntxent_score: sequence of length 0");
    const auto layout = make_layout(std::span(&seq, 1), true);
    const std::uint64_t base = mix_seed(reference_->seed, key, 0x7E57);
    Tensor a = dropout_view(tape, model, layout, reference_->dropout_p, mix_seed(base, 1), token_embeddings);
    Tensor b = dropout_view(tape, model, layout, reference_->dropout_p, mix_seed(base, 2), token_embeddings);
    const Tensor parts[] = {a, b};
    return tape.l2_normalize_rows(tape.concat_rows(parts));
}

Tensor ContrastiveObjective::example_loss(Tape& tape, const EncoderModel& model, const TokenSequence& seq,
                                          std::uint64_t key, const Tensor* token_embeddings) const {
    Tensor views = example_views(tape, model, seq, key, token_embeddings);
    const std::size_t first[] = {0}, second[] = {1};
    Tensor anchor = tape.gather_rows(views, first);
    const Tensor parts[] = {tape.gather_rows(views, second), reference_->views};
    Tensor candidates = tape.concat_rows(parts);
    return ntxent_from_embeddings(tape, anchor, candidates, reference_->temperature);
}

// ---------------------------------------------------------------------------
// Shared

double Objective::validation_loss(const EncoderModel& model, std::span<const TokenSequence> val,
                                  std::uint64_t seed) const {
    if (val.empty()) throw std::invalid_argument("validation set is empty");
    constexpr std::size_t kChunk = 64;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < val.size(); start += kChunk) {
        const auto chunk = val.subspan(start, std::min(kChunk, val.size() - start));
        Tape tape(false);
        total += batch_loss(tape, model, chunk, mix_seed(seed, start), false).item() *
                 static_cast<double>(chunk.size());
        count += chunk.size();
    }
    return total / static_cast<double>(count);
}

double Objective::score(const EncoderModel& model, const TokenSequence& seq, std::uint64_t key) const {
    Tape tape(false);
    return example_loss(tape, model, seq, key).item();
}

AnomalyScore score_example(const Objective& objective, const EncoderModel& model, const std::string& id,
                           const TokenSequence& seq) {
    return AnomalyScore{id, objective.name(), objective.score(model, seq, hash_string(id))};
}

AnomalyScore pretrained_baseline_score(const EncoderModel& generic, const std::string& id, const TokenSequence& seq,
                                       const MaskingPolicy& policy) {
    MlmObjective mlm(policy);
    return AnomalyScore{id, "pretrained", mlm.score(generic, seq, hash_string(id))};
}

std::unique_ptr<Objective> make_objective(const std::string& name, const MaskingPolicy& masking,
                                          const ContrastiveConfig& contrastive) {
    if (name == "mlm" || name == "pretrained") return std::make_unique<MlmObjective>(masking);
    if (name == "clm") return std::make_unique<ClmObjective>();
    if (name == "simcse") return std::make_unique<ContrastiveObjective>(contrastive);
    throw std::invalid_argument("unknown objective: " + name);
}

} // namespace textad
