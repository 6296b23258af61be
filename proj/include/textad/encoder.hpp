#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "textad/checkpoint.hpp"
#include "textad/tensor.hpp"
#include "textad/text.hpp"

namespace textad {

enum class AttentionMode { Bidirectional, Causal };

std::string to_string(AttentionMode m);
AttentionMode attention_mode_from_string(const std::string& s);

struct EncoderConfig {
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t model_dim = 64;
    std::size_t ff_dim = 256;
    std::size_t vocab_size = 0;
    std::size_t max_len = 128;
    double dropout_p = 0.1;
    AttentionMode attention_mode = AttentionMode::Bidirectional;
    bool use_positional = true;
    bool tied_output = true;
    bool projection_head = false;  // extra tanh layer on pooled sentence embeddings

    std::size_t head_dim() const { return model_dim / num_heads; }
    void validate() const;  // throws std::invalid_argument

    std::string to_json() const;
    static EncoderConfig from_json(const std::string& text);
    bool operator==(const EncoderConfig&) const = default;
};

class EncoderModel {
public:
    // Weights ~ N(0, 0.02^2), biases 0, layer-norm gains 1.
    static EncoderModel init(const EncoderConfig& cfg, std::uint64_t seed);
    static EncoderModel from_checkpoint(const Checkpoint& ckpt);
    static EncoderModel load(const std::filesystem::path& path);

    const EncoderConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    const Tensor& param(const std::string& name) const { return params_.get(name); }

    // Same parameters under a different attention mode (e.g. causal fine-tuning
    // of a bidirectionally pre-trained model).
    EncoderModel with_attention_mode(AttentionMode mode) const;

    Checkpoint to_checkpoint() const;
    void save(const std::filesystem::path& path) const;

private:
    EncoderConfig config_;
    ParameterSet params_;
};

struct ForwardOptions {
    bool train = false;             // enables dropout
    std::uint64_t dropout_seed = 0;
    double dropout_override = -1.0; // >= 0 replaces config dropout_p
    bool trim_padding = true;       // drop trailing all-PAD columns of the batch
    std::vector<Tensor>* attention_out = nullptr;  // receives [B*H,T,T] weights per layer
};

// Row layout used by every batched forward: row b*seq_len + t.
struct BatchLayout {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<std::size_t> lengths;
    std::vector<std::size_t> ids;

    std::size_t row(std::size_t b, std::size_t t) const { return b * seq_len + t; }
};

BatchLayout make_layout(std::span<const TokenSequence> seqs, bool trim_padding);

// Token-embedding rows [B*T, d] for the layout (no positional part).
Tensor lookup_token_embeddings(Tape& tape, const EncoderModel& model, const BatchLayout& layout);

// Final-layer, layer-normed hidden states [B*T, d]. If token_embeddings is
// given it replaces the lookup (used for input-space gradients).
Tensor encode_batch(Tape& tape, const EncoderModel& model, const BatchLayout& layout, const ForwardOptions& opts,
                    const Tensor* token_embeddings = nullptr);

// Single sequence, full max_len rows, value-only.
Tensor encode(const EncoderModel& model, const TokenSequence& seq, bool train_mode, std::uint64_t dropout_seed);

// Vocabulary logits [n, V] for hidden rows [n, d].
Tensor output_logits(Tape& tape, const EncoderModel& model, const Tensor& hidden_rows);

// Mean of hidden rows at non-PAD positions, [B, d]. Throws on length 0.
Tensor mean_pool(Tape& tape, const Tensor& hidden, const BatchLayout& layout);
std::vector<double> mean_pool(const Tensor& hidden, const TokenSequence& seq);

// Pooled (and optionally projected) sentence embeddings [B, d].
Tensor sentence_embeddings(Tape& tape, const EncoderModel& model, const Tensor& hidden, const BatchLayout& layout);

// Value-only pooled final-layer embeddings in eval mode, one per sequence.
std::vector<std::vector<double>> extract_embeddings(const EncoderModel& model, std::span<const TokenSequence> seqs,
                                                    std::size_t batch_size = 64);

} // namespace textad
