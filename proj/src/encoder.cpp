#include "textad/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "textad/rng.hpp"

namespace textad {

std::string to_string(AttentionMode m) {
    return m == AttentionMode::Causal ? "causal" : "bidirectional";
}

AttentionMode attention_mode_from_string(const std::string& s) {
    if (s == "causal") return AttentionMode::Causal;
    if (s == "bidirectional") return AttentionMode::Bidirectional;
    throw std::invalid_argument("unknown attention mode: " + s);
}

void EncoderConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("EncoderConfig: " + msg); };
    if (num_layers == 0) fail("num_layers must be >= 1");
    if (num_heads == 0) fail("num_heads must be >= 1");
    if (model_dim == 0 || model_dim % num_heads != 0) {
        fail("model_dim " + std::to_string(model_dim) + " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (ff_dim == 0) fail("ff_dim must be >= 1");
    if (vocab_size <= kNumSpecial) fail("vocab_size must exceed the special-token block");
    if (max_len == 0) fail("max_len must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0,1)");
}

std::string EncoderConfig::to_json() const {
    nlohmann::json j{{"num_layers", num_layers},   {"num_heads", num_heads},
                     {"model_dim", model_dim},     {"ff_dim", ff_dim},
                     {"vocab_size", vocab_size},   {"max_len", max_len},
                     {"dropout_p", dropout_p},     {"attention_mode", textad::to_string(attention_mode)},
                     {"use_positional", use_positional}, {"tied_output", tied_output},
                     {"projection_head", projection_head}};
    return j.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    EncoderConfig c;
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.model_dim = j.at("model_dim").get<std::size_t>();
    c.ff_dim = j.at("ff_dim").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.dropout_p = j.at("dropout_p").get<double>();
    c.attention_mode = attention_mode_from_string(j.at("attention_mode").get<std::string>());
    c.use_positional = j.at("use_positional").get<bool>();
    c.tied_output = j.at("tied_output").get<bool>();
    c.projection_head = j.value("projection_head", false);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Construction

namespace {

std::string layer_name(std::size_t l, const char* suffix) {
    return "layer" + std::to_string(l) + "." + suffix;
}

} // namespace

EncoderModel EncoderModel::init(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    EncoderModel m;
    m.config_ = cfg;
    Rng rng(seed);
    auto normal = [&](Shape s) {
        std::vector<double> v(shape_numel(s));
        for (auto& x : v) x = 0.02 * rng.normal();
        return Tensor::from(std::move(s), std::move(v), true);
    };
    auto zeros = [](Shape s) { return Tensor::zeros(std::move(s), true); };
    auto ones = [](Shape s) { return Tensor::filled(std::move(s), 1.0, true); };

    const std::size_t d = cfg.model_dim, f = cfg.ff_dim, V = cfg.vocab_size;
    auto& p = m.params_;
    p.add("embed.token", normal({V, d}));
    if (cfg.use_positional) p.add("embed.position", normal({cfg.max_len, d}));
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        p.add(layer_name(l, "ln1.gamma"), ones({d}));
        p.add(layer_name(l, "ln1.beta"), zeros({d}));
        for (const char* w : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
            p.add(layer_name(l, (std::string(w) + ".weight").c_str()), normal({d, d}));
            p.add(layer_name(l, (std::string(w) + ".bias").c_str()), zeros({d}));
        }
        p.add(layer_name(l, "ln2.gamma"), ones({d}));
        p.add(layer_name(l, "ln2.beta"), zeros({d}));
        p.add(layer_name(l, "ff.in.weight"), normal({d, f}));
        p.add(layer_name(l, "ff.in.bias"), zeros({f}));
        p.add(layer_name(l, "ff.out.weight"), normal({f, d}));
        p.add(layer_name(l, "ff.out.bias"), zeros({d}));
    }
    p.add("final_ln.gamma", ones({d}));
    p.add("final_ln.beta", zeros({d}));
    if (!cfg.tied_output) p.add("head.weight", normal({V, d}));
    p.add("head.bias", zeros({V}));
    if (cfg.projection_head) {
        p.add("proj.weight", normal({d, d}));
        p.add("proj.bias", zeros({d}));
    }
    return m;
}

EncoderModel EncoderModel::with_attention_mode(AttentionMode mode) const {
    EncoderModel m = *this;
    m.config_.attention_mode = mode;
    return m;
}

Checkpoint EncoderModel::to_checkpoint() const {
    return Checkpoint{config_.to_json(), params_};
}

EncoderModel EncoderModel::from_checkpoint(const Checkpoint& ckpt) {
    EncoderModel m = init(EncoderConfig::from_json(ckpt.metadata), 0);
    for (auto& e : m.params_.entries()) {
        if (!ckpt.parameters.contains(e.name)) throw std::runtime_error("checkpoint missing parameter " + e.name);
        const auto& src = ckpt.parameters.get(e.name);
        if (src.shape() != e.tensor.shape()) {
            throw std::runtime_error("checkpoint parameter " + e.name + " has shape " + shape_str(src.shape()) +
                                     ", expected " + shape_str(e.tensor.shape()));
        }
        std::copy(src.data().begin(), src.data().end(), e.tensor.data().begin());
    }
    if (ckpt.parameters.size() != m.params_.size()) throw std::runtime_error("checkpoint has unexpected parameters");
    return m;
}

void EncoderModel::save(const std::filesystem::path& path) const {
    save_checkpoint(path, to_checkpoint());
}

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
    return from_checkpoint(load_checkpoint(path));
}

// ---------------------------------------------------------------------------
// Forward

BatchLayout make_layout(std::span<const TokenSequence> seqs, bool trim_padding) {
    if (seqs.empty()) throw std::invalid_argument("empty batch");
    BatchLayout L;
    L.batch = seqs.size();
    const std::size_t full = seqs[0].max_len();
    std::size_t longest = 0;
    for (const auto& s : seqs) {
        if (s.max_len() != full) throw ShapeError("batch sequences must share max_len");
        if (s.length == 0) throw std::invalid_argument("cannot encode a sequence of length 0");
        longest = std::max(longest, s.length);
    }
    L.seq_len = trim_padding ? longest : full;
    L.ids.reserve(L.batch * L.seq_len);
    for (const auto& s : seqs) {
        L.lengths.push_back(s.length);
        L.ids.insert(L.ids.end(), s.ids.begin(), s.ids.begin() + static_cast<std::ptrdiff_t>(L.seq_len));
    }
    return L;
}

Tensor lookup_token_embeddings(Tape& tape, const EncoderModel& model, const BatchLayout& layout) {
    return tape.embedding(model.param("embed.token"), layout.ids);
}

namespace {

enum DropSite : std::uint64_t { kDropEmbed = 0, kDropAttnProb = 1, kDropAttnOut = 2, kDropFf = 3 };

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    return tape.add_bias(tape.matmul(x, w), b);
}

Tensor attention_mask(const BatchLayout& L, std::size_t heads, bool causal) {
    const std::size_t T = L.seq_len;
    Tensor mask = Tensor::zeros({L.batch * heads, T, T});
    auto m = mask.data();
    const double neg = -std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < L.batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* blk = m.data() + (b * heads + h) * T * T;
            for (std::size_t i = 0; i < T; ++i) {
                for (std::size_t j = 0; j < T; ++j) {
                    const bool allowed = j < L.lengths[b] && (!causal || j <= i);
                    blk[i * T + j] = allowed ? 0.0 : neg;
                }
            }
        }
    }
    return mask;
}

} // namespace

Tensor encode_batch(Tape& tape, const EncoderModel& model, const BatchLayout& L, const ForwardOptions& opts,
                    const Tensor* token_embeddings) {
    const auto& cfg = model.config();
    const std::size_t B = L.batch, T = L.seq_len, d = cfg.model_dim, H = cfg.num_heads, dh = cfg.head_dim();
    if (T > cfg.max_len) throw ShapeError("sequence longer than model max_len");
    for (auto id : L.ids) {
        if (id >= cfg.vocab_size) throw ShapeError("token id " + std::to_string(id) + " >= vocab_size");
    }
    const double p = opts.train ? (opts.dropout_override >= 0.0 ? opts.dropout_override : cfg.dropout_p) : 0.0;
    auto drop = [&](const Tensor& x, std::uint64_t layer, std::uint64_t site) {
        return tape.dropout(x, p, mix_seed(opts.dropout_seed, layer, site));
    };

    Tensor x;
    if (token_embeddings) {
        if (token_embeddings->shape() != Shape{B * T, d}) {
            throw ShapeError("token embedding override has shape " + shape_str(token_embeddings->shape()) +
                             ", expected " + shape_str({B * T, d}));
        }
        x = *token_embeddings;
    } else {
        x = lookup_token_embeddings(tape, model, L);
    }
    if (cfg.use_positional) {
        std::vector<std::size_t> pos(B * T);
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i % T;
        x = tape.add(x, tape.embedding(model.param("embed.position"), pos));
    }
    x = drop(x, cfg.num_layers, kDropEmbed);

    const Tensor mask = attention_mask(L, H, cfg.attention_mode == AttentionMode::Causal);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    auto split_heads = [&](const Tensor& t) {
        Tensor r = tape.reshape(t, {B, T, H, dh});
        r = tape.transpose(r, 1, 2);
        return tape.reshape(r, {B * H, T, dh});
    };

    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        auto P = [&](const char* s) -> const Tensor& { return model.param(layer_name(l, s)); };

        Tensor h = tape.layer_norm(x, P("ln1.gamma"), P("ln1.beta"));
        Tensor q = split_heads(linear(tape, h, P("attn.q.weight"), P("attn.q.bias")));
        Tensor k = split_heads(linear(tape, h, P("attn.k.weight"), P("attn.k.bias")));
        Tensor v = split_heads(linear(tape, h, P("attn.v.weight"), P("attn.v.bias")));
        Tensor scores = tape.add(tape.scale(tape.matmul(q, k, true), inv_sqrt), mask);
        Tensor probs = tape.softmax(scores);
        if (opts.attention_out) opts.attention_out->push_back(probs);
        probs = drop(probs, l, kDropAttnProb);
        Tensor ctx = tape.matmul(probs, v);                 // [B*H, T, dh]
        ctx = tape.transpose(tape.reshape(ctx, {B, H, T, dh}), 1, 2);
        ctx = tape.reshape(ctx, {B * T, d});
        Tensor attn = drop(linear(tape, ctx, P("attn.o.weight"), P("attn.o.bias")), l, kDropAttnOut);
        x = tape.add(x, attn);

        h = tape.layer_norm(x, P("ln2.gamma"), P("ln2.beta"));
        Tensor ff = tape.gelu(linear(tape, h, P("ff.in.weight"), P("ff.in.bias")));
        ff = drop(linear(tape, ff, P("ff.out.weight"), P("ff.out.bias")), l, kDropFf);
        x = tape.add(x, ff);
    }
    return tape.layer_norm(x, model.param("final_ln.gamma"), model.param("final_ln.beta"));
}

Tensor encode(const EncoderModel& model, const TokenSequence& seq, bool train_mode, std::uint64_t dropout_seed) {
    Tape tape(false);
    const auto layout = make_layout(std::span(&seq, 1), false);
    ForwardOptions opts;
    opts.train = train_mode;
    opts.dropout_seed = dropout_seed;
    opts.trim_padding = false;
    return encode_batch(tape, model, layout, opts);
}

Tensor output_logits(Tape& tape, const EncoderModel& model, const Tensor& hidden_rows) {
    const Tensor& w = model.config().tied_output ? model.param("embed.token") : model.param("head.weight");
    return tape.add_bias(tape.matmul(hidden_rows, w, true), model.param("head.bias"));
}

Tensor mean_pool(Tape& tape, const Tensor& hidden, const BatchLayout& L) {
    if (hidden.rank() != 2 || hidden.dim(0) != L.batch * L.seq_len) {
        throw ShapeError("mean_pool: hidden " + shape_str(hidden.shape()) + " does not match batch layout");
    }
    Tensor pool = Tensor::zeros({L.batch, L.batch * L.seq_len});
    auto pv = pool.data();
    for (std::size_t b = 0; b < L.batch; ++b) {
        if (L.lengths[b] == 0) throw std::invalid_argument("mean_pool: sequence of length 0");
        const double w = 1.0 / static_cast<double>(L.lengths[b]);
        for (std::size_t t = 0; t < L.lengths[b]; ++t) pv[b * L.batch * L.seq_len + L.row(b, t)] = w;
    }
    return tape.matmul(pool, hidden);
}

std::vector<double> mean_pool(const Tensor& hidden, const TokenSequence& seq) {
    if (seq.length == 0) throw std::invalid_argument("mean_pool: sequence of length 0");
    if (hidden.rank() != 2 || hidden.dim(0) < seq.length) throw ShapeError("mean_pool: hidden too short");
    const std::size_t d = hidden.dim(1);
    std::vector<double> out(d, 0.0);
    auto h = hidden.data();
    for (std::size_t t = 0; t < seq.length; ++t) {
        for (std::size_t j = 0; j < d; ++j) out[j] += h[t * d + j];
    }
    for (auto& v : out) v /= static_cast<double>(seq.length);
    return out;
}

Tensor sentence_embeddings(Tape& tape, const EncoderModel& model, const Tensor& hidden, const BatchLayout& layout) {
    Tensor pooled = mean_pool(tape, hidden, layout);
    if (model.config().projection_head) {
        pooled = tape.tanh(linear(tape, pooled, model.param("proj.weight"), model.param("proj.bias")));
    }
    return pooled;
}

std::vector<std::vector<double>> extract_embeddings(const EncoderModel& model, std::span<const TokenSequence> seqs,
                                                    std::size_t batch_size) {
    std::vector<std::vector<double>> out;
    out.reserve(seqs.size());
    const std::size_t d = model.config().model_dim;
    for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
        const auto chunk = seqs.subspan(start, std::min(batch_size, seqs.size() - start));
        Tape tape(false);
        const auto layout = make_layout(chunk, true);
        Tensor pooled = mean_pool(tape, encode_batch(tape, model, layout, {}), layout);
        auto v = pooled.data();
        for (std::size_t b = 0; b < chunk.size(); ++b) out.emplace_back(v.begin() + b * d, v.begin() + (b + 1) * d);
    }
    return out;
}

} // namespace textad
