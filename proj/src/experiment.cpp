#include "textad/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "textad/corpus.hpp"
#include "textad/rng.hpp"

namespace textad {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Value parsing

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::uint64_t parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("expected an unsigned integer, got \"" + s + "\"");
    return v;
}

double parse_double(const std::string& s) {
    double v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("expected a number, got \"" + s + "\"");
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::invalid_argument("expected a boolean, got \"" + s + "\"");
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += f(v[i]);
    }
    return out;
}

struct Field {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class M>
Field size_field(std::string key, M member) {
    return {std::move(key), [member](ExperimentConfig& c, const std::string& v) { member(c) = parse_u64(v); },
            [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class M>
Field double_field(std::string key, M member) {
    return {std::move(key), [member](ExperimentConfig& c, const std::string& v) { member(c) = parse_double(v); },
            [member](const ExperimentConfig& c) { return format_double(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class M>
Field bool_field(std::string key, M member) {
    return {std::move(key), [member](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(v); },
            [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)) ? "true" : "false"; }};
}

template <class M>
Field path_field(std::string key, M member) {
    return {std::move(key), [member](ExperimentConfig& c, const std::string& v) { member(c) = v; },
            [member](const ExperimentConfig& c) { return member(const_cast<ExperimentConfig&>(c)).string(); }};
}

#define TEXTAD_MEMBER(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        path_field("corpus", TEXTAD_MEMBER(corpus)),
        {"corpus_id", [](ExperimentConfig& c, const std::string& v) { c.corpus_id = v; },
         [](const ExperimentConfig& c) { return c.corpus_id; }},
        {"normality", [](ExperimentConfig& c, const std::string& v) { c.normality.mode = normality_mode_from_string(v); },
         [](const ExperimentConfig& c) { return to_string(c.normality.mode); }},
        {"label", [](ExperimentConfig& c, const std::string& v) { c.normality.label = v; },
         [](const ExperimentConfig& c) { return c.normality.label; }},
        {"anomaly_kinds",
         [](ExperimentConfig& c, const std::string& v) {
             c.anomaly_kinds.clear();
             for (const auto& s : split_list(v)) c.anomaly_kinds.push_back(anomaly_kind_from_string(s));
         },
         [](const ExperimentConfig& c) { return join(c.anomaly_kinds, [](AnomalyKind k) { return to_string(k); }); }},
        {"ngrams",
         [](ExperimentConfig& c, const std::string& v) {
             c.ngrams.clear();
             for (const auto& s : split_list(v)) c.ngrams.push_back(parse_u64(s));
         },
         [](const ExperimentConfig& c) { return join(c.ngrams, [](std::size_t n) { return std::to_string(n); }); }},
        {"objectives", [](ExperimentConfig& c, const std::string& v) { c.objectives = split_list(v); },
         [](const ExperimentConfig& c) { return join(c.objectives, [](const std::string& s) { return s; }); }},
        {"contamination",
         [](ExperimentConfig& c, const std::string& v) {
             c.contamination.clear();
             for (const auto& s : split_list(v)) c.contamination.push_back(parse_double(s));
         },
         [](const ExperimentConfig& c) { return join(c.contamination, format_double); }},
        size_field("contamination_seed", TEXTAD_MEMBER(contamination_seed)),
        double_field("test_fraction", TEXTAD_MEMBER(ratios.test_fraction)),
        double_field("val_fraction", TEXTAD_MEMBER(ratios.val_fraction)),
        size_field("seed", TEXTAD_MEMBER(seed)),
        size_field("model_seed", TEXTAD_MEMBER(model_seed)),
        bool_field("lowercase", TEXTAD_MEMBER(lowercase)),
        bool_field("strip_punctuation", TEXTAD_MEMBER(strip_punctuation)),
        path_field("stopwords", TEXTAD_MEMBER(stopwords)),
        size_field("min_count", TEXTAD_MEMBER(min_count)),
        size_field("layers", TEXTAD_MEMBER(encoder.num_layers)),
        size_field("heads", TEXTAD_MEMBER(encoder.num_heads)),
        size_field("model_dim", TEXTAD_MEMBER(encoder.model_dim)),
        size_field("ff_dim", TEXTAD_MEMBER(encoder.ff_dim)),
        size_field("max_len", TEXTAD_MEMBER(encoder.max_len)),
        double_field("dropout", TEXTAD_MEMBER(encoder.dropout_p)),
        bool_field("positional", TEXTAD_MEMBER(encoder.use_positional)),
        bool_field("tied_output", TEXTAD_MEMBER(encoder.tied_output)),
        bool_field("projection_head", TEXTAD_MEMBER(encoder.projection_head)),
        size_field("max_steps", TEXTAD_MEMBER(train.max_steps)),
        size_field("batch_size", TEXTAD_MEMBER(train.batch_size)),
        double_field("learning_rate", TEXTAD_MEMBER(train.learning_rate)),
        size_field("eval_interval", TEXTAD_MEMBER(train.eval_interval)),
        size_field("patience", TEXTAD_MEMBER(train.patience)),
        size_field("train_seed", TEXTAD_MEMBER(train.seed)),
        double_field("grad_clip", TEXTAD_MEMBER(train.grad_clip)),
        double_field("mask_fraction", TEXTAD_MEMBER(masking.mask_fraction)),
        size_field("mask_draws", TEXTAD_MEMBER(masking.num_draws)),
        size_field("mask_seed", TEXTAD_MEMBER(masking.seed)),
        bool_field("bert_mix", TEXTAD_MEMBER(masking.bert_mix)),
        double_field("temperature", TEXTAD_MEMBER(contrastive.temperature)),
        double_field("contrastive_dropout", TEXTAD_MEMBER(contrastive.dropout_p)),
        size_field("reference_size", TEXTAD_MEMBER(contrastive.reference_batch_size)),
        size_field("reference_seed", TEXTAD_MEMBER(contrastive.reference_seed)),
        path_field("pretrained_checkpoint", TEXTAD_MEMBER(pretrained_checkpoint)),
        path_field("pretrained_vocab", TEXTAD_MEMBER(pretrained_vocab)),
        path_field("pretrain_corpus", TEXTAD_MEMBER(pretrain_corpus)),
        size_field("pretrain_steps", TEXTAD_MEMBER(pretrain_steps)),
        path_field("word_vectors", TEXTAD_MEMBER(word_vectors)),
        double_field("ocsvm_nu", TEXTAD_MEMBER(ocsvm.nu)),
        size_field("ocsvm_steps", TEXTAD_MEMBER(ocsvm.steps)),
        size_field("ocsvm_batch", TEXTAD_MEMBER(ocsvm.batch_size)),
        size_field("ocsvm_seed", TEXTAD_MEMBER(ocsvm.seed)),
        bool_field("probe", TEXTAD_MEMBER(probe)),
        bool_field("brittleness", TEXTAD_MEMBER(brittleness)),
        bool_field("knn", TEXTAD_MEMBER(knn)),
        size_field("knn_k", TEXTAD_MEMBER(knn_k)),
        size_field("probe_folds", TEXTAD_MEMBER(probe_folds)),
        size_field("brittleness_docs", TEXTAD_MEMBER(brittleness_docs)),
        path_field("output", TEXTAD_MEMBER(output)),
        bool_field("save_checkpoints", TEXTAD_MEMBER(save_checkpoints)),
    };
    return f;
}

#undef TEXTAD_MEMBER

const std::vector<std::string> kObjectives{"mlm", "clm", "simcse", "pretrained", "bow"};

bool is_neural(const std::string& objective) { return objective != "bow"; }

} // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

void apply_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (f.key != key) continue;
        try {
            f.set(cfg, trim(value));
        } catch (const std::exception& e) {
            throw std::invalid_argument("config key " + key + ": " + e.what());
        }
        return;
    }
    throw std::invalid_argument("unknown config key: " + key);
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        }
        try {
            apply_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_text(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

void ExperimentConfig::validate() const {
    if (corpus.empty()) throw std::invalid_argument("config: corpus is required");
    if (!fs::exists(corpus)) throw std::invalid_argument("config: corpus " + corpus.string() + " does not exist");
    if (normality.label.empty()) throw std::invalid_argument("config: label is required");
    if (output.empty()) throw std::invalid_argument("config: output is required");
    if (anomaly_kinds.empty()) throw std::invalid_argument("config: anomaly_kinds is empty");
    if (objectives.empty()) throw std::invalid_argument("config: objectives is empty");
    for (const auto& o : objectives) {
        if (std::find(kObjectives.begin(), kObjectives.end(), o) == kObjectives.end()) {
            throw std::invalid_argument("config: unknown objective " + o);
        }
    }
    if (std::find(anomaly_kinds.begin(), anomaly_kinds.end(), AnomalyKind::Syntactic) != anomaly_kinds.end()) {
        if (ngrams.empty()) throw std::invalid_argument("config: syntactic scenarios need ngrams");
        for (auto n : ngrams) {
            if (n == 0) throw std::invalid_argument("config: ngrams must be >= 1");
        }
    }
    if (contamination.empty()) throw std::invalid_argument("config: contamination list is empty");
    for (double r : contamination) {
        if (!(r >= 0.0 && r < 0.5)) throw std::invalid_argument("config: contamination rates must be in [0, 0.5)");
    }
    for (const auto* p : {&stopwords, &pretrained_checkpoint, &pretrained_vocab, &pretrain_corpus, &word_vectors}) {
        if (!p->empty() && !fs::exists(*p)) throw std::invalid_argument("config: " + p->string() + " does not exist");
    }
    if (pretrained_checkpoint.empty() != pretrained_vocab.empty()) {
        throw std::invalid_argument("config: pretrained_checkpoint and pretrained_vocab go together");
    }
    if (!pretrained_checkpoint.empty() && !pretrain_corpus.empty()) {
        throw std::invalid_argument("config: give either pretrained_checkpoint or pretrain_corpus");
    }
    if (std::find(objectives.begin(), objectives.end(), "bow") != objectives.end() && word_vectors.empty()) {
        throw std::invalid_argument("config: objective bow needs word_vectors");
    }
    if (min_count == 0) throw std::invalid_argument("config: min_count must be >= 1");
    train.validate();
    masking.validate();
    contrastive.validate();
    EncoderConfig e = encoder;
    e.vocab_size = kNumSpecial + 1;
    e.validate();
}

// ---------------------------------------------------------------------------
// Scenario plumbing

namespace {

EncodedSet encode_set(const std::vector<ScenarioDocument>& docs, const Vocabulary& vocab, std::size_t max_len,
                      EncodeOptions opts) {
    EncodedSet s;
    for (const auto& d : docs) {
        s.ids.push_back(d.id);
        s.seqs.push_back(encode(d.tokens, vocab, max_len, opts));
    }
    return s;
}

} // namespace

EncodedScenario encode_scenario(const ScenarioSplit& split, const Vocabulary& vocab, std::size_t max_len,
                                EncodeOptions opts) {
    return {encode_set(split.train_inliers, vocab, max_len, opts), encode_set(split.val_inliers, vocab, max_len, opts),
            encode_set(split.test_inliers, vocab, max_len, opts), encode_set(split.test_anomalies, vocab, max_len, opts)};
}

ScoredDataset score_scenario(const Objective& objective, const EncoderModel& model, const EncodedScenario& data) {
    ScoredDataset out;
    out.objective = objective.name();
    for (int anomalous = 0; anomalous < 2; ++anomalous) {
        const auto& set = anomalous ? data.test_anomalies : data.test_inliers;
        for (std::size_t i = 0; i < set.seqs.size(); ++i) {
            out.items.push_back({set.ids[i], score_example(objective, model, set.ids[i], set.seqs[i]).score,
                                 anomalous == 1});
        }
    }
    return out;
}

ScoredDataset bow_scores(const ScenarioSplit& split, const WordVectorTable& table, const OcSvmConfig& cfg) {
    std::vector<std::vector<double>> train;
    for (const auto& d : split.train_inliers) train.push_back(bow_embed(d.tokens, table).vector);
    const auto model = ocsvm_fit(train, cfg);
    ScoredDataset out;
    out.objective = "bow";
    for (int anomalous = 0; anomalous < 2; ++anomalous) {
        for (const auto& d : anomalous ? split.test_anomalies : split.test_inliers) {
            out.items.push_back({d.id, ocsvm_score(model, bow_embed(d.tokens, table).vector), anomalous == 1});
        }
    }
    return out;
}

ScoringComparison compare_scoring_modes(const EncoderModel& model, const Objective& objective,
                                        const EncodedScenario& data, std::size_t k) {
    ScoringComparison c;
    const auto train_emb = extract_embeddings(model, data.train.seqs);
    std::vector<double> in_loss, an_loss, in_knn, an_knn;
    for (int anomalous = 0; anomalous < 2; ++anomalous) {
        const auto& set = anomalous ? data.test_anomalies : data.test_inliers;
        const auto emb = extract_embeddings(model, set.seqs);
        for (std::size_t i = 0; i < set.seqs.size(); ++i) {
            const double loss = score_example(objective, model, set.ids[i], set.seqs[i]).score;
            const double knn = knn_score(emb[i], train_emb, k);
            c.ids.push_back(set.ids[i]);
            c.is_anomaly.push_back(anomalous == 1);
            c.loss_scores.push_back(loss);
            c.knn_scores.push_back(knn);
            (anomalous ? an_loss : in_loss).push_back(loss);
            (anomalous ? an_knn : in_knn).push_back(knn);
        }
    }
    c.loss_auroc = auroc(in_loss, an_loss);
    c.knn_auroc = auroc(in_knn, an_knn);
    return c;
}

// ---------------------------------------------------------------------------
// Report serialization

namespace {

ojson num(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

double num_of(const nlohmann::json& j, double if_null) {
    return j.is_null() ? if_null : j.get<double>();
}

} // namespace

std::string report_json(const ExperimentReport& r) {
    ojson cells = ojson::array();
    for (const auto& c : r.cells) {
        cells.push_back({{"scenario", c.scenario},
                         {"objective", c.objective},
                         {"anomaly_kind", to_string(c.kind)},
                         {"n", c.n},
                         {"contamination", c.contamination},
                         {"auroc", c.auroc},
                         {"inliers", c.inliers},
                         {"anomalies", c.anomalies},
                         {"score_file", c.score_file},
                         {"manifest", c.manifest}});
    }
    ojson diags = ojson::array();
    for (const auto& d : r.diagnostics) {
        ojson j{{"scenario", d.scenario}, {"objective", d.objective}, {"auroc", d.auroc}};
        if (d.probe) {
            j["probe"] = {{"accuracy", d.probe->accuracy}, {"folds", d.probe->folds}, {"source", d.probe->source},
                          {"fold_accuracies", d.probe->fold_accuracies}};
        }
        if (d.brittleness) {
            const auto& b = *d.brittleness;
            j["brittleness"] = {{"mean_grad_norm", b.mean_grad_norm}, {"covariance_trace", b.covariance_trace},
                                {"ratio", b.ratio}, {"log_ratio", num(b.log_ratio)}, {"documents", b.documents}};
        }
        if (d.knn_auroc) j["knn_auroc"] = *d.knn_auroc;
        diags.push_back(std::move(j));
    }
    ojson trainings = ojson::array();
    for (const auto& t : r.trainings) {
        trainings.push_back({{"objective", t.objective},
                             {"scenario", t.scenario},
                             {"history_file", t.history_file},
                             {"best_step", t.best_step},
                             {"steps_run", t.steps_run},
                             {"best_val_loss", num(t.best_val_loss)},
                             {"early_stopped", t.early_stopped}});
    }
    ojson j{{"config", r.config}, {"vocab_size", r.vocab_size}, {"pretrained_untrained", r.pretrained_untrained}};
    if (!r.error.empty()) j["error"] = r.error;
    j["cells"] = cells;
    j["diagnostics"] = diags;
    j["trainings"] = trainings;
    return j.dump(1) + "\n";
}

ExperimentReport parse_report(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    ExperimentReport r;
    r.config = j.at("config").get<std::string>();
    r.vocab_size = j.at("vocab_size").get<std::size_t>();
    r.pretrained_untrained = j.at("pretrained_untrained").get<bool>();
    if (j.contains("error")) r.error = j["error"].get<std::string>();
    for (const auto& c : j.at("cells")) {
        r.cells.push_back({c.at("scenario"), c.at("objective"), anomaly_kind_from_string(c.at("anomaly_kind")),
                           c.at("n"), c.at("contamination"), c.at("auroc"), c.at("inliers"), c.at("anomalies"),
                           c.at("score_file"), c.at("manifest")});
    }
    for (const auto& d : j.at("diagnostics")) {
        DiagnosticResult out{d.at("scenario"), d.at("objective"), d.at("auroc"), {}, {}, {}};
        if (d.contains("probe")) {
            const auto& p = d["probe"];
            out.probe = ProbeReport{p.at("accuracy"), p.at("folds"), p.at("source"), p.at("fold_accuracies")};
        }
        if (d.contains("brittleness")) {
            const auto& b = d["brittleness"];
            out.brittleness = BrittlenessReport{b.at("mean_grad_norm"), b.at("covariance_trace"), b.at("ratio"),
                                                num_of(b.at("log_ratio"), -std::numeric_limits<double>::infinity()),
                                                b.at("documents")};
        }
        if (d.contains("knn_auroc")) out.knn_auroc = d["knn_auroc"].get<double>();
        r.diagnostics.push_back(std::move(out));
    }
    for (const auto& t : j.at("trainings")) {
        r.trainings.push_back({t.at("objective"), t.at("scenario"), t.at("history_file"), t.at("best_step"),
                               t.at("steps_run"),
                               num_of(t.at("best_val_loss"), std::numeric_limits<double>::infinity()),
                               t.at("early_stopped")});
    }
    return r;
}

std::vector<double> recompute_cells(const ExperimentReport& report, const fs::path& output_dir) {
    std::vector<double> out;
    for (const auto& c : report.cells) out.push_back(auroc(read_scores(output_dir / c.score_file)));
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation and CSV

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

std::vector<AggregateRow> aggregate(std::span<const ExperimentReport> reports) {
    // (objective, group_by, group) -> values, in first-seen order
    std::vector<std::tuple<std::string, std::string, std::string>> order;
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> values;
    auto add = [&](const std::string& obj, const std::string& by, const std::string& group, double v) {
        auto key = std::make_tuple(obj, by, group);
        auto [it, fresh] = values.try_emplace(key);
        if (fresh) order.push_back(key);
        it->second.push_back(v);
    };
    for (const auto& r : reports) {
        for (const auto& c : r.cells) {
            add(c.objective, "all", "all", c.auroc);
            add(c.objective, "anomaly_kind", to_string(c.kind), c.auroc);
            if (c.kind == AnomalyKind::Syntactic) add(c.objective, "n", std::to_string(c.n), c.auroc);
            add(c.objective, "contamination", format_double(c.contamination), c.auroc);
        }
    }
    std::vector<AggregateRow> rows;
    for (const auto& key : order) {
        const auto& v = values.at(key);
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        rows.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), v.size(), mean, median_of(v)});
    }
    return rows;
}

std::string cells_csv(std::span<const ExperimentReport> reports) {
    std::string out = "objective,scenario,anomaly_kind,n,contamination,auroc\n";
    for (const auto& r : reports) {
        for (const auto& c : r.cells) {
            out += c.objective + "," + c.scenario + "," + to_string(c.kind) + "," + std::to_string(c.n) + "," +
                   format_double(c.contamination) + "," + format_double(c.auroc) + "\n";
        }
    }
    return out;
}

std::string diagnostics_csv(const ExperimentReport& report) {
    std::string out = "scenario,objective,probe_accuracy,brittleness_log_ratio,auroc\n";
    for (const auto& d : report.diagnostics) {
        out += d.scenario + "," + d.objective + "," + (d.probe ? format_double(d.probe->accuracy) : "") + "," +
               (d.brittleness ? format_double(d.brittleness->log_ratio) : "") + "," + format_double(d.auroc) + "\n";
    }
    return out;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
    std::string out = "objective,group_by,group,cells,mean_auroc,median_auroc\n";
    for (const auto& r : rows) {
        out += r.objective + "," + r.group_by + "," + r.group + "," + std::to_string(r.cells) + "," +
               format_double(r.mean) + "," + format_double(r.median) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline stages

std::string scenario_name(AnomalyKind kind, std::size_t n, double rate) {
    std::string name = to_string(kind);
    if (kind == AnomalyKind::Syntactic) name += "_n" + std::to_string(n);
    return name + "_c" + format_double(rate);
}

PreprocessConfig preprocess_config(const ExperimentConfig& cfg) {
    PreprocessConfig pp;
    pp.lowercase = cfg.lowercase;
    pp.strip_punctuation = cfg.strip_punctuation;
    if (!cfg.stopwords.empty()) pp.stopwords = load_stopwords(cfg.stopwords);
    return pp;
}

std::vector<NamedScenario> build_scenarios(const ExperimentConfig& cfg) {
    const auto corpus = tokenize_corpus(read_corpus(cfg.corpus), preprocess_config(cfg));
    NormalitySpec normality = cfg.normality;
    normality.corpus_id = cfg.corpus_id;
    std::vector<NamedScenario> out;
    for (auto kind : cfg.anomaly_kinds) {
        const auto ns = kind == AnomalyKind::Semantic ? std::vector<std::size_t>{0} : cfg.ngrams;
        for (auto n : ns) {
            const auto base = build_scenario(corpus, normality, kind, n, cfg.ratios, cfg.seed);
            for (double rate : cfg.contamination) {
                out.push_back({scenario_name(kind, n, rate), contaminate(base, {rate, cfg.contamination_seed})});
            }
        }
    }
    return out;
}

Vocabulary experiment_vocabulary(const ExperimentConfig& cfg, const std::vector<NamedScenario>& scenarios) {
    if (!cfg.pretrained_vocab.empty()) return Vocabulary::load(cfg.pretrained_vocab);
    std::vector<Tokens> tokens;
    std::set<std::string> seen;
    for (const auto& sc : scenarios) {
        std::set<std::string> injected;
        for (const auto& [id, label] : sc.split.contamination.injected) injected.insert(id);
        for (const auto& d : sc.split.train_inliers) {
            if (!injected.count(d.id) && seen.insert(d.id).second) tokens.push_back(d.tokens);
        }
    }
    if (!cfg.pretrain_corpus.empty()) {
        for (const auto& d : tokenize_corpus(read_corpus(cfg.pretrain_corpus), preprocess_config(cfg))) {
            tokens.push_back(d.tokens);
        }
    }
    return Vocabulary::build(tokens, cfg.min_count);
}

GenericModel generic_model(const ExperimentConfig& cfg, const Vocabulary& vocab) {
    if (!cfg.pretrained_checkpoint.empty()) {
        auto model = EncoderModel::load(cfg.pretrained_checkpoint);
        if (model.config().vocab_size != vocab.size()) {
            throw std::runtime_error("pretrained checkpoint vocab_size does not match the vocabulary");
        }
        return {model.with_attention_mode(AttentionMode::Bidirectional), false, std::nullopt};
    }
    EncoderConfig enc = cfg.encoder;
    enc.vocab_size = vocab.size();
    enc.attention_mode = AttentionMode::Bidirectional;
    auto model = EncoderModel::init(enc, cfg.model_seed);
    if (cfg.pretrain_corpus.empty()) return {std::move(model), true, std::nullopt};

    auto generic = tokenize_corpus(read_corpus(cfg.pretrain_corpus), preprocess_config(cfg));
    std::sort(generic.begin(), generic.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    std::vector<TokenSequence> seqs;
    for (const auto& d : generic) {
        if (!d.tokens.empty()) seqs.push_back(encode(d.tokens, vocab, enc.max_len));
    }
    if (seqs.size() < 2) throw std::runtime_error("pretrain corpus has fewer than 2 usable documents");
    // seeded 90/10 train/validation split
    Rng(mix_seed(cfg.model_seed, 0x9E7)).shuffle(seqs);
    const auto n_val = static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(seqs.size() / 10, 1, seqs.size() - 1));
    const std::vector<TokenSequence> val(seqs.begin(), seqs.begin() + n_val);
    const std::vector<TokenSequence> train_set(seqs.begin() + n_val, seqs.end());
    TrainConfig tc = cfg.train;
    tc.max_steps = cfg.pretrain_steps;
    auto result = train(std::move(model), MlmObjective(cfg.masking), train_set, val, tc);
    EncoderModel trained = result.model;
    return {std::move(trained), false, std::move(result)};
}

bool uses_bos(const std::string& objective) { return objective == "clm"; }

TrainResult fine_tune(const ExperimentConfig& cfg, const EncoderModel& generic, const std::string& objective,
                      const EncodedScenario& data) {
    if (objective != "mlm" && objective != "clm" && objective != "simcse") {
        throw std::invalid_argument("cannot fine-tune objective " + objective);
    }
    const auto obj = make_objective(objective, cfg.masking, cfg.contrastive);
    EncoderModel start = objective == "clm" ? generic.with_attention_mode(AttentionMode::Causal)
                                            : generic.with_attention_mode(AttentionMode::Bidirectional);
    return train(std::move(start), *obj, data.train.seqs, data.val.seqs, cfg.train);
}

DiagnosticResult diagnose_cell(const ExperimentConfig& cfg, const std::string& scenario, const std::string& objective_name,
                               const EncoderModel& model, const Objective& objective, const EncodedScenario& data,
                               double cell_auroc, const fs::path* embeddings_dir) {
    DiagnosticResult d{scenario, objective_name, cell_auroc, {}, {}, {}};
    if (cfg.probe) {
        const auto in = extract_embeddings(model, data.test_inliers.seqs);
        const auto an = extract_embeddings(model, data.test_anomalies.seqs);
        ProbeConfig pc;
        pc.folds = cfg.probe_folds;
        pc.seed = cfg.seed;
        d.probe = separability_probe(in, an, pc, objective_name + ":last_hidden_mean");
    }
    if (cfg.brittleness) {
        const std::size_t n = std::min(cfg.brittleness_docs, data.train.seqs.size());
        const std::span<const TokenSequence> docs(data.train.seqs.data(), n);
        std::vector<std::uint64_t> keys;
        for (std::size_t i = 0; i < n; ++i) keys.push_back(hash_string(data.train.ids[i]));
        d.brittleness = brittleness(model, objective, docs, keys);
    }
    if (cfg.knn) {
        const auto cmp = compare_scoring_modes(model, objective, data, cfg.knn_k);
        d.knn_auroc = cmp.knn_auroc;
        if (embeddings_dir) {
            const std::string stem = scenario + "__" + objective_name;
            write_embeddings(*embeddings_dir / (stem + "__train.jsonl"), data.train.ids,
                             extract_embeddings(model, data.train.seqs));
            std::vector<TokenSequence> test = data.test_inliers.seqs;
            test.insert(test.end(), data.test_anomalies.seqs.begin(), data.test_anomalies.seqs.end());
            write_embeddings(*embeddings_dir / (stem + "__test.jsonl"), cmp.ids, extract_embeddings(model, test));
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

struct Runtime {
    using Clock = std::chrono::steady_clock;
    Clock::time_point start = Clock::now();
    ojson stages = ojson::array();

    void stage(const std::string& name, Clock::time_point since) {
        const double s = std::chrono::duration<double>(Clock::now() - since).count();
        stages.push_back({{"stage", name}, {"seconds", s}});
    }
};

struct TrainedModel {
    EncoderModel model;
    std::unique_ptr<Objective> objective;
};

class Runner {
public:
    Runner(const ExperimentConfig& cfg, ExperimentReport& report, Runtime& rt) : cfg_(cfg), report_(report), rt_(rt) {}

    void run() {
        auto t0 = Runtime::Clock::now();
        const auto scenarios = build_scenarios(cfg_);
        for (const auto& sc : scenarios) {
            write_text(cfg_.output / "manifests" / (sc.name + ".json"), scenario_manifest(sc.split) + "\n");
        }
        rt_.stage("scenarios", t0);

        if (std::any_of(cfg_.objectives.begin(), cfg_.objectives.end(), is_neural)) {
            t0 = Runtime::Clock::now();
            vocab_ = experiment_vocabulary(cfg_, scenarios);
            vocab_.save(cfg_.output / "vocab.txt");
            report_.vocab_size = vocab_.size();
            auto g = generic_model(cfg_, vocab_);
            report_.pretrained_untrained = g.untrained;
            if (g.pretraining) {
                const auto& r = *g.pretraining;
                write_history_csv(cfg_.output / "history" / "pretrain.csv", r.history);
                report_.trainings.push_back({"pretrain", "", "history/pretrain.csv", r.best_step, r.steps_run,
                                             r.best_val_loss, r.early_stopped});
            }
            generic_ = std::move(g.model);
            if (cfg_.save_checkpoints) generic_->save(cfg_.output / "checkpoints" / "generic.bin");
            rt_.stage("generic_model", t0);
        }
        if (std::find(cfg_.objectives.begin(), cfg_.objectives.end(), "bow") != cfg_.objectives.end()) {
            word_vectors_ = WordVectorTable::load(cfg_.word_vectors);
        }

        for (const auto& sc : scenarios) {
            t0 = Runtime::Clock::now();
            run_scenario(sc);
            rt_.stage("scenario " + sc.name, t0);
        }
    }

private:
    const EncodedScenario& encoded(const NamedScenario& sc, bool bos) {
        auto& slot = bos ? encoded_bos_ : encoded_plain_;
        if (!slot) slot = encode_scenario(sc.split, vocab_, generic_->config().max_len, {.prepend_bos = bos});
        return *slot;
    }

    // Fine-tuned model for (objective, training set), trained on first use.
    TrainedModel& fine_tuned(const std::string& name, const NamedScenario& sc, const EncodedScenario& data) {
        std::string key = name;
        for (const auto* set : {&data.train.ids, &data.val.ids}) {
            key += '|';
            for (const auto& id : *set) key += id + '\n';
        }
        auto it = trained_.find(key);
        if (it != trained_.end()) return it->second;

        auto result = fine_tune(cfg_, *generic_, name, data);
        const std::string history = "history/" + sc.name + "__" + name + ".csv";
        write_history_csv(cfg_.output / history, result.history);
        report_.trainings.push_back(
            {name, sc.name, history, result.best_step, result.steps_run, result.best_val_loss, result.early_stopped});
        if (cfg_.save_checkpoints) result.model.save(cfg_.output / "checkpoints" / (sc.name + "__" + name + ".bin"));
        auto objective = make_objective(name, cfg_.masking, cfg_.contrastive);
        return trained_.emplace(key, TrainedModel{std::move(result.model), std::move(objective)}).first->second;
    }

    void run_scenario(const NamedScenario& sc) {
        encoded_plain_.reset();
        encoded_bos_.reset();
        const std::string manifest = "manifests/" + sc.name + ".json";
        const fs::path embeddings_dir = cfg_.output / "embeddings";
        for (const auto& name : cfg_.objectives) {
            ScoredDataset scores;
            const EncoderModel* model = nullptr;
            Objective* objective = nullptr;
            std::unique_ptr<Objective> baseline;
            const EncodedScenario* data = nullptr;
            if (name == "bow") {
                scores = bow_scores(sc.split, word_vectors_, cfg_.ocsvm);
            } else if (name == "pretrained") {
                data = &encoded(sc, false);
                baseline = make_objective(name, cfg_.masking, cfg_.contrastive);
                model = &*generic_;
                objective = baseline.get();
                scores = score_scenario(*objective, *model, *data);
                scores.objective = name;
            } else {
                data = &encoded(sc, uses_bos(name));
                auto& tm = fine_tuned(name, sc, *data);
                model = &tm.model;
                objective = tm.objective.get();
                objective->prepare_scoring(*model, data->train.seqs);
                scores = score_scenario(*objective, *model, *data);
            }
            scores.manifest = manifest;
            const std::string score_file = "scores/" + sc.name + "__" + name + ".jsonl";
            write_scores(cfg_.output / score_file, scores);

            CellResult cell{sc.name,
                            name,
                            sc.split.kind,
                            sc.split.ngram,
                            sc.split.contamination.rate,
                            auroc(scores),
                            sc.split.test_inliers.size(),
                            sc.split.test_anomalies.size(),
                            score_file,
                            manifest};
            report_.cells.push_back(cell);

            if (model && (cfg_.probe || cfg_.brittleness || cfg_.knn)) {
                report_.diagnostics.push_back(
                    diagnose_cell(cfg_, sc.name, name, *model, *objective, *data, cell.auroc, &embeddings_dir));
            }
        }
    }

    const ExperimentConfig& cfg_;
    ExperimentReport& report_;
    Runtime& rt_;
    Vocabulary vocab_;
    std::optional<EncoderModel> generic_;
    WordVectorTable word_vectors_;
    std::optional<EncodedScenario> encoded_plain_, encoded_bos_;
    std::unordered_map<std::string, TrainedModel> trained_;
};

void write_outputs(const ExperimentConfig& cfg, const ExperimentReport& report) {
    write_text(cfg.output / "report.json", report_json(report));
    const std::span<const ExperimentReport> one(&report, 1);
    write_text(cfg.output / "cells.csv", cells_csv(one));
    write_text(cfg.output / "diagnostics.csv", diagnostics_csv(report));
    write_text(cfg.output / "aggregate.csv", aggregate_csv(aggregate(one)));
}

void write_runtime(const ExperimentConfig& cfg, const Runtime& rt, const std::string& status) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream stamp;
    stamp << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    ojson j{{"status", status},
            {"finished_utc", stamp.str()},
            {"total_seconds", std::chrono::duration<double>(Runtime::Clock::now() - rt.start).count()},
            {"stages", rt.stages}};
    write_text(cfg.output / "runtime.json", j.dump(1) + "\n");
}

} // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    for (const char* sub : {"manifests", "scores", "history", "embeddings"}) fs::create_directories(cfg.output / sub);
    if (cfg.save_checkpoints) fs::create_directories(cfg.output / "checkpoints");
    write_text(cfg.output / "config.txt", config_text(cfg));

    ExperimentReport report;
    report.config = config_text(cfg);
    Runtime rt;
    try {
        Runner(cfg, report, rt).run();
    } catch (const std::exception& e) {
        report.error = e.what();
        write_outputs(cfg, report);
        write_runtime(cfg, rt, std::string("failed: ") + e.what());
        throw;
    }
    write_outputs(cfg, report);
    write_runtime(cfg, rt, "ok");
    return report;
}

} // namespace textad
