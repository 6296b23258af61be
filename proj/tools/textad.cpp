// Command-line front end: ingest, scenario, train, score, eval, diagnose,
// report and run. Every subcommand takes --config plus one flag per config
// key (dashes for underscores) and repeatable --set key=value overrides.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "textad/experiment.hpp"

namespace fs = std::filesystem;
using namespace textad;

namespace {

struct ConfigFlags {
    std::string config_file;
    std::vector<std::string> sets;
    std::map<std::string, std::string> values;  // key -> flag value, empty if unset

    void attach(CLI::App* app) {
        app->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "override, key=value (repeatable)");
        for (const auto& key : config_keys()) {
            std::string flag = key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            app->add_option("--" + flag, values[key], "config key " + key)->group("Config keys");
        }
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg = config_file.empty() ? ExperimentConfig{} : load_config(config_file);
        for (const auto& [key, value] : values) {
            if (!value.empty()) apply_config_value(cfg, key, value);
        }
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
            apply_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        return cfg;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

const NamedScenario& find_scenario(const std::vector<NamedScenario>& all, const std::string& name) {
    if (all.empty()) throw std::runtime_error("config produces no scenarios");
    if (name.empty()) return all.front();
    for (const auto& sc : all) {
        if (sc.name == name) return sc;
    }
    std::string known;
    for (const auto& sc : all) known += " " + sc.name;
    throw std::invalid_argument("unknown scenario " + name + "; available:" + known);
}

fs::path checkpoint_path(const ExperimentConfig& cfg, const std::string& scenario, const std::string& objective) {
    return cfg.output / "checkpoints" / (scenario + "__" + objective + ".bin");
}

// Model for scoring `objective`: an explicit checkpoint, else the one `train`
// saved, else (pretrained only) the generic model.
EncoderModel scoring_model(const ExperimentConfig& cfg, const Vocabulary& vocab, const std::string& scenario,
                           const std::string& objective, const std::string& explicit_checkpoint) {
    if (!explicit_checkpoint.empty()) return EncoderModel::load(explicit_checkpoint);
    if (objective == "pretrained") {
        const auto saved = cfg.output / "checkpoints" / "generic.bin";
        if (fs::exists(saved)) return EncoderModel::load(saved);
        return generic_model(cfg, vocab).model;
    }
    const auto saved = checkpoint_path(cfg, scenario, objective);
    if (!fs::exists(saved)) throw std::runtime_error("no checkpoint at " + saved.string() + "; run train first");
    return EncoderModel::load(saved);
}

int cmd_ingest(const ExperimentConfig& cfg) {
    const auto docs = read_corpus(cfg.corpus);
    const auto tokenized = tokenize_corpus(docs, preprocess_config(cfg));
    std::map<std::string, std::size_t> per_label;
    std::size_t empty = 0;
    for (const auto& d : tokenized) {
        ++per_label[d.label];
        if (d.tokens.empty()) ++empty;
    }
    std::cout << "documents " << docs.size() << "\n";
    std::cout << "empty_after_preprocessing " << empty << "\n";
    for (const auto& [label, n] : per_label) std::cout << "label " << label << " " << n << "\n";
    return 0;
}

int cmd_scenario(const ExperimentConfig& cfg) {
    cfg.validate();
    for (const auto& sc : build_scenarios(cfg)) {
        const auto path = cfg.output / "manifests" / (sc.name + ".json");
        write_text(path, scenario_manifest(sc.split) + "\n");
        std::cout << sc.name << " train=" << sc.split.train_inliers.size() << " val=" << sc.split.val_inliers.size()
                  << " test_inliers=" << sc.split.test_inliers.size()
                  << " test_anomalies=" << sc.split.test_anomalies.size() << " -> " << path.string() << "\n";
    }
    return 0;
}

int cmd_train(const ExperimentConfig& cfg, const std::string& scenario_arg) {
    cfg.validate();
    const auto scenarios = build_scenarios(cfg);
    const auto& sc = find_scenario(scenarios, scenario_arg);
    const auto vocab = experiment_vocabulary(cfg, scenarios);
    fs::create_directories(cfg.output / "checkpoints");
    fs::create_directories(cfg.output / "history");
    vocab.save(cfg.output / "vocab.txt");
    auto generic = generic_model(cfg, vocab);
    generic.model.save(cfg.output / "checkpoints" / "generic.bin");
    if (generic.pretraining) write_history_csv(cfg.output / "history" / "pretrain.csv", generic.pretraining->history);
    for (const auto& objective : cfg.objectives) {
        if (objective == "pretrained" || objective == "bow") continue;
        const auto data = encode_scenario(sc.split, vocab, generic.model.config().max_len,
                                          {.prepend_bos = uses_bos(objective)});
        const auto result = fine_tune(cfg, generic.model, objective, data);
        const auto ckpt = checkpoint_path(cfg, sc.name, objective);
        result.model.save(ckpt);
        write_history_csv(cfg.output / "history" / (sc.name + "__" + objective + ".csv"), result.history);
        std::cout << objective << " steps=" << result.steps_run << " best_step=" << result.best_step
                  << " best_val_loss=" << format_double(result.best_val_loss) << " -> " << ckpt.string() << "\n";
    }
    return 0;
}

struct CellInputs {
    std::vector<NamedScenario> scenarios;
    const NamedScenario* scenario = nullptr;
    Vocabulary vocab;
};

CellInputs cell_inputs(const ExperimentConfig& cfg, const std::string& scenario_arg) {
    CellInputs in;
    in.scenarios = build_scenarios(cfg);
    in.scenario = &find_scenario(in.scenarios, scenario_arg);
    const auto saved = cfg.output / "vocab.txt";
    in.vocab = cfg.pretrained_vocab.empty() && fs::exists(saved) ? Vocabulary::load(saved)
                                                                 : experiment_vocabulary(cfg, in.scenarios);
    return in;
}

int cmd_score(const ExperimentConfig& cfg, const std::string& scenario_arg, const std::string& checkpoint,
              bool diagnose) {
    cfg.validate();
    const auto in = cell_inputs(cfg, scenario_arg);
    const auto& sc = *in.scenario;
    const std::string manifest = "manifests/" + sc.name + ".json";
    write_text(cfg.output / manifest, scenario_manifest(sc.split) + "\n");
    nlohmann::ordered_json diagnostics = nlohmann::ordered_json::array();
    for (const auto& objective : cfg.objectives) {
        ScoredDataset scores;
        if (objective == "bow") {
            scores = bow_scores(sc.split, WordVectorTable::load(cfg.word_vectors), cfg.ocsvm);
            if (diagnose) std::cerr << "diagnostics skipped for bow\n";
        } else {
            const auto model = scoring_model(cfg, in.vocab, sc.name, objective, checkpoint);
            const auto data =
                encode_scenario(sc.split, in.vocab, model.config().max_len, {.prepend_bos = uses_bos(objective)});
            auto obj = make_objective(objective, cfg.masking, cfg.contrastive);
            obj->prepare_scoring(model, data.train.seqs);
            scores = score_scenario(*obj, model, data);
            scores.objective = objective;
            if (diagnose) {
                const fs::path dir = cfg.output / "embeddings";
                fs::create_directories(dir);
                const auto d = diagnose_cell(cfg, sc.name, objective, model, *obj, data, auroc(scores), &dir);
                nlohmann::ordered_json j{{"scenario", d.scenario}, {"objective", d.objective}, {"auroc", d.auroc}};
                if (d.probe) j["probe_accuracy"] = d.probe->accuracy;
                if (d.brittleness) {
                    j["brittleness_ratio"] = d.brittleness->ratio;
                    j["brittleness_log_ratio"] = std::isfinite(d.brittleness->log_ratio)
                                                     ? nlohmann::ordered_json(d.brittleness->log_ratio)
                                                     : nlohmann::ordered_json(nullptr);
                }
                if (d.knn_auroc) j["knn_auroc"] = *d.knn_auroc;
                diagnostics.push_back(j);
            }
        }
        scores.manifest = manifest;
        const auto path = cfg.output / "scores" / (sc.name + "__" + objective + ".jsonl");
        fs::create_directories(path.parent_path());
        write_scores(path, scores);
        std::cout << sc.name << " " << objective << " auroc=" << format_double(auroc(scores)) << " -> "
                  << path.string() << "\n";
    }
    if (diagnose) std::cout << diagnostics.dump(1) << "\n";
    return 0;
}

int cmd_eval(const std::vector<std::string>& files) {
    for (const auto& f : files) std::cout << f << " " << format_double(auroc(read_scores(f))) << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& files, const std::string& out_dir, bool recompute) {
    std::vector<ExperimentReport> reports;
    int status = 0;
    for (const auto& f : files) {
        reports.push_back(parse_report(slurp(f)));
        if (!recompute) continue;
        const auto& r = reports.back();
        const auto values = recompute_cells(r, fs::path(f).parent_path());
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i] != r.cells[i].auroc) {
                std::cerr << "mismatch " << r.cells[i].score_file << ": report " << format_double(r.cells[i].auroc)
                          << " vs recomputed " << format_double(values[i]) << "\n";
                status = 1;
            }
        }
    }
    const fs::path out(out_dir);
    write_text(out / "cells.csv", cells_csv(reports));
    write_text(out / "aggregate.csv", aggregate_csv(aggregate(reports)));
    std::string diag;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto csv = diagnostics_csv(reports[i]);
        diag += i == 0 ? csv : csv.substr(csv.find('\n') + 1);
    }
    write_text(out / "diagnostics.csv", diag);
    std::cout << "wrote " << (out / "cells.csv").string() << ", aggregate.csv, diagnostics.csv\n";
    return status;
}

int cmd_run(const ExperimentConfig& cfg) {
    const auto report = run_experiment(cfg);
    for (const auto& c : report.cells) {
        std::cout << c.scenario << " " << c.objective << " auroc=" << format_double(c.auroc) << "\n";
    }
    std::cout << "report " << (cfg.output / "report.json").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"One-class text anomaly detection toolkit"};
    app.require_subcommand(1);

    ConfigFlags ingest_flags, scenario_flags, train_flags, score_flags, diagnose_flags, run_flags;
    std::string scenario_arg, checkpoint_arg, out_dir = ".";
    std::vector<std::string> score_files, report_files;
    bool recompute = false;

    auto* ingest = app.add_subcommand("ingest", "validate a corpus and print label counts");
    ingest_flags.attach(ingest);
    auto* scenario = app.add_subcommand("scenario", "build scenarios and write their manifests");
    scenario_flags.attach(scenario);
    auto* train = app.add_subcommand("train", "fine-tune the configured objectives on one scenario");
    train_flags.attach(train);
    train->add_option("--scenario", scenario_arg, "scenario name (default: first)");
    auto* score = app.add_subcommand("score", "score one scenario's test set with each objective");
    score_flags.attach(score);
    score->add_option("--scenario", scenario_arg, "scenario name (default: first)");
    score->add_option("--checkpoint", checkpoint_arg, "model checkpoint (default: the one train saved)");
    auto* diagnose = app.add_subcommand("diagnose", "score plus probe, brittleness and kNN comparison");
    diagnose_flags.attach(diagnose);
    diagnose->add_option("--scenario", scenario_arg, "scenario name (default: first)");
    diagnose->add_option("--checkpoint", checkpoint_arg, "model checkpoint (default: the one train saved)");
    auto* eval = app.add_subcommand("eval", "AUROC of score files");
    eval->add_option("scores", score_files, "score JSONL files")->required()->check(CLI::ExistingFile);
    auto* report = app.add_subcommand("report", "aggregate report.json files into CSVs");
    report->add_option("reports", report_files, "report.json files")->required()->check(CLI::ExistingFile);
    report->add_option("--out", out_dir, "output directory");
    report->add_flag("--recompute", recompute, "check every cell against its score file");
    auto* run = app.add_subcommand("run", "full pipeline from one config");
    run_flags.attach(run);

    CLI11_PARSE(app, argc, argv);
    try {
        if (*ingest) return cmd_ingest(ingest_flags.resolve());
        if (*scenario) return cmd_scenario(scenario_flags.resolve());
        if (*train) return cmd_train(train_flags.resolve(), scenario_arg);
        if (*score) return cmd_score(score_flags.resolve(), scenario_arg, checkpoint_arg, false);
        if (*diagnose) {
            auto cfg = diagnose_flags.resolve();
            if (!cfg.probe && !cfg.brittleness && !cfg.knn) cfg.probe = cfg.brittleness = cfg.knn = true;
            return cmd_score(cfg, scenario_arg, checkpoint_arg, true);
        }
        if (*eval) return cmd_eval(score_files);
        if (*report) return cmd_report(report_files, out_dir, recompute);
        if (*run) return cmd_run(run_flags.resolve());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
