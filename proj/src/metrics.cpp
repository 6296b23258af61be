#include "textad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace textad {

using nlohmann::json;

unsigned long long auroc_twice_u(std::span<const double> inlier_scores, std::span<const double> anomaly_scores) {
    if (inlier_scores.empty() || anomaly_scores.empty()) {
        throw std::invalid_argument("auroc: need at least one inlier and one anomaly");
    }
    struct Entry {
        double score;
        bool anomaly;
    };
    std::vector<Entry> all;
    all.reserve(inlier_scores.size() + anomaly_scores.size());
    for (double s : inlier_scores) all.push_back({s, false});
    for (double s : anomaly_scores) all.push_back({s, true});
    for (const auto& e : all) {
        if (std::isnan(e.score)) throw std::invalid_argument("auroc: NaN score");
    }
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // Doubled midrank sum of anomalies; ranks are 1-based.
    unsigned long long doubled_rank_sum = 0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        std::size_t anomalies = 0;
        while (j < all.size() && all[j].score == all[i].score) {
            if (all[j].anomaly) ++anomalies;
            ++j;
        }
        // midrank of positions i+1..j is (i+1+j)/2
        doubled_rank_sum += static_cast<unsigned long long>(anomalies) * (i + 1 + j);
        i = j;
    }
    const unsigned long long na = anomaly_scores.size();
    return doubled_rank_sum - na * (na + 1);
}

double auroc(std::span<const double> inlier_scores, std::span<const double> anomaly_scores) {
    const auto twice_u = auroc_twice_u(inlier_scores, anomaly_scores);
    const double pairs = static_cast<double>(inlier_scores.size()) * static_cast<double>(anomaly_scores.size());
    return static_cast<double>(twice_u) / (2.0 * pairs);
}

double auroc(const ScoredDataset& data) {
    std::vector<double> in, an;
    for (const auto& item : data.items) (item.is_anomaly ? an : in).push_back(item.score);
    return auroc(in, an);
}

// ---------------------------------------------------------------------------
// Score files

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

} // namespace

std::string scores_jsonl(const ScoredDataset& data) {
    std::string out;
    std::set<std::string> seen;
    for (const auto& item : data.items) {
        if (!seen.insert(item.id).second) throw std::invalid_argument("duplicate score id: " + item.id);
        json j = {{"id", item.id}, {"objective", data.objective}, {"score", item.score}, {"is_anomaly", item.is_anomaly}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

ScoredDataset parse_scores(const std::string& jsonl) {
    ScoredDataset data;
    std::set<std::string> seen;
    std::istringstream in(jsonl);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            ScoredItem item{j.at("id").get<std::string>(), j.at("score").get<double>(), j.at("is_anomaly").get<bool>()};
            const auto objective = j.at("objective").get<std::string>();
            if (data.items.empty()) {
                data.objective = objective;
            } else if (objective != data.objective) {
                throw std::invalid_argument("mixed objectives");
            }
            if (!seen.insert(item.id).second) throw std::invalid_argument("duplicate id " + item.id);
            data.items.push_back(std::move(item));
        } catch (const std::exception& e) {
            throw std::runtime_error("scores line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return data;
}

void write_scores(const std::filesystem::path& path, const ScoredDataset& data) {
    write_file(path, scores_jsonl(data));
}

ScoredDataset read_scores(const std::filesystem::path& path) {
    return parse_scores(read_file(path));
}

void write_embeddings(const std::filesystem::path& path, std::span<const std::string> ids,
                      std::span<const std::vector<double>> vectors) {
    if (ids.size() != vectors.size()) throw std::invalid_argument("write_embeddings: size mismatch");
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out += json{{"id", ids[i]}, {"vector", vectors[i]}}.dump();
        out += '\n';
    }
    write_file(path, out);
}

std::vector<std::pair<std::string, std::vector<double>>> read_embeddings(const std::filesystem::path& path) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const json j = json::parse(line);
        out.emplace_back(j.at("id").get<std::string>(), j.at("vector").get<std::vector<double>>());
    }
    return out;
}

} // namespace textad
