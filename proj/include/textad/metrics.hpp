#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace textad {

struct ScoredItem {
    std::string id;
    double score = 0.0;
    bool is_anomaly = false;

    bool operator==(const ScoredItem&) const = default;
};

struct ScoredDataset {
    std::string objective;
    std::string manifest;  // path or tag of the scenario manifest
    std::vector<ScoredItem> items;

    bool operator==(const ScoredDataset&) const = default;
};

// P(anomaly score > inlier score) + 0.5 P(tie), exact via midranks.
// Throws std::invalid_argument unless both classes are present.
double auroc(std::span<const double> inlier_scores, std::span<const double> anomaly_scores);
double auroc(const ScoredDataset& data);

// Twice the Mann-Whitney U statistic: 2 * #(a > i) + #(a == i) over all pairs.
unsigned long long auroc_twice_u(std::span<const double> inlier_scores, std::span<const double> anomaly_scores);

// JSON-lines {"id","objective","score","is_anomaly"}; scores written with
// round-trip precision. Throws on duplicate ids.
std::string scores_jsonl(const ScoredDataset& data);
ScoredDataset parse_scores(const std::string& jsonl);
void write_scores(const std::filesystem::path& path, const ScoredDataset& data);
ScoredDataset read_scores(const std::filesystem::path& path);

// JSON-lines {"id","vector":[...]}.
void write_embeddings(const std::filesystem::path& path, std::span<const std::string> ids,
                      std::span<const std::vector<double>> vectors);
std::vector<std::pair<std::string, std::vector<double>>> read_embeddings(const std::filesystem::path& path);

} // namespace textad
