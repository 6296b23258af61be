#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "textad/text.hpp"

namespace textad {

// token -> fixed-dimension vector. File format: optional "count dim" header,
// then "token v1 ... vd" per line.
class WordVectorTable {
public:
    explicit WordVectorTable(std::size_t dim = 0) : dim_(dim) {}

    static WordVectorTable load(const std::filesystem::path& path);
    static WordVectorTable parse(const std::string& text);

    void add(const std::string& token, std::vector<double> vec);
    const std::vector<double>* find(const std::string& token) const;
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return table_.size(); }

private:
    std::size_t dim_;
    std::unordered_map<std::string, std::vector<double>> table_;
};

struct BowEmbedding {
    std::vector<double> vector;
    std::size_t in_table = 0;
    bool all_oov() const { return in_table == 0; }
};

// Mean of in-table token vectors; zero vector (flagged) if none are in-table.
BowEmbedding bow_embed(std::span<const std::string> tokens, const WordVectorTable& table);

struct OcSvmConfig {
    double nu = 0.1;
    std::size_t steps = 10000;
    std::size_t batch_size = 0;  // 0 = full batch
    std::uint64_t seed = 0;
};

struct OcSvmModel {
    std::vector<double> w;
    double rho = 0.0;
    double nu = 0.1;
};

// Linear one-class SVM, primal
//   1/2 |w|^2 + 1/(nu n) sum max(0, rho - w.x_i) - rho
// by seeded mini-batch subgradient descent in w with step 1/t and iterate
// averaging over the second half. rho is profiled out at every step and set
// to its exact minimizer for the averaged w at the end.
OcSvmModel ocsvm_fit(std::span<const std::vector<double>> x, const OcSvmConfig& cfg = {});
// rho - w.x, higher = more anomalous.
double ocsvm_score(const OcSvmModel& model, std::span<const double> x);
double ocsvm_objective(const OcSvmModel& model, std::span<const std::vector<double>> x);

// Mean Euclidean distance to the k nearest training embeddings.
double knn_score(std::span<const double> query, std::span<const std::vector<double>> train, std::size_t k);
std::vector<double> knn_scores(std::span<const std::vector<double>> queries,
                               std::span<const std::vector<double>> train, std::size_t k);

} // namespace textad
