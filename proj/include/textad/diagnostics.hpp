#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "textad/encoder.hpp"
#include "textad/objectives.hpp"

namespace textad {

struct ProbeConfig {
    std::size_t folds = 5;
    double l2 = 1e-3;
    std::size_t steps = 400;
    double learning_rate = 1.0;
    std::uint64_t seed = 0;
};

struct ProbeReport {
    double accuracy = 0.0;  // mean over folds
    std::size_t folds = 0;
    std::string source;
    std::vector<double> fold_accuracies;
};

// Stratified k-fold accuracy of an L2-regularized logistic classifier
// (inliers = 0, anomalies = 1). Features are whitened with the training
// fold's mean and covariance before full-batch gradient descent.
ProbeReport separability_probe(std::span<const std::vector<double>> inliers,
                               std::span<const std::vector<double>> anomalies, const ProbeConfig& cfg = {},
                               std::string source = {});

// Differentiable loss as a function of the token-embedding rows of one
// document ([length, d], the trimmed single-sequence layout).
using InputLoss = std::function<Tensor(Tape&, const Tensor& token_rows, const TokenSequence& seq, std::size_t index)>;

InputLoss objective_input_loss(const Objective& objective, const EncoderModel& model,
                               std::span<const std::uint64_t> keys);

struct BrittlenessReport {
    double mean_grad_norm = 0.0;
    double covariance_trace = 0.0;
    double ratio = 0.0;
    double log_ratio = 0.0;  // -inf when ratio is 0
    std::size_t documents = 0;
};

// L2 norm of d(loss)/d(token embedding rows) for one document.
double input_gradient_norm(const EncoderModel& model, const InputLoss& loss, const TokenSequence& seq,
                           std::size_t index, std::vector<double>* gradient_out = nullptr);

// Trace of the (n-1)-normalized covariance of the given vectors.
double covariance_trace(std::span<const std::vector<double>> vectors);

// Mean input-gradient norm over docs divided by the covariance trace of the
// docs' mean-pooled final-layer embeddings.
BrittlenessReport brittleness(const EncoderModel& model, const InputLoss& loss, std::span<const TokenSequence> docs);
BrittlenessReport brittleness(const EncoderModel& model, const Objective& objective,
                              std::span<const TokenSequence> docs, std::span<const std::uint64_t> keys);

} // namespace textad
