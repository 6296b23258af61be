#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "textad/encoder.hpp"
#include "textad/objectives.hpp"

namespace textad {

struct TrainConfig {
    std::size_t max_steps = 30000;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::size_t eval_interval = 100;
    std::size_t patience = 5;  // evaluations without improvement before stopping
    std::uint64_t seed = 0;
    double grad_clip = 1.0;    // <= 0 disables

    void validate() const;
};

struct HistoryEntry {
    std::size_t step = 0;
    double train_loss = 0.0;  // mean batch loss since the previous evaluation
    double val_loss = 0.0;
};

struct TrainResult {
    EncoderModel model;  // parameters at the best validation loss
    std::vector<HistoryEntry> history;
    std::size_t best_step = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t steps_run = 0;
    bool early_stopped = false;
};

// Adam on batches drawn by seeded epoch shuffles; evaluation every
// eval_interval steps and at the last step.
TrainResult train(EncoderModel model, const Objective& objective, std::span<const TokenSequence> train_set,
                  std::span<const TokenSequence> val_set, const TrainConfig& cfg);

// CSV with header step,train_loss,val_loss.
void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryEntry>& history);
std::string history_csv(const std::vector<HistoryEntry>& history);

} // namespace textad
