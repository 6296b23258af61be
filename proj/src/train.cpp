#include "textad/train.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "textad/optim.hpp"
#include "textad/rng.hpp"

namespace textad {

void TrainConfig::validate() const {
    if (max_steps == 0) throw std::invalid_argument("TrainConfig: max_steps must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (eval_interval == 0) throw std::invalid_argument("TrainConfig: eval_interval must be >= 1");
    if (patience == 0) throw std::invalid_argument("TrainConfig: patience must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
}

TrainResult train(EncoderModel model, const Objective& objective, std::span<const TokenSequence> train_set,
                  std::span<const TokenSequence> val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    if (val_set.empty()) throw std::invalid_argument("train: empty validation set");
    objective.check_model(model);

    Adam adam;
    Rng order_rng(mix_seed(cfg.seed, 0x0DE5));
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();
    const std::size_t bs = std::min(cfg.batch_size, train_set.size());
    const std::uint64_t val_seed = mix_seed(cfg.seed, 0x7A1);

    TrainResult result{model, {}, 0, std::numeric_limits<double>::infinity(), 0, false};
    std::size_t since_best = 0;
    double train_acc = 0.0;
    std::size_t train_n = 0;
    std::vector<TokenSequence> batch;
    batch.reserve(bs);

    for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
        batch.clear();
        while (batch.size() < bs) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(train_set[order[cursor++]]);
        }

        Tape tape;
        model.parameters().zero_grad();
        Tensor loss = objective.batch_loss(tape, model, batch, mix_seed(cfg.seed, step), true);
        tape.backward(loss);
        clip_grad_norm(model.parameters(), cfg.grad_clip);
        adam.step(model.parameters(), cfg.learning_rate);
        train_acc += loss.item();
        ++train_n;
        result.steps_run = step;

        if (step % cfg.eval_interval == 0 || step == cfg.max_steps) {
            const double val = objective.validation_loss(model, val_set, val_seed);
            result.history.push_back({step, train_acc / static_cast<double>(train_n), val});
            train_acc = 0.0;
            train_n = 0;
            if (val < result.best_val_loss) {
                result.best_val_loss = val;
                result.best_step = step;
                result.model.parameters().assign_values(model.parameters());
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                result.early_stopped = step < cfg.max_steps;
                break;
            }
        }
    }
    result.model.parameters().zero_grad();
    return result;
}

std::string history_csv(const std::vector<HistoryEntry>& history) {
    std::ostringstream os;
    os << "step,train_loss,val_loss\n" << std::setprecision(17);
    for (const auto& h : history) os << h.step << ',' << h.train_loss << ',' << h.val_loss << '\n';
    return os.str();
}

void write_history_csv(const std::filesystem::path& path, const std::vector<HistoryEntry>& history) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << history_csv(history);
}

} // namespace textad
