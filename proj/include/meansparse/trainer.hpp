#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "meansparse/attacks.hpp"
#include "meansparse/data.hpp"
#include "meansparse/nn.hpp"

namespace meansparse {

enum class TrainMode { Standard, PGD_AT, TRADES };
std::string_view train_mode_name(TrainMode m);  // "standard", "pgd", "trades"
TrainMode parse_train_mode(std::string_view text);

enum class SelectionRule { BestPgd, Last };

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    double lr = 0.1;
    std::vector<std::size_t> decay_epochs{15, 25};  // lr *= lr_factor at each
    double lr_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    TrainMode mode = TrainMode::PGD_AT;
    double trades_beta = 0.6;
    // Inner maximization for PGD_AT and TRADES.
    AttackSpec at_attack = [] {
        AttackSpec a;
        a.steps = 10;
        a.step_size = 0.0078;
        a.random_start = true;
        return a;
    }();
    // Attack used for per-epoch model selection on the validation split.
    AttackSpec select_attack = at_attack;
    SelectionRule selection = SelectionRule::BestPgd;
    std::size_t val_size = 500;  // leading validation samples used; 0 means all
    bool augment = false;
    std::size_t augment_pad = 4;
    std::uint64_t seed = 0;

    void validate() const;
    double lr_at(std::size_t epoch) const;
};

struct EpochRecord {
    std::size_t epoch;
    double lr;
    double train_loss;
    double clean_val_acc;
    double pgd_val_acc;
};

struct TrainResult {
    Model best_model;
    Model last_model;
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
};

// Training loss of one batch on the tape: train-mode forward, running
// statistics updated. Adversarial inputs come from an eval-mode attack.
// first_index seeds the per-sample attack streams.
Var training_loss(Tape& tape, Model& model, const Tensor& x, std::span<const int> y, const TrainConfig& cfg,
                  std::uint64_t first_index);

// TRADES inner maximization of KL(f(x) || f(x')) from x + 0.001 N(0,1).
Tensor trades_adversary(const Model& model, const Tensor& x, const AttackSpec& spec, std::uint64_t first_index);

// SGD with momentum and coupled weight decay (decay added to the gradient).
class Sgd {
   public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(Model& model, double lr);

   private:
    double momentum_, weight_decay_;
    std::vector<std::vector<double>> buffers_;
};

TrainResult train(Model model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg);

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

}  // namespace meansparse
