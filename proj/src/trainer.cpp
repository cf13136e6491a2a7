#include "meansparse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "meansparse/error.hpp"
#include "meansparse/log.hpp"
#include "meansparse/parallel.hpp"
#include "meansparse/rng.hpp"

namespace meansparse {

std::string_view train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::Standard: return "standard";
        case TrainMode::PGD_AT: return "pgd";
        case TrainMode::TRADES: return "trades";
    }
    return "pgd";
}

TrainMode parse_train_mode(std::string_view text) {
    if (text == "standard") return TrainMode::Standard;
    if (text == "pgd") return TrainMode::PGD_AT;
    if (text == "trades") return TrainMode::TRADES;
    throw ConfigError("unknown training mode '" + std::string(text) + "' (expected standard, pgd or trades)");
}

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(lr_factor > 0.0)) throw ConfigError("lr factor must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (mode == TrainMode::TRADES && !(trades_beta > 0.0)) throw ConfigError("TRADES needs beta > 0");
    if (mode != TrainMode::Standard) at_attack.validate();
    select_attack.validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
    double v = lr;
    for (auto e : decay_epochs)
        if (epoch >= e) v *= lr_factor;
    return v;
}

namespace {

// Attack chunks are independent, so they may run on several workers.
Tensor parallel_attack(const Model& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                       std::uint64_t first_index) {
    const std::size_t n = x.dim(0), d = x.numel() / n;
    const std::size_t workers = std::min(num_threads(), n);
    if (workers <= 1) return pgd(model, x, y, spec, first_index);
    const std::size_t chunk = (n + workers - 1) / workers;
    Tensor out(x.shape());
    parallel_for(workers, [&](std::size_t w) {
        const std::size_t begin = w * chunk, end = std::min(n, begin + chunk);
        if (begin >= end) return;
        Shape s = x.shape();
        s[0] = end - begin;
        Tensor part(s, std::vector<double>(x.data() + begin * d, x.data() + end * d));
        const Tensor adv = pgd(model, part, y.subspan(begin, end - begin), spec, first_index + begin);
        std::copy(adv.values().begin(), adv.values().end(), out.data() + begin * d);
    });
    return out;
}

}  // namespace

Tensor trades_adversary(const Model& model, const Tensor& x, const AttackSpec& spec, std::uint64_t first_index) {
    const std::size_t n = x.dim(0), d = x.numel() / n;
    Tape clean_tape;
    const Tensor p_logits = model.logits(clean_tape, clean_tape.constant(x)).value();
    Tensor adv = x;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = sample_rng(spec.seed, first_index + i);
        for (std::size_t j = 0; j < d; ++j) adv[i * d + j] += 0.001 * rng.normal();
    }
    auto project = [&](Tensor& a) {
        for (std::size_t i = 0; i < a.numel(); ++i) {
            double hi = std::min(1.0, x[i] + spec.epsilon), lo = std::max(0.0, x[i] - spec.epsilon);
            while (hi - x[i] > spec.epsilon) hi = std::nextafter(hi, x[i]);
            while (x[i] - lo > spec.epsilon) lo = std::nextafter(lo, x[i]);
            a[i] = std::clamp(a[i], lo, hi);
        }
    };
    project(adv);
    for (std::size_t k = 0; k < spec.steps; ++k) {
        Tape tape;
        Var xa = tape.input(adv, true);
        Var kl = kl_divergence(tape.constant(p_logits), model.logits(tape, xa), Reduction::Sum);
        tape.backward(kl);
        const Tensor g = tape.grad(xa);
        for (std::size_t i = 0; i < adv.numel(); ++i) adv[i] += spec.step_size * (g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0));
        project(adv);
    }
    return adv;
}

Var training_loss(Tape& tape, Model& model, const Tensor& x, std::span<const int> y, const TrainConfig& cfg,
                  std::uint64_t first_index) {
    switch (cfg.mode) {
        case TrainMode::Standard: return cross_entropy(model.forward_train(tape, tape.constant(x)), y);
        case TrainMode::PGD_AT: {
            const Tensor adv = parallel_attack(model, x, y, cfg.at_attack, first_index);
            return cross_entropy(model.forward_train(tape, tape.constant(adv)), y);
        }
        case TrainMode::TRADES: {
            const Tensor adv = trades_adversary(model, x, cfg.at_attack, first_index);
            Var clean = model.forward_train(tape, tape.constant(x));
            Var robust = model.forward_train(tape, tape.constant(adv));
            return add(cross_entropy(clean, y), scale(kl_divergence(clean, robust), cfg.trades_beta));
        }
    }
    throw ConfigError("unknown training mode");
}

void Sgd::step(Model& model, double lr) {
    auto params = model.parameters();
    if (buffers_.empty()) {
        for (auto& p : params) buffers_.emplace_back(p.tensor->numel(), 0.0);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& t = *params[k].tensor;
        if (!t.has_grad()) continue;
        const auto g = t.grad();
        auto& buf = buffers_[k];
        const double wd = params[k].decay ? weight_decay_ : 0.0;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            buf[i] = momentum_ * buf[i] + g[i] + wd * t[i];
            t[i] -= lr * buf[i];
        }
    }
    model.project_activation_params();
}

TrainResult train(Model model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0) throw DataError("training set is empty");
    if (val_set.size() == 0) throw DataError("validation set is empty");
    const std::size_t n = train_set.size();
    Dataset val = val_set;
    if (cfg.val_size > 0 && cfg.val_size < val.size()) {
        std::vector<std::size_t> head(cfg.val_size);
        std::iota(head.begin(), head.end(), std::size_t{0});
        val = val_set.subset(head);
    }

    Rng rng(cfg.seed);
    Sgd opt(cfg.momentum, cfg.weight_decay);
    TrainResult result;
    double best_pgd = -1.0, best_clean = -1.0;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        const double lr = cfg.lr_at(epoch);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(n, begin + cfg.batch_size);
            const std::span<const std::size_t> idx(order.data() + begin, end - begin);
            Tensor x = train_set.gather(idx);
            const std::vector<int> y = train_set.gather_labels(idx);
            if (cfg.augment) augment_batch(x, cfg.augment_pad, rng);
            model.zero_grad();
            Tape tape;
            Var loss;
            try {
                loss = training_loss(tape, model, x, y, cfg, epoch * n + begin);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(begin / cfg.batch_size) + ": " + e.what());
            }
            tape.backward(loss);
            opt.step(model, lr);
            loss_sum += loss.value().item() * static_cast<double>(end - begin);
            seen += end - begin;
        }
        EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(seen), 0.0, 0.0};
        const RobustResult eval = evaluate_robust(model, val, cfg.select_attack);
        rec.clean_val_acc = eval.clean_acc;
        rec.pgd_val_acc = eval.robust_acc;
        result.history.push_back(rec);
        log_info("epoch " + std::to_string(epoch) + " lr " + std::to_string(lr) + " loss " + std::to_string(rec.train_loss) +
                 " clean " + std::to_string(rec.clean_val_acc) + " pgd " + std::to_string(rec.pgd_val_acc));
        const bool better = cfg.selection == SelectionRule::Last || rec.pgd_val_acc > best_pgd ||
                            (rec.pgd_val_acc == best_pgd && rec.clean_val_acc >= best_clean);
        if (better) {
            best_pgd = rec.pgd_val_acc;
            best_clean = rec.clean_val_acc;
            result.best_model = model;
            result.best_epoch = epoch;
        }
    }
    result.last_model = std::move(model);
    return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << "epoch,lr,train_loss,clean_val_acc,pgd_val_acc\n";
    out.precision(17);
    for (const auto& r : history) {
        out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.clean_val_acc << ',' << r.pgd_val_acc << '\n';
    }
}

}  // namespace meansparse
