#include "meansparse/attacks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "meansparse/error.hpp"
#include "meansparse/log.hpp"
#include "meansparse/parallel.hpp"
#include "meansparse/rng.hpp"

namespace meansparse {

std::string_view norm_name(Norm n) { return n == Norm::Linf ? "linf" : "l2"; }

Norm parse_norm(std::string_view text) {
    if (text == "linf") return Norm::Linf;
    if (text == "l2") return Norm::L2;
    throw ConfigError("unknown norm '" + std::string(text) + "' (expected linf or l2)");
}

std::string_view attack_loss_name(AttackLoss l) { return l == AttackLoss::CrossEntropy ? "ce" : "dlr"; }

AttackLoss parse_attack_loss(std::string_view text) {
    if (text == "ce") return AttackLoss::CrossEntropy;
    if (text == "dlr") return AttackLoss::DLR;
    throw ConfigError("unknown attack loss '" + std::string(text) + "' (expected ce or dlr)");
}

std::string_view attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::FGSM: return "fgsm";
        case AttackKind::PGD: return "pgd";
        case AttackKind::MomentumPGD: return "mpgd";
    }
    return "pgd";
}

AttackKind parse_attack_kind(std::string_view text) {
    if (text == "fgsm") return AttackKind::FGSM;
    if (text == "pgd") return AttackKind::PGD;
    if (text == "mpgd" || text == "apgd-ce") return AttackKind::MomentumPGD;
    throw ConfigError("unknown attack '" + std::string(text) + "' (expected fgsm, pgd or mpgd)");
}

namespace {

double parse_double(std::string_view text) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError("not a number: '" + std::string(text) + "'");
    }
    return v;
}

}  // namespace

double parse_rational(std::string_view text) {
    const auto slash = text.find('/');
    if (slash == std::string_view::npos) return parse_double(text);
    const double num = parse_double(text.substr(0, slash));
    const double den = parse_double(text.substr(slash + 1));
    if (den == 0.0) throw ConfigError("zero denominator in '" + std::string(text) + "'");
    return num / den;
}

void AttackSpec::validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be finite and >= 0");
    if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ConfigError("step size must be finite and >= 0");
    if (steps < 1) throw ConfigError("attack needs at least one step");
    if (restarts < 1) throw ConfigError("attack needs at least one restart");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

std::string AttackSpec::label() const {
    std::ostringstream os;
    os.precision(10);
    os << attack_kind_name(kind) << '-' << norm_name(norm) << "-eps" << epsilon << "-s" << steps << "-r" << restarts
       << '-' << attack_loss_name(loss);
    return os.str();
}

AttackLoss effective_loss(AttackLoss requested, std::size_t classes) {
    if (requested == AttackLoss::DLR && classes < 4) {
        log_warn("DLR loss needs at least 4 classes, got " + std::to_string(classes) + "; using cross-entropy");
        return AttackLoss::CrossEntropy;
    }
    return requested;
}

std::vector<double> per_sample_loss(const Tensor& logits, std::span<const int> y, AttackLoss loss) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> out(n);
    std::vector<std::size_t> order(k);
    for (std::size_t r = 0; r < n; ++r) {
        const double* z = logits.data() + r * k;
        const auto label = static_cast<std::size_t>(y[r]);
        if (loss == AttackLoss::CrossEntropy) {
            const double m = *std::max_element(z, z + k);
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
            out[r] = -(z[label] - (m + std::log(s)));
        } else {
            for (std::size_t j = 0; j < k; ++j) order[j] = j;
            std::stable_sort(order.begin(), order.end(), [z](std::size_t a, std::size_t b) { return z[a] > z[b]; });
            const std::size_t other = order[0] == label ? order[1] : order[0];
            out[r] = -(z[label] - z[other]) / (z[order[0]] - z[order[2]] + 1e-12);
        }
    }
    return out;
}

namespace {

struct LossGrad {
    std::vector<double> losses;
    Tensor grad;
};

LossGrad loss_and_grad(const Classifier& model, const Tensor& x, std::span<const int> y, AttackLoss loss) {
    Tape tape;
    Var xv = tape.input(x, true);
    Var logits = model.logits(tape, xv);
    Var total = loss == AttackLoss::CrossEntropy ? cross_entropy(logits, y, Reduction::Sum)
                                                 : dlr_loss(logits, y, Reduction::Sum);
    tape.backward(total);
    return {per_sample_loss(logits.value(), y, loss), tape.grad(xv)};
}

std::vector<double> losses_at(const Classifier& model, const Tensor& x, std::span<const int> y, AttackLoss loss) {
    Tape tape;
    Var logits = model.logits(tape, tape.constant(x));
    return per_sample_loss(logits.value(), y, loss);
}

void check_inputs(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
    spec.validate();
    if (x.rank() < 2 || x.dim(0) != y.size()) {
        throw ShapeError("attack input " + shape_to_string(x.shape()) + " does not match " + std::to_string(y.size()) +
                         " labels");
    }
    for (int label : y)
        if (label < 0 || static_cast<std::size_t>(label) >= model.classes()) throw DataError("label out of range");
}

// Largest box [lo, hi] inside [0,1] with fl(hi - x) <= eps and fl(x - lo) <= eps.
double upper_bound(double x, double eps) {
    double hi = std::min(1.0, x + eps);
    while (hi - x > eps) hi = std::nextafter(hi, x);
    return hi;
}

double lower_bound(double x, double eps) {
    double lo = std::max(0.0, x - eps);
    while (x - lo > eps) lo = std::nextafter(lo, x);
    return lo;
}

void project_row(const double* x, double* xa, std::size_t d, Norm norm, double eps) {
    if (norm == Norm::Linf) {
        for (std::size_t i = 0; i < d; ++i) xa[i] = std::clamp(xa[i], lower_bound(x[i], eps), upper_bound(x[i], eps));
        return;
    }
    double n2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) n2 += (xa[i] - x[i]) * (xa[i] - x[i]);
    const double n = std::sqrt(n2);
    const double factor = n > eps ? eps / n : 1.0;
    for (std::size_t i = 0; i < d; ++i) xa[i] = std::clamp(x[i] + (xa[i] - x[i]) * factor, 0.0, 1.0);
}

double l1_norm(const double* v, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += std::abs(v[i]);
    return s;
}

double l2_norm(const double* v, std::size_t d) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += v[i] * v[i];
    return std::sqrt(s);
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct Variant {
    double momentum;
    bool halving;
    bool best_iterate;
};

Tensor iterate_attack(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                      std::uint64_t first_index, const IterateObserver& observer, const Variant& variant) {
    check_inputs(model, x, y, spec);
    const AttackLoss loss = effective_loss(spec.loss, model.classes());
    const std::size_t n = x.dim(0), d = x.numel() / n;
    const double eps = spec.epsilon;

    std::vector<Rng> rngs;
    rngs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) rngs.push_back(sample_rng(spec.seed, first_index + i));

    std::vector<std::size_t> halving_steps;
    if (variant.halving)
        for (double f : kHalvingFractions) halving_steps.push_back(static_cast<std::size_t>(std::floor(f * static_cast<double>(spec.steps))));

    Tensor best = x;
    std::vector<double> best_loss(n, -std::numeric_limits<double>::infinity());
    std::vector<double> fallback(n * d), buffer(n * d);

    for (std::size_t r = 0; r < spec.restarts; ++r) {
        Tensor cur = x;
        for (std::size_t i = 0; i < n; ++i) {
            double* fb = fallback.data() + i * d;
            double* xa = cur.data() + i * d;
            const double* x0 = x.data() + i * d;
            Rng& rng = rngs[i];
            if (spec.uses_random_start()) {
                if (spec.norm == Norm::Linf) {
                    for (std::size_t j = 0; j < d; ++j) fb[j] = rng.uniform(-eps, eps);
                } else {
                    for (std::size_t j = 0; j < d; ++j) fb[j] = rng.normal();
                    const double radius = eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
                    const double len = l2_norm(fb, d);
                    for (std::size_t j = 0; j < d; ++j) fb[j] *= len > 0.0 ? radius / len : 0.0;
                }
                for (std::size_t j = 0; j < d; ++j) xa[j] = x0[j] + fb[j];
                project_row(x0, xa, d, spec.norm, eps);
            } else {
                for (std::size_t j = 0; j < d; ++j) fb[j] = rng.normal();
            }
        }
        std::fill(buffer.begin(), buffer.end(), 0.0);
        double eta = spec.step_size;
        Tensor iter_best = cur;
        std::vector<double> iter_best_loss(n, -std::numeric_limits<double>::infinity());
        auto track = [&](const std::vector<double>& losses, const Tensor& at) {
            for (std::size_t i = 0; i < n; ++i) {
                if (losses[i] > iter_best_loss[i]) {
                    iter_best_loss[i] = losses[i];
                    std::copy_n(at.data() + i * d, d, iter_best.data() + i * d);
                }
            }
        };

        std::vector<double> dir(d);
        for (std::size_t k = 0; k < spec.steps; ++k) {
            if (std::find(halving_steps.begin(), halving_steps.end(), k) != halving_steps.end() && k > 0) eta *= 0.5;
            LossGrad lg = loss_and_grad(model, cur, y, loss);
            if (variant.best_iterate) track(lg.losses, cur);
            for (std::size_t i = 0; i < n; ++i) {
                const double* g = lg.grad.data() + i * d;
                const double* v = l1_norm(g, d) > 0.0 ? g : fallback.data() + i * d;
                if (variant.momentum > 0.0) {
                    double* buf = buffer.data() + i * d;
                    const double scale_v = 1.0 / l1_norm(v, d);
                    for (std::size_t j = 0; j < d; ++j) buf[j] = variant.momentum * buf[j] + v[j] * scale_v;
                    std::copy_n(buf, d, dir.data());
                } else {
                    std::copy_n(v, d, dir.data());
                }
                double* xa = cur.data() + i * d;
                if (spec.norm == Norm::Linf) {
                    for (std::size_t j = 0; j < d; ++j) xa[j] += eta * sign(dir[j]);
                } else {
                    const double len = l2_norm(dir.data(), d);
                    if (len > 0.0)
                        for (std::size_t j = 0; j < d; ++j) xa[j] += eta * dir[j] / len;
                }
                project_row(x.data() + i * d, xa, d, spec.norm, eps);
            }
            if (observer) observer(r, k, cur);
        }
        std::vector<double> final_loss = losses_at(model, cur, y, loss);
        if (variant.best_iterate) {
            track(final_loss, cur);
            cur = iter_best;
            final_loss = iter_best_loss;
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (final_loss[i] > best_loss[i]) {
                best_loss[i] = final_loss[i];
                std::copy_n(cur.data() + i * d, d, best.data() + i * d);
            }
        }
    }
    return best;
}

}  // namespace

Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec) {
    check_inputs(model, x, y, spec);
    const AttackLoss loss = effective_loss(spec.loss, model.classes());
    const std::size_t n = x.dim(0), d = x.numel() / n;
    const LossGrad lg = loss_and_grad(model, x, y, loss);
    Tensor out = x;
    for (std::size_t i = 0; i < n; ++i) {
        double* xa = out.data() + i * d;
        const double* g = lg.grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) xa[j] += spec.epsilon * sign(g[j]);
        project_row(x.data() + i * d, xa, d, Norm::Linf, spec.epsilon);
    }
    return out;
}

Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
           std::uint64_t first_index, const IterateObserver& observer) {
    return iterate_attack(model, x, y, spec, first_index, observer, {0.0, false, false});
}

Tensor momentum_pgd_ce(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                       std::uint64_t first_index, const IterateObserver& observer) {
    return iterate_attack(model, x, y, spec, first_index, observer, {spec.momentum, spec.step_halving, true});
}

Tensor run_attack(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                  std::uint64_t first_index) {
    switch (spec.kind) {
        case AttackKind::FGSM: return fgsm(model, x, y, spec);
        case AttackKind::PGD: return pgd(model, x, y, spec, first_index);
        case AttackKind::MomentumPGD: return momentum_pgd_ce(model, x, y, spec, first_index);
    }
    return x;
}

std::vector<double> perturbation_norms(const Tensor& x, const Tensor& x_adv, Norm norm) {
    if (x.shape() != x_adv.shape()) throw ShapeError("perturbation shapes differ");
    const std::size_t n = x.dim(0), d = x.numel() / n;
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double delta = x_adv[i * d + j] - x[i * d + j];
            if (norm == Norm::Linf) {
                acc = std::max(acc, std::abs(delta));
            } else {
                acc += delta * delta;
            }
        }
        out[i] = norm == Norm::Linf ? acc : std::sqrt(acc);
    }
    return out;
}

bool feasible(const Tensor& x, const Tensor& x_adv, Norm norm, double epsilon) {
    for (double v : x_adv.values())
        if (!(v >= 0.0 && v <= 1.0)) return false;
    const double bound = norm == Norm::Linf ? epsilon : epsilon * (1.0 + 1e-9);
    for (double dist : perturbation_norms(x, x_adv, norm))
        if (!(dist <= bound)) return false;
    return true;
}

RobustResult evaluate_robust(const Classifier& model, const Dataset& data, const AttackSpec& spec,
                             std::size_t batch_size) {
    if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    const std::size_t n = data.size();
    const std::size_t batches = (n + batch_size - 1) / batch_size;
    RobustResult res;
    res.clean_correct.assign(n, false);
    res.robust_correct.assign(n, false);
    std::vector<char> ok(batches, 1);
    std::vector<char> clean(n, 0), robust(n, 0);
    parallel_for(batches, [&](std::size_t b) {
        const std::size_t begin = b * batch_size, end = std::min(n, begin + batch_size);
        const Tensor x = data.batch(begin, end);
        const auto y = data.labels_range(begin, end);
        Tape tape;
        const auto pred = predict(model.logits(tape, tape.constant(x)).value());
        const Tensor adv = run_attack(model, x, y, spec, begin);
        ok[b] = feasible(x, adv, spec.kind == AttackKind::FGSM ? Norm::Linf : spec.norm, spec.epsilon);
        Tape tape_adv;
        const auto pred_adv = predict(model.logits(tape_adv, tape_adv.constant(adv)).value());
        for (std::size_t i = 0; i < end - begin; ++i) {
            clean[begin + i] = pred[i] == y[i];
            robust[begin + i] = clean[begin + i] && pred_adv[i] == y[i];
        }
    });
    std::size_t nc = 0, nr = 0;
    for (std::size_t i = 0; i < n; ++i) {
        res.clean_correct[i] = clean[i];
        res.robust_correct[i] = robust[i];
        nc += clean[i] != 0;
        nr += robust[i] != 0;
    }
    res.clean_acc = static_cast<double>(nc) / static_cast<double>(n);
    res.robust_acc = static_cast<double>(nr) / static_cast<double>(n);
    res.all_feasible = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
    return res;
}

double clean_accuracy(const Classifier& model, const Dataset& data, std::size_t batch_size) {
    if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
    const std::size_t n = data.size();
    const std::size_t batches = (n + batch_size - 1) / batch_size;
    std::vector<std::size_t> correct(batches, 0);
    parallel_for(batches, [&](std::size_t b) {
        const std::size_t begin = b * batch_size, end = std::min(n, begin + batch_size);
        Tape tape;
        const auto pred = predict(model.logits(tape, tape.constant(data.batch(begin, end))).value());
        const auto y = data.labels_range(begin, end);
        for (std::size_t i = 0; i < pred.size(); ++i) correct[b] += pred[i] == y[i];
    });
    std::size_t total = 0;
    for (auto c : correct) total += c;
    return static_cast<double>(total) / static_cast<double>(n);
}

}  // namespace meansparse
