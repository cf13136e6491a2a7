#include "meansparse/prox.hpp"

#include <cmath>
#include <ostream>

#include "meansparse/rng.hpp"

namespace meansparse {

std::vector<double> hard_threshold(std::span<const double> v, double a) {
    if (!(a >= 0.0)) throw DomainError("hard-threshold level must be >= 0");
    const double cut = std::sqrt(a);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::abs(v[i]) > cut ? v[i] : 0.0;
    return out;
}

double prox_l0(double v, double t) {
    if (!(t >= 0.0)) throw DomainError("prox_l0 weight must be >= 0, got " + std::to_string(t));
    return std::abs(v) > std::sqrt(2.0 * t) ? v : 0.0;
}

std::vector<double> prox_l0(std::span<const double> v, double t) {
    if (!(t >= 0.0)) throw DomainError("prox_l0 weight must be >= 0, got " + std::to_string(t));
    return hard_threshold(v, 2.0 * t);
}

double prox_l0_bruteforce(double v, double t, double step) {
    double best_x = 0.0;
    double best = 0.5 * v * v;
    // Every nonzero grid point within |v| + 1 of the origin.
    const auto limit = static_cast<long long>(std::ceil((std::abs(v) + 1.0) / step));
    for (long long k = -limit; k <= limit; ++k) {
        if (k == 0) continue;
        const double x = static_cast<double>(k) * step;
        const double cost = t + 0.5 * (x - v) * (x - v);
        if (cost < best) {
            best = cost;
            best_x = x;
        }
    }
    return best_x;
}

PenaltyResult penalty_solve(const ProxProblem& p, std::size_t iters, double step) {
    if (!(p.gamma >= 0.0)) throw DomainError("gamma must be >= 0");
    if (!(p.lambda0 > 0.0)) throw DomainError("lambda0 must be positive");
    if (!(p.decay > 0.0 && p.decay < 1.0)) throw DomainError("lambda decay must lie in (0, 1)");
    if (!(step > 0.0)) throw DomainError("step must be positive");
    if (!p.loss || !p.features) throw ConfigError("prox problem needs a loss and a feature map");

    PenaltyResult r;
    Tensor theta = Tensor::vector(p.theta0);
    theta.set_requires_grad(true);
    auto features_at = [&](const Tensor& th) {
        Tape tape;
        Var a = p.features(tape, tape.constant(th));
        return std::vector<double>(a.value().values().begin(), a.value().values().end());
    };
    try {
        std::vector<double> a_prev = features_at(theta);
        for (std::size_t k = 0; k < iters; ++k) {
            const double lambda = p.lambda0 * std::pow(p.decay, static_cast<double>(k));
            const std::vector<double> w = prox_l0(a_prev, lambda * p.gamma);

            Tape tape;
            theta.clear_grad();
            Var th = tape.leaf(theta);
            Var a = p.features(tape, th);
            Var gap = sub(tape.constant(Tensor(a.shape(), w)), a);
            Var total = add(p.loss(tape, th), scale(sum(mul(gap, gap)), 1.0 / (2.0 * lambda)));
            tape.backward(total);
            for (std::size_t i = 0; i < theta.numel(); ++i) theta[i] -= step * theta.grad()[i];

            Tape eval;
            Var th_new = eval.constant(Tensor(theta.shape(), std::vector<double>(theta.values().begin(), theta.values().end())));
            const double loss = p.loss(eval, th_new).value().item();
            Var a_new = p.features(eval, th_new);
            const double cut = std::sqrt(2.0 * lambda * p.gamma);
            std::size_t active = 0;
            double gap2 = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double ai = a_new.value()[i];
                active += std::abs(ai) > cut;
                gap2 += (w[i] - ai) * (w[i] - ai);
            }
            const double objective = loss + p.gamma * static_cast<double>(active);
            r.trace.push_back({k, lambda, objective, std::sqrt(gap2), active});
            if (!std::isfinite(objective) || !std::isfinite(gap2)) {
                throw DivergenceError("penalty solver diverged at iteration " + std::to_string(k), r.trace);
            }
            a_prev.assign(a_new.value().values().begin(), a_new.value().values().end());
            r.w = w;
        }
    } catch (const DivergenceError&) {
        throw;
    } catch (const NumericError& e) {
        throw DivergenceError(std::string("penalty solver diverged: ") + e.what(), r.trace);
    }
    r.theta.assign(theta.values().begin(), theta.values().end());
    return r;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
    out << "iter,lambda,objective,penalty_gap,active_count\n";
    out.precision(17);
    for (const auto& row : trace) {
        out << row.iter << ',' << row.lambda << ',' << row.objective << ',' << row.penalty_gap << ','
            << row.active_count << '\n';
    }
}

ProxProblem quadratic_toy(std::uint64_t seed, double gamma, double lambda0) {
    const std::vector<double> target{3.0, -2.0, 0.0, 0.0, 1.5, 0.0, 0.0, -2.5, 0.0, 0.0, 2.0, 0.0};
    Rng rng(seed);
    ProxProblem p;
    p.gamma = gamma;
    p.lambda0 = lambda0;
    for (double t : target) p.theta0.push_back(t + 0.5 * rng.normal());
    p.loss = [target](Tape& tape, Var theta) {
        Var d = sub(theta, tape.constant(Tensor::vector(target)));
        return scale(sum(mul(d, d)), 0.5);
    };
    p.features = [](Tape&, Var theta) { return theta; };
    return p;
}

ProxProblem regression_toy(std::uint64_t seed, double gamma, double lambda0) {
    constexpr std::size_t n = 64, d = 4, h = 6;
    Rng rng(seed);
    std::vector<double> xs(n * d), ys(n);
    for (auto& v : xs) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = xs.data() + i * d;
        ys[i] = std::max(0.0, x[0] - 0.5 * x[1]) + 0.5 * std::max(0.0, x[2]) + 0.05 * rng.normal();
    }
    // Zero-mean input columns make every hidden pre-activation zero-mean over
    // the samples, for any weights.
    for (std::size_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += xs[i * d + j];
        m /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) xs[i * d + j] -= m;
    }
    ProxProblem p;
    p.gamma = gamma;
    p.lambda0 = lambda0;
    p.theta0.resize(h * d + h);
    for (auto& v : p.theta0) v = 0.5 * rng.normal();
    // theta = [W1 (h x d) | w2 (h)]
    auto hidden = [xs](Tape& tape, Var theta) {
        Var w1 = reshape(slice(theta, 0, h * d), {h, d});
        return matmul(tape.constant(Tensor({n, d}, xs)), transpose(w1));
    };
    p.features = [hidden](Tape& tape, Var theta) { return reshape(hidden(tape, theta), {n * h}); };
    p.loss = [hidden, ys](Tape& tape, Var theta) {
        Var w2 = reshape(slice(theta, h * d, h), {h, 1});
        Var pred = reshape(matmul(relu(hidden(tape, theta)), w2), {n});
        Var err = sub(pred, tape.constant(Tensor::vector(ys)));
        return mean(mul(err, err));
    };
    return p;
}

}  // namespace meansparse
