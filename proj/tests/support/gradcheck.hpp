#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "meansparse/autograd.hpp"
#include "meansparse/rng.hpp"

namespace meansparse::testing {

// Builds a scalar on the tape from one Var per input tensor.
using ScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheck {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor); the floor keeps
// entries that are zero up to rounding from dominating.
inline double rel_err(double a, double n, double floor = 1e-3) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
}

// Central differences with step h against reverse mode, every coordinate of
// every input listed in wrt.
inline GradCheck gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs, const std::vector<std::size_t>& wrt,
                           double h = 1e-5) {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const bool on = std::find(wrt.begin(), wrt.end(), i) != wrt.end();
        vars.push_back(tape.input(inputs[i], on));
    }
    tape.backward(f(tape, vars));
    GradCheck out;
    for (std::size_t i : wrt) {
        const Tensor analytic = tape.grad(vars[i]);
        for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[i][k] += h;
            minus[i][k] -= h;
            const double numeric = (eval_scalar(f, plus) - eval_scalar(f, minus)) / (2.0 * h);
            out.max_rel_err = std::max(out.max_rel_err, rel_err(analytic[k], numeric));
            ++out.checked;
        }
    }
    return out;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Entries at least `gap` away from every point in kinks.
inline Tensor random_away_from(Shape shape, Rng& rng, const std::vector<double>& kinks, double gap, double lo = -1.0,
                               double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        double v;
        bool near;
        do {
            v = rng.uniform(lo, hi);
            near = std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) < gap; });
        } while (near);
        t[i] = v;
    }
    return t;
}

// sum(f(x) * r) for a fixed random r, so every output coordinate contributes.
inline Var weighted_sum(Tape& tape, Var y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

}  // namespace meansparse::testing
