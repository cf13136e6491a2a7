#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "meansparse/autograd.hpp"
#include "meansparse/error.hpp"

namespace meansparse {

// H_a: keeps v_i where |v_i| > sqrt(a), zero otherwise. a >= 0.
std::vector<double> hard_threshold(std::span<const double> v, double a);
// argmin_x t*||x||_0 + 0.5*||x - v||^2 = H_{2t}(v); the tie |v| = sqrt(2t) maps to 0.
double prox_l0(double v, double t);
std::vector<double> prox_l0(std::span<const double> v, double t);

// Reference minimizer of t*[x != 0] + 0.5*(x - v)^2 over {0} and the grid
// {k * step}; ties keep the first candidate examined, which is 0.
double prox_l0_bruteforce(double v, double t, double step = 1e-4);

struct ProxProblem {
    double gamma = 1.0;    // weight of the l0 term
    double lambda0 = 0.5;  // initial penalty parameter
    double decay = 0.95;   // lambda_k = lambda0 * decay^k
    std::vector<double> theta0;
    std::function<Var(Tape&, Var theta)> loss;      // scalar L(theta)
    std::function<Var(Tape&, Var theta)> features;  // mean-centered a(theta), 1-D
};

struct TraceRow {
    std::size_t iter;
    double lambda;
    double objective;    // L + gamma * active_count
    double penalty_gap;  // ||w - a(theta)||
    std::size_t active_count;  // |a_i| > sqrt(2 lambda gamma)
};

struct PenaltyResult {
    std::vector<double> theta, w;
    std::vector<TraceRow> trace;
};

class DivergenceError : public NumericError {
   public:
    DivergenceError(const std::string& what, std::vector<TraceRow> trace)
        : NumericError(what), trace_(std::move(trace)) {}
    const std::vector<TraceRow>& trace() const noexcept { return trace_; }

   private:
    std::vector<TraceRow> trace_;
};

// Alternates w_k = H_{2 lambda gamma}(a(theta_{k-1})) with one gradient step on
// L(theta) + ||w_k - a(theta)||^2 / (2 lambda).
PenaltyResult penalty_solve(const ProxProblem& p, std::size_t iters, double step);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

// L = 0.5 * ||theta - target||^2 with a(theta) = theta. The target mixes exact
// zeros with entries of magnitude >= 1.5, so the sparse optimum is the target
// itself once sqrt(2 gamma) < 1.5.
ProxProblem quadratic_toy(std::uint64_t seed, double gamma = 0.5, double lambda0 = 1.0);
// Least squares through a 2-layer ReLU net; a(theta) are the hidden
// pre-activations centered over the sample axis.
ProxProblem regression_toy(std::uint64_t seed, double gamma = 0.05, double lambda0 = 0.5);

}  // namespace meansparse
