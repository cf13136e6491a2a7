#include <doctest.h>

#include <cmath>
#include <sstream>

#include "gradcheck.hpp"
#include "meansparse/error.hpp"
#include "meansparse/prox.hpp"

using namespace meansparse;

TEST_CASE("hard threshold examples") {
    const std::vector<double> v{1.0, 3.0, -2.0};
    CHECK(prox_l0(v, 2.0) == std::vector<double>{0.0, 3.0, 0.0});
    CHECK(prox_l0(1.9, 2.0) == 0.0);
    CHECK(prox_l0(v, 0.0) == v);
    CHECK(hard_threshold(v, 4.0) == std::vector<double>{0.0, 3.0, 0.0});
    CHECK_THROWS_AS(prox_l0(1.0, -0.1), DomainError);
}

TEST_CASE("the tie |v| = sqrt(2t) maps to zero") {
    for (double x : {0.5, 1.0, 2.0, 3.0}) {
        const double t = x * x / 2.0;
        CHECK(prox_l0(x, t) == 0.0);
        CHECK(prox_l0(-x, t) == 0.0);
        CHECK(prox_l0_bruteforce(x, t) == 0.0);
    }
}

TEST_CASE("closed form equals grid brute force on grid-valued inputs") {
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const double v = static_cast<double>(static_cast<long long>(rng.uniform(-30000.0, 30000.0))) * 1e-4;
        const double t = rng.uniform(0.0, 4.0);
        CHECK(prox_l0(v, t) == prox_l0_bruteforce(v, t));
    }
}

TEST_CASE("penalty solver: L = 0 and a = theta drives small entries to zero") {
    ProxProblem p;
    p.gamma = 1.0;
    p.lambda0 = 0.5;
    p.theta0 = {3.0, 0.1};
    p.loss = [](Tape& t, Var) { return t.constant(Tensor::scalar(0.0)); };
    p.features = [](Tape&, Var th) { return th; };
    const PenaltyResult r = penalty_solve(p, 60, 0.05);
    CHECK(r.theta[0] == doctest::Approx(3.0));
    CHECK(std::abs(r.theta[1]) < 1e-3);
    CHECK(r.w[1] == 0.0);
}

TEST_CASE("penalty solver: gamma = 0 reduces to gradient descent on L") {
    ProxProblem p;
    p.gamma = 0.0;
    p.lambda0 = 0.5;
    p.theta0 = {1.0, -2.0};
    p.loss = [](Tape& t, Var th) {
        Var d = sub(th, t.constant(Tensor::vector({0.5, 0.25})));
        return scale(sum(mul(d, d)), 0.5);
    };
    p.features = [](Tape&, Var th) { return th; };
    const PenaltyResult r = penalty_solve(p, 1, 0.1);
    // w_1 = a(theta_0) so the penalty gradient vanishes at the first step.
    CHECK(r.theta[0] == doctest::Approx(1.0 - 0.1 * 0.5));
    CHECK(r.theta[1] == doctest::Approx(-2.0 - 0.1 * -2.25));
    const PenaltyResult many = penalty_solve(p, 200, 0.1);
    CHECK(many.theta[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(many.theta[1] == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("quadratic toy converges to the sparse target") {
    const ProxProblem p = quadratic_toy(0);
    const PenaltyResult r = penalty_solve(p, 40, 0.2);
    REQUIRE(r.trace.size() == 40);
    CHECK(r.trace.back().penalty_gap < 1e-3);
    const std::size_t q = r.trace.size() - r.trace.size() / 4;
    for (std::size_t k = q; k < r.trace.size(); ++k) CHECK(r.trace[k].objective <= r.trace[k - 1].objective);
    for (std::size_t k = 1; k < r.trace.size(); ++k) CHECK(r.trace[k].lambda < r.trace[k - 1].lambda);
}

TEST_CASE("penalty gap ends far below its start on the demo settings") {
    ProxProblem p = quadratic_toy(0, 1.0, 0.5);
    const double lambda_min = p.lambda0 * std::pow(p.decay, 39.0);
    const PenaltyResult r = penalty_solve(p, 40, 1.0 / (1.0 + 1.0 / lambda_min));
    CHECK(r.trace.back().penalty_gap < 0.01 * r.trace.front().penalty_gap);
    // Once the active set settles the gap shrinks every iteration.
    for (std::size_t k = 10; k < r.trace.size(); ++k) CHECK(r.trace[k].penalty_gap < r.trace[k - 1].penalty_gap);
}

TEST_CASE("regression toy runs and its features are centered") {
    const ProxProblem p = regression_toy(3);
    Tape tape;
    Var a = p.features(tape, tape.constant(Tensor::vector(p.theta0)));
    // 64 samples x 6 hidden units, each unit centered over samples
    REQUIRE(a.value().numel() == 64 * 6);
    for (std::size_t h = 0; h < 6; ++h) {
        double s = 0.0;
        for (std::size_t n = 0; n < 64; ++n) s += a.value()[n * 6 + h];
        CHECK(std::abs(s) < 1e-9);
    }
    const PenaltyResult r = penalty_solve(p, 20, 0.005);
    CHECK(r.trace.size() == 20);
}

TEST_CASE("divergence raises with the partial trace attached") {
    ProxProblem p = quadratic_toy(0);
    try {
        penalty_solve(p, 400, 50.0);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK_FALSE(e.trace().empty());
    }
}

TEST_CASE("invalid problems are rejected") {
    ProxProblem p = quadratic_toy(0);
    p.decay = 1.0;
    CHECK_THROWS_AS(penalty_solve(p, 5, 0.1), DomainError);
    p = quadratic_toy(0);
    CHECK_THROWS_AS(penalty_solve(p, 5, 0.0), DomainError);
}

TEST_CASE("trace CSV layout") {
    const PenaltyResult r = penalty_solve(quadratic_toy(1), 3, 0.2);
    std::ostringstream os;
    write_trace_csv(os, r.trace);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "iter,lambda,objective,penalty_gap,active_count");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 3);
}
