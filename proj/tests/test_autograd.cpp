#include <doctest.h>

#include <cmath>
#include <limits>

#include "meansparse/error.hpp"
#include "op_catalog.hpp"

using namespace meansparse;
using namespace meansparse::testing;

TEST_CASE("every op matches central differences at random points") {
    for (const auto& op : op_catalog()) {
        CAPTURE(op.name);
        Rng rng(0xA11CE);
        double worst = 0.0;
        for (int draw = 0; draw < 20; ++draw) {
            const OpCase c = op.draw(rng);
            worst = std::max(worst, gradcheck(op.fn, c.inputs, c.wrt).max_rel_err);
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("gradients accumulate when a node feeds several consumers") {
    Tape tape;
    Var x = tape.input(Tensor::vector({1.5, -2.0}), true);
    Var y = add(mul(x, x), scale(x, 3.0));
    tape.backward(sum(y));
    const Tensor g = tape.grad(x);
    CHECK(g[0] == doctest::Approx(2 * 1.5 + 3));
    CHECK(g[1] == doctest::Approx(2 * -2.0 + 3));
}

TEST_CASE("bound leaves deliver gradients into the tensor") {
    Tensor w = Tensor::vector({2.0, -1.0});
    w.set_requires_grad(true);
    Tape tape;
    Var lw = tape.leaf(w);
    tape.backward(sum(mul(lw, lw)));
    CHECK(w.grad()[0] == doctest::Approx(4.0));
    CHECK(w.grad()[1] == doctest::Approx(-2.0));
}

TEST_CASE("backward needs a scalar") {
    Tape tape;
    Var x = tape.input(Tensor::vector({1.0, 2.0}), true);
    CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), ShapeError);
}

TEST_CASE("non-finite results raise NumericError") {
    Tape tape;
    Var x = tape.input(Tensor::vector({std::numeric_limits<double>::max()}), true);
    CHECK_THROWS_AS(scale(x, 10.0), NumericError);
}

TEST_CASE("shape mismatches raise ShapeError") {
    Tape tape;
    Var a = tape.constant(Tensor({2, 3}));
    Var b = tape.constant(Tensor({3, 2}));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(reshape(a, {4}), ShapeError);
    CHECK_THROWS_AS(slice(a, 4, 3), ShapeError);
}

TEST_CASE("parametric activations reject parameters outside their domain") {
    Tape tape;
    Var x = tape.constant(Tensor::vector({0.5}));
    CHECK_THROWS_AS(psilu(x, tape.constant(Tensor::scalar(0.0))), DomainError);
    CHECK_THROWS_AS(pssilu(x, tape.constant(Tensor::scalar(1.0)), tape.constant(Tensor::scalar(1.0))), DomainError);
    CHECK_THROWS_AS(pssilu(x, tape.constant(Tensor::scalar(1.0)), tape.constant(Tensor::scalar(-0.1))), DomainError);
}

TEST_CASE("DLR needs three classes") {
    Tape tape;
    Var x = tape.constant(Tensor({1, 2}, std::vector<double>{0.1, 0.2}));
    const std::vector<int> y{0};
    CHECK_THROWS(dlr_loss(x, y));
}

TEST_CASE("cross entropy and softmax agree with direct formulas") {
    Tape tape;
    Var x = tape.constant(Tensor({1, 3}, std::vector<double>{1.0, 2.0, 3.0}));
    const std::vector<int> y{2};
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(cross_entropy(x, y).value().item() == doctest::Approx(-std::log(std::exp(3.0) / z)).epsilon(1e-14));
    CHECK(softmax(x).value()[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
}

TEST_CASE("gelu is exact, not the tanh approximation") {
    CHECK(gelu_value(1.0) == doctest::Approx(1.0 * 0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-15));
}
