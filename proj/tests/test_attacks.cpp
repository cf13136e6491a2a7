#include <doctest.h>

#include "attack_matrix.hpp"
#include "fixtures.hpp"
#include "meansparse/calibration.hpp"
#include "meansparse/error.hpp"
#include "meansparse/parallel.hpp"

using namespace meansparse;
using namespace meansparse::testing;

namespace {

struct Setup {
    Model model;
    Tensor x;
    std::vector<int> y;
};

Setup setup(std::uint64_t seed = 1, std::size_t n = 6) {
    Rng rng(seed);
    Setup s{Model(tiny_spec(), seed), random_images(n, rng), {}};
    s.y = random_labels(n, 4, rng);
    // Put pixels on the box boundary too.
    s.x[0] = 0.0;
    s.x[1] = 1.0;
    return s;
}

Dataset as_dataset(const Setup& s) {
    Dataset d;
    d.images = s.x;
    d.labels = s.y;
    d.classes = 4;
    return d;
}

}  // namespace

TEST_CASE("parse_rational") {
    CHECK(parse_rational("8/255") == 8.0 / 255.0);
    CHECK(parse_rational("0.03") == 0.03);
    CHECK(parse_rational("1e-2") == 0.01);
    CHECK_THROWS_AS(parse_rational("8/0"), ConfigError);
    CHECK_THROWS_AS(parse_rational("abc"), ConfigError);
    CHECK_THROWS_AS(parse_rational("1/2/3"), ConfigError);
}

TEST_CASE("every attack in the matrix stays feasible") {
    const Setup s = setup();
    for (const auto& spec : attack_matrix(4)) {
        CAPTURE(spec.label());
        const Tensor adv = run_attack(s.model, s.x, s.y, spec, 0);
        const Norm norm = spec.kind == AttackKind::FGSM ? Norm::Linf : spec.norm;
        CHECK(independently_feasible(s.x, adv, norm, spec.epsilon));
        CHECK(feasible(s.x, adv, norm, spec.epsilon));
    }
}

TEST_CASE("zero radius leaves inputs unchanged, so robust equals clean") {
    const Setup s = setup(2, 12);
    for (auto norm : {Norm::Linf, Norm::L2}) {
        AttackSpec a;
        a.norm = norm;
        a.epsilon = 0.0;
        a.restarts = 2;
        CHECK(run_attack(s.model, s.x, s.y, a, 0) == s.x);
        const RobustResult r = evaluate_robust(s.model, as_dataset(s), a, 5);
        CHECK(r.robust_acc == r.clean_acc);
    }
}

TEST_CASE("robust correctness implies clean correctness") {
    const Setup s = setup(3, 20);
    const RobustResult r = evaluate_robust(s.model, as_dataset(s), AttackSpec{}, 7);
    for (std::size_t i = 0; i < 20; ++i)
        if (r.robust_correct[i]) CHECK(r.clean_correct[i]);
    CHECK(r.robust_acc <= r.clean_acc);
    CHECK(r.all_feasible);
}

TEST_CASE("each row is attacked independently of its batch") {
    const Setup s = setup(4, 5);
    for (auto kind : {AttackKind::PGD, AttackKind::MomentumPGD}) {
        AttackSpec a;
        a.kind = kind;
        a.restarts = 2;
        a.steps = 4;
        const Tensor batch = run_attack(s.model, s.x, s.y, a, 100);
        for (std::size_t i = 0; i < 5; ++i) {
            const std::vector<int> yi{s.y[i]};
            const Tensor single = run_attack(s.model, row(s.x, i), yi, a, 100 + i);
            CHECK(single == row(batch, i));
        }
    }
}

TEST_CASE("evaluation does not depend on thread count or batch size") {
    const Setup s = setup(5, 15);
    AttackSpec a;
    a.restarts = 2;
    a.steps = 3;
    set_num_threads(1);
    const RobustResult one = evaluate_robust(s.model, as_dataset(s), a, 4);
    set_num_threads(3);
    const RobustResult three = evaluate_robust(s.model, as_dataset(s), a, 6);
    set_num_threads(1);
    CHECK(one.robust_correct == three.robust_correct);
    CHECK(one.clean_correct == three.clean_correct);
}

TEST_CASE("without momentum or halving the momentum variant walks the PGD path") {
    const Setup s = setup(6, 3);
    AttackSpec a;
    a.steps = 6;
    a.momentum = 0.0;
    a.step_halving = false;
    a.random_start = true;
    std::vector<Tensor> p1, p2;
    pgd(s.model, s.x, s.y, a, 0, [&](std::size_t, std::size_t, const Tensor& t) { p1.push_back(t); });
    momentum_pgd_ce(s.model, s.x, s.y, a, 0, [&](std::size_t, std::size_t, const Tensor& t) { p2.push_back(t); });
    REQUIRE(p1.size() == 6);
    CHECK(p1 == p2);
}

TEST_CASE("the momentum variant returns its best-loss iterate") {
    const Setup s = setup(7, 4);
    AttackSpec a;
    a.kind = AttackKind::MomentumPGD;
    a.steps = 8;
    std::vector<Tensor> iterates{s.x};
    const Tensor out = momentum_pgd_ce(s.model, s.x, s.y, a, 0, [&](std::size_t, std::size_t, const Tensor& t) { iterates.push_back(t); });
    const auto final_losses = per_sample_loss(eval_logits(s.model, out), s.y, AttackLoss::CrossEntropy);
    for (const auto& it : iterates) {
        const auto l = per_sample_loss(eval_logits(s.model, it), s.y, AttackLoss::CrossEntropy);
        for (std::size_t i = 0; i < 4; ++i) CHECK(final_losses[i] >= l[i]);
    }
}

TEST_CASE("more steps never lower the attack loss of the momentum variant") {
    const Setup s = setup(8, 4);
    AttackSpec a;
    a.kind = AttackKind::MomentumPGD;
    a.steps = 10;
    const Tensor adv = momentum_pgd_ce(s.model, s.x, s.y, a);
    const auto clean = per_sample_loss(eval_logits(s.model, s.x), s.y, AttackLoss::CrossEntropy);
    const auto attacked = per_sample_loss(eval_logits(s.model, adv), s.y, AttackLoss::CrossEntropy);
    for (std::size_t i = 0; i < 4; ++i) CHECK(attacked[i] >= clean[i]);
}

TEST_CASE("a sparsified model is still attacked within the ball") {
    Setup s = setup(9, 6);
    const Dataset d = as_dataset(s);
    const auto stats = calibrate(s.model, Placement::parse("all").sites(s.model.spec()), d);
    attach(s.model, stats, Placement::parse("all"), 0.3);
    for (const auto& spec : attack_matrix(3)) {
        CAPTURE(spec.label());
        const Tensor adv = run_attack(s.model, s.x, s.y, spec, 0);
        CHECK(independently_feasible(s.x, adv, spec.kind == AttackKind::FGSM ? Norm::Linf : spec.norm, spec.epsilon));
    }
}

TEST_CASE("DLR needs four classes; fewer falls back to cross entropy") {
    CHECK(effective_loss(AttackLoss::DLR, 3) == AttackLoss::CrossEntropy);
    CHECK(effective_loss(AttackLoss::DLR, 4) == AttackLoss::DLR);
}

TEST_CASE("invalid specs and inputs are rejected") {
    const Setup s = setup();
    AttackSpec a;
    a.epsilon = -1.0;
    CHECK_THROWS_AS(run_attack(s.model, s.x, s.y, a), ConfigError);
    a = AttackSpec{};
    a.steps = 0;
    CHECK_THROWS_AS(a.validate(), ConfigError);
    const std::vector<int> short_y{0};
    CHECK_THROWS(run_attack(s.model, s.x, short_y, AttackSpec{}));
    CHECK(parse_attack_kind(attack_kind_name(AttackKind::MomentumPGD)) == AttackKind::MomentumPGD);
    CHECK(parse_attack_kind("apgd-ce") == AttackKind::MomentumPGD);
    CHECK_THROWS_AS(parse_norm("linf2"), ConfigError);
}
