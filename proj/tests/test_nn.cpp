#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "meansparse/error.hpp"
#include "meansparse/nn.hpp"

using namespace meansparse;
using namespace meansparse::testing;

TEST_CASE("B=4 mini-ResNet has nine activation sites") {
    NetSpec s;
    CHECK(s.site_count() == 9);
    CHECK(s.blocks_per_stage() == std::vector<std::size_t>{2, 1, 1});
    std::vector<int> sites;
    for (const auto& l : s.layers())
        if (l.kind == LayerKind::Activation) sites.push_back(l.site);
    CHECK(sites == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(s.site_role(0) == SiteRole::Stem);
    CHECK(s.site_role(1) == SiteRole::MainPath);
    CHECK(s.site_role(2) == SiteRole::AfterAddition);
    CHECK(s.site_role(7) == SiteRole::MainPath);
    CHECK(s.site_role(8) == SiteRole::AfterAddition);
}

TEST_CASE("stage widths and strides follow the NetSpec") {
    NetSpec s;
    std::size_t downsample = 0;
    for (const auto& l : s.layers())
        if (l.kind == LayerKind::Conv && l.stride == 2) ++downsample;
    // conv1 and the shortcut of the two width-changing blocks
    CHECK(downsample == 4);
    Model m(s, 0);
    CHECK(m.site_channels(0) == 16);
    CHECK(m.site_channels(8) == 64);
}

TEST_CASE("invalid specs are rejected") {
    NetSpec s = tiny_spec();
    s.blocks = 1;  // fewer blocks than stages
    CHECK_THROWS(s.validate());
    s = tiny_spec();
    s.input_std = {0.1, 0.0, 0.1};
    CHECK_THROWS(s.validate());
}

TEST_CASE("spec JSON round trip") {
    NetSpec s = tiny_spec(ActivationKind::PSSilu, 7);
    s.activation_init = {1.5, 0.2};
    const nlohmann::json j = s;
    const NetSpec back = j.get<NetSpec>();
    CHECK(nlohmann::json(back) == j);
}

TEST_CASE("activation formulas") {
    for (double x : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
        const double sig = 1.0 / (1.0 + std::exp(-x));
        CHECK(activation_value(ActivationKind::Relu, x) == std::max(0.0, x));
        CHECK(activation_value(ActivationKind::Silu, x) == doctest::Approx(x * sig));
        CHECK(activation_value(ActivationKind::Elu, x) == doctest::Approx(x > 0 ? x : std::expm1(x)));
        // PSSiLU at beta = 1, shift = 0 is SiLU; PSiLU scales the gate input.
        CHECK(activation_value(ActivationKind::PSSilu, x, {1.0, 0.0}) == doctest::Approx(x * sig));
        const double s2 = 1.0 / (1.0 + std::exp(-2.0 * x));
        CHECK(activation_value(ActivationKind::PSilu, x, {2.0, 0.0}) == doctest::Approx(x * s2));
        CHECK(activation_value(ActivationKind::PSSilu, x, {2.0, 0.3}) == doctest::Approx(x * (s2 - 0.3) / 0.7));
    }
}

TEST_CASE("eval logits of a sample do not depend on its batch") {
    Rng rng(5);
    for (auto act : {ActivationKind::Relu, ActivationKind::Gelu, ActivationKind::PSSilu}) {
        Model m(tiny_spec(act), 9);
        const Tensor x = random_images(5, rng);
        const Tensor batch = eval_logits(m, x);
        CHECK(batch.shape() == Shape{5, 4});
        for (std::size_t i = 0; i < 5; ++i) {
            const Tensor single = eval_logits(m, row(x, i));
            for (std::size_t k = 0; k < 4; ++k) CHECK(single[k] == batch[i * 4 + k]);
        }
    }
}

TEST_CASE("same seed builds the same model") {
    Rng rng(6);
    const Tensor x = random_images(3, rng);
    CHECK(eval_logits(Model(tiny_spec(), 3), x) == eval_logits(Model(tiny_spec(), 3), x));
    CHECK_FALSE(eval_logits(Model(tiny_spec(), 3), x) == eval_logits(Model(tiny_spec(), 4), x));
}

TEST_CASE("checkpoint round trip reproduces logits exactly in fp64") {
    Rng rng(7);
    Model m(tiny_spec(ActivationKind::PSSilu), 11);
    // Move running statistics off their initial values.
    Tape tape;
    m.forward_train(tape, tape.constant(random_images(6, rng)));
    const Tensor x = random_images(4, rng);
    std::stringstream ss;
    m.save(ss);
    const Model back = Model::load(ss);
    CHECK(eval_logits(back, x) == eval_logits(m, x));

    std::stringstream ss32;
    m.save(ss32, DType::F32);
    const Model back32 = Model::load(ss32);
    const Tensor a = eval_logits(m, x), b = eval_logits(back32, x);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-4));
}

TEST_CASE("corrupt checkpoints raise DataError") {
    std::stringstream empty;
    CHECK_THROWS_AS(Model::load(empty), DataError);
    std::stringstream wrong("{\"format\":\"other\"}\n");
    CHECK_THROWS_AS(Model::load(wrong), DataError);
    CHECK_THROWS_AS(Model::load_file("/nonexistent/model.ckpt"), DataError);
}

TEST_CASE("observer sees every site once, in order, before sparsification") {
    Rng rng(8);
    Model m(tiny_spec(), 2);
    std::vector<std::size_t> seen;
    Tape tape;
    m.forward(tape, tape.constant(random_images(2, rng)),
              [&](std::size_t site, const Tensor& pre) {
                  seen.push_back(site);
                  CHECK(pre.dim(1) == m.site_channels(site));
              },
              false);
    CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("eval forward leaves the model untouched; training forward updates running statistics") {
    Rng rng(9);
    Model m(tiny_spec(), 2);
    const Tensor x = random_images(4, rng);
    const Tensor before = eval_logits(m, x);
    eval_logits(m, random_images(4, rng));
    CHECK(eval_logits(m, x) == before);
    Tape tape;
    m.forward_train(tape, tape.constant(random_images(4, rng)));
    CHECK_FALSE(eval_logits(m, x) == before);
}

TEST_CASE("sparsifier attachment validates the site") {
    Model m(tiny_spec(), 0);
    SparsifierState s;
    s.channels = 3;
    s.mu = {0, 0, 0};
    s.sigma = {1, 1, 1};
    CHECK_THROWS_AS(m.set_sparsifier(0, s), ShapeError);
    CHECK_THROWS(m.set_sparsifier(99, s));
    s.channels = 4;
    s.mu.push_back(0);
    s.sigma.push_back(1);
    m.set_sparsifier(0, s);
    CHECK(m.sparsifier_count() == 1);
    m.clear_sparsifiers();
    CHECK(m.sparsifier_count() == 0);
}

TEST_CASE("activation parameters are trainable, not decayed, and projected into their domain") {
    Model m(tiny_spec(ActivationKind::PSSilu), 0);
    bool found = false;
    for (auto& nt : m.named_tensors()) {
        if (nt.name.rfind("act", 0) == 0) {
            found = true;
            CHECK(nt.trainable);
            CHECK_FALSE(nt.decay);
            (*nt.tensor)[0] = nt.name.find("beta") != std::string::npos ? -1.0 : 1.5;
        }
    }
    CHECK(found);
    m.project_activation_params();
    for (std::size_t s = 0; s < m.site_count(); ++s) {
        CHECK(m.activation_params(s).beta >= 1e-3);
        CHECK(m.activation_params(s).shift <= 0.99);
    }
}

TEST_CASE("predict breaks ties toward the lower class") {
    const Tensor logits({2, 3}, std::vector<double>{1.0, 3.0, 3.0, 0.5, 0.5, 0.1});
    CHECK(predict(logits) == std::vector<int>{1, 0});
}
