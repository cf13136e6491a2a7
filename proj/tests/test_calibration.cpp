#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fixtures.hpp"
#include "meansparse/calibration.hpp"
#include "meansparse/error.hpp"
#include "meansparse/parallel.hpp"

using namespace meansparse;
using namespace meansparse::testing;

namespace {

Tensor stream_block(std::size_t n, std::size_t ch, std::size_t hw, Rng& rng) {
    Tensor t({n, ch, hw, hw});
    const std::size_t per = hw * hw;
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const std::size_t c = (i / per) % ch;
        t[i] = 100.0 * static_cast<double>(c) + (0.1 + static_cast<double>(c)) * rng.normal();
    }
    return t;
}

Dataset dataset_of(Tensor images, std::size_t classes = 4) {
    Dataset d;
    d.labels.assign(images.dim(0), 0);
    d.images = std::move(images);
    d.classes = classes;
    return d;
}

}  // namespace

TEST_CASE("streaming moments match the two-pass reference") {
    Rng rng(1);
    std::vector<double> all;
    CalibrationAccumulator acc(3);
    for (int b = 0; b < 7; ++b) {
        const Tensor block = stream_block(9, 3, 4, rng);
        acc.add(block);
        all.insert(all.end(), block.values().begin(), block.values().end());
    }
    const Tensor whole({63, 3, 4, 4}, all);
    const auto [mean, sd] = two_pass_moments(whole);
    const SparsifierState st = acc.finalize();
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(st.mu[c] == doctest::Approx(mean[c]).epsilon(1e-12));
        CHECK(st.sigma[c] == doctest::Approx(sd[c]).epsilon(1e-12));
    }
    CHECK(acc.count() == 63.0 * 16.0);
}

TEST_CASE("sharding at block boundaries and merging in order is exact") {
    Rng rng(2);
    std::vector<Tensor> blocks;
    for (int i = 0; i < 7; ++i) blocks.push_back(stream_block(5, 2, 3, rng));
    CalibrationAccumulator single(2), left(2), right(2);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        single.add(blocks[i]);
        (i < 3 ? left : right).add(blocks[i]);
    }
    left.merge(right);
    const SparsifierState a = single.finalize(), b = left.finalize();
    CHECK(a.mu == b.mu);
    CHECK(a.sigma == b.sigma);
    CHECK(a.global_mean == b.global_mean);
}

TEST_CASE("Chan combination with an empty side is the other side") {
    Moments m;
    for (double x : {1.0, 2.0, 4.0}) m.push(x);
    const Moments c = Moments::combine(m, Moments{});
    CHECK(c.n == m.n);
    CHECK(c.mean == m.mean);
    CHECK(c.m2 == m.m2);
    const Moments d = Moments::combine(Moments{}, m);
    CHECK(d.mean == m.mean);
}

TEST_CASE("constant channels get the sigma floor") {
    CalibrationAccumulator acc(1);
    acc.add(Tensor({4, 1}, 2.5));
    const SparsifierState s = acc.finalize();
    CHECK(s.mu[0] == 2.5);
    CHECK(s.sigma[0] == kSigmaFloor);
}

TEST_CASE("placement parsing and site sets") {
    const NetSpec s;  // B = 4, nine sites
    CHECK(Placement::parse("all").sites(s).size() == 9);
    CHECK(Placement::parse("single:3").sites(s) == std::vector<std::size_t>{3});
    CHECK(Placement::parse("cumulative:2").sites(s) == std::vector<std::size_t>{0, 1, 2});
    CHECK(Placement::parse("main").sites(s) == std::vector<std::size_t>{1, 3, 5, 7});
    CHECK(Placement::parse("after").sites(s) == std::vector<std::size_t>{2, 4, 6, 8});
    CHECK(Placement::parse("cumulative:4").to_string() == "cumulative:4");
    CHECK_THROWS_AS(Placement::parse("single:x"), ConfigError);
    CHECK_THROWS_AS(Placement::parse("everywhere"), ConfigError);
    CHECK_THROWS_AS(Placement::parse("single:9").sites(s), ConfigError);
}

TEST_CASE("model calibration matches the two-pass moments of the observed pre-activations") {
    Rng rng(3);
    const Model m(tiny_spec(), 5);
    const Dataset d = dataset_of(random_images(37, rng));
    CalibrationOptions opts;
    opts.batch_size = 8;
    const auto stats = calibrate(m, {0, 1, 2, 3, 4}, d, opts);
    Tape tape;
    std::map<std::size_t, Tensor> seen;
    m.forward(tape, tape.constant(d.images), [&](std::size_t site, const Tensor& pre) { seen[site] = pre; }, false);
    for (const auto& [site, st] : stats) {
        const auto [mean, sd] = two_pass_moments(seen.at(site));
        for (std::size_t c = 0; c < st.channels; ++c) {
            CHECK(st.mu[c] == doctest::Approx(mean[c]).epsilon(1e-9));
            CHECK(st.sigma[c] == doctest::Approx(sd[c]).epsilon(1e-9));
        }
    }
}

TEST_CASE("calibration ignores attached sparsifiers and the thread count") {
    Rng rng(4);
    Model m(tiny_spec(), 6);
    const Dataset d = dataset_of(random_images(40, rng));
    CalibrationOptions opts;
    opts.batch_size = 7;
    set_num_threads(1);
    const auto base = calibrate(m, {0, 1, 2, 3, 4}, d, opts);
    attach(m, base, Placement{}, 0.5);
    set_num_threads(4);
    const auto again = calibrate(m, {0, 1, 2, 3, 4}, d, opts);
    set_num_threads(1);
    for (const auto& [site, st] : base) {
        CHECK(again.at(site).mu == st.mu);
        CHECK(again.at(site).sigma == st.sigma);
    }
}

TEST_CASE("calibration fraction uses a seeded subset") {
    Rng rng(5);
    const Model m(tiny_spec(), 6);
    const Dataset d = dataset_of(random_images(40, rng));
    CalibrationOptions opts;
    opts.fraction = 0.5;
    const auto a = calibrate_accumulators(m, {0}, d, opts);
    CHECK(a.at(0).count() == 20.0 * 64.0);
    CHECK(calibrate(m, {0}, d, opts).at(0).mu == calibrate(m, {0}, d, opts).at(0).mu);
    opts.fraction = 0.0;
    CHECK_THROWS_AS(calibrate(m, {0}, d, opts), ConfigError);
}

TEST_CASE("attach installs the placement's sites only and save/load round trips") {
    Rng rng(6);
    Model m(tiny_spec(), 7);
    const Dataset d = dataset_of(random_images(10, rng));
    const auto stats = calibrate(m, {0, 1, 2, 3, 4}, d);
    attach(m, stats, Placement::parse("main"), 0.2, Centering::Zero);
    CHECK(m.sparsifier_count() == 2);
    CHECK(m.sparsifier(1)->alpha == 0.2);
    CHECK(m.sparsifier(1)->centering == Centering::Zero);
    CHECK_FALSE(m.sparsifier(0).has_value());

    const auto path = (std::filesystem::temp_directory_path() / "meansparse_calib_test.bin").string();
    save_calibration(path, stats);
    const auto back = load_calibration(path);
    std::remove(path.c_str());
    REQUIRE(back.size() == stats.size());
    for (const auto& [site, st] : stats) {
        CHECK(back.at(site).mu == st.mu);
        CHECK(back.at(site).sigma == st.sigma);
    }
    CHECK_THROWS_AS(load_calibration("/nonexistent/calib.bin"), DataError);
}
