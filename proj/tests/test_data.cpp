#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "meansparse/data.hpp"
#include "meansparse/error.hpp"

using namespace meansparse;

namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> fake_cifar_bytes(std::size_t records, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::uint8_t> bytes(records * kCifarRecordBytes);
    for (std::size_t r = 0; r < records; ++r) {
        bytes[r * kCifarRecordBytes] = static_cast<std::uint8_t>(r % 10);
        for (std::size_t i = 1; i < kCifarRecordBytes; ++i) bytes[r * kCifarRecordBytes + i] = static_cast<std::uint8_t>(rng.below(256));
    }
    return bytes;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::size_t> class_counts(const Dataset& d) {
    std::vector<std::size_t> c(d.classes, 0);
    for (int y : d.labels) ++c[static_cast<std::size_t>(y)];
    return c;
}

}  // namespace

TEST_CASE("CIFAR-10 records round trip byte for byte") {
    const auto bytes = fake_cifar_bytes(12, 1);
    const Dataset d = parse_cifar10_batch(bytes, "mem", 12);
    CHECK(d.size() == 12);
    CHECK(d.sample_shape() == Shape{3, 32, 32});
    CHECK(d.labels[3] == 3);
    CHECK(d.images[5] == bytes[6] / 255.0);
    CHECK(serialize_cifar10(d) == bytes);
    d.validate();
}

TEST_CASE("CIFAR-10 size and label errors") {
    auto bytes = fake_cifar_bytes(3, 2);
    try {
        parse_cifar10_batch(std::span(bytes).subspan(0, bytes.size() - 1), "short.bin", 3);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("expected 9219 bytes, found 9218") != std::string::npos);
    }
    bytes[kCifarRecordBytes] = 10;
    CHECK_THROWS_AS(parse_cifar10_batch(bytes, "bad.bin", 3), DataError);
}

TEST_CASE("CIFAR-10 directory loading with a stratified subset") {
    const fs::path dir = fs::temp_directory_path() / "meansparse_cifar_test";
    fs::create_directories(dir);
    for (int i = 1; i <= 5; ++i) write_bytes(dir / ("data_batch_" + std::to_string(i) + ".bin"), fake_cifar_bytes(20, i));
    write_bytes(dir / "test_batch.bin", fake_cifar_bytes(20, 9));
    const DataSplits full = load_cifar10(dir.string(), std::nullopt, 0, 20);
    CHECK(full.train.size() == 100);
    CHECK(full.test.size() == 20);
    const DataSplits sub = load_cifar10(dir.string(), std::make_pair(std::size_t{50}, std::size_t{10}), 3, 20);
    CHECK(sub.train.size() == 50);
    CHECK(class_counts(sub.train) == std::vector<std::size_t>(10, 5));
    CHECK(class_counts(sub.test) == std::vector<std::size_t>(10, 1));
    fs::remove(dir / "test_batch.bin");
    CHECK_THROWS_AS(load_cifar10(dir.string(), std::nullopt, 0, 20), DataError);
    fs::remove_all(dir);
    CHECK_THROWS_AS(load_cifar10(dir.string(), std::nullopt, 0, 20), DataError);
}

TEST_CASE("stratified subset: balanced, ordered, seeded") {
    const Dataset d = synth_blobs(200, 10, 4, 5);
    const Dataset s = stratified_subset(d, 23, 1);
    auto counts = class_counts(s);
    CHECK(counts == std::vector<std::size_t>{3, 3, 3, 2, 2, 2, 2, 2, 2, 2});
    CHECK(stratified_subset(d, 23, 1).images == s.images);
    CHECK_FALSE(stratified_subset(d, 23, 2).images == s.images);
    CHECK_THROWS(stratified_subset(d, 500, 1));
}

TEST_CASE("synthetic blobs: deterministic, balanced, in range") {
    const Dataset a = synth_blobs(100, 5, 6, 7), b = synth_blobs(100, 5, 6, 7), c = synth_blobs(100, 5, 6, 8);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    CHECK_FALSE(a.images == c.images);
    CHECK(class_counts(a) == std::vector<std::size_t>(5, 20));
    CHECK(a.sample_shape() == Shape{3, 6, 6});
    a.validate();
}

TEST_CASE("synthetic splits are learnable by a nearest-class-mean probe") {
    const DataSplits s = synth_splits(1000, 500, 10, 8, 3);
    const std::size_t dim = s.train.sample_numel(), k = s.train.classes;
    std::vector<double> means(k * dim, 0.0);
    std::vector<double> counts(k, 0.0);
    for (std::size_t i = 0; i < s.train.size(); ++i) {
        const auto y = static_cast<std::size_t>(s.train.labels[i]);
        counts[y] += 1;
        for (std::size_t j = 0; j < dim; ++j) means[y * dim + j] += s.train.images[i * dim + j];
    }
    for (std::size_t y = 0; y < k; ++y)
        for (std::size_t j = 0; j < dim; ++j) means[y * dim + j] /= counts[y];
    std::size_t correct = 0;
    for (std::size_t i = 0; i < s.test.size(); ++i) {
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t y = 0; y < k; ++y) {
            double dist = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double e = s.test.images[i * dim + j] - means[y * dim + j];
                dist += e * e;
            }
            if (dist < best_d) best_d = dist, best = y;
        }
        correct += best == static_cast<std::size_t>(s.test.labels[i]);
    }
    CHECK(static_cast<double>(correct) / s.test.size() > 0.8);
}

TEST_CASE("channel statistics") {
    Dataset d;
    d.images = Tensor({2, 2, 1, 2}, std::vector<double>{0, 1, 0.5, 0.5, 1, 0, 0.5, 0.5});
    d.labels = {0, 1};
    d.classes = 2;
    const auto [mean, sd] = channel_stats(d);
    CHECK(mean[0] == doctest::Approx(0.5));
    CHECK(sd[0] == doctest::Approx(0.5));
    CHECK(mean[1] == doctest::Approx(0.5));
    CHECK(sd[1] == doctest::Approx(0.0));
}

TEST_CASE("validation rejects out-of-range pixels and labels") {
    Dataset d = synth_blobs(10, 2, 4, 1);
    d.images[0] = 1.5;
    CHECK_THROWS_AS(d.validate(), DataError);
    d = synth_blobs(10, 2, 4, 1);
    d.labels[0] = 2;
    CHECK_THROWS_AS(d.validate(), DataError);
}

TEST_CASE("augmentation keeps shape and range; zero pad only flips") {
    Rng rng(4);
    const Dataset d = synth_blobs(6, 2, 5, 2);
    Tensor x = d.images;
    augment_batch(x, 2, rng);
    CHECK(x.shape() == d.images.shape());
    for (double v : x.values()) CHECK((v >= 0.0 && v <= 1.0));
    Tensor y = d.images;
    augment_batch(y, 0, rng);
    for (std::size_t n = 0; n < 6; ++n) {
        bool same = true, flipped = true;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t h = 0; h < 5; ++h)
                for (std::size_t w = 0; w < 5; ++w) {
                    same &= y.at(n, c, h, w) == d.images.at(n, c, h, w);
                    flipped &= y.at(n, c, h, w) == d.images.at(n, c, h, 4 - w);
                }
        CHECK((same || flipped));
    }
}
