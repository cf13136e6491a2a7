#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meansparse/rng.hpp"
#include "meansparse/tensor.hpp"

namespace meansparse {

struct Dataset {
    Tensor images;  // [N, C, H, W], values in [0, 1]
    std::vector<int> labels;
    std::size_t classes = 10;
    std::string split;       // "train" / "test"
    std::string provenance;  // "cifar10" / "synthetic"
    std::uint64_t seed = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_numel() const { return size() ? images.numel() / size() : 0; }
    Shape sample_shape() const;

    // Samples [begin, end) as a [end-begin, C, H, W] tensor.
    Tensor batch(std::size_t begin, std::size_t end) const;
    Tensor gather(std::span<const std::size_t> indices) const;
    std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
    std::span<const int> labels_range(std::size_t begin, std::size_t end) const;
    Dataset subset(std::span<const std::size_t> indices) const;

    // Throws DataError on pixels outside [0,1] or labels outside [0, classes).
    void validate() const;
};

struct DataSplits {
    Dataset train, test;
};

constexpr std::size_t kCifarRecordBytes = 3073;
constexpr std::size_t kCifarRecordsPerFile = 10000;

// One CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes
// (R, G, B planes, row-major). Pixels are scaled by 1/255.
Dataset parse_cifar10_batch(std::span<const std::uint8_t> bytes, const std::string& source,
                            std::size_t expected_records = kCifarRecordsPerFile);
std::vector<std::uint8_t> serialize_cifar10(const Dataset& data);

// Reads data_batch_1..5.bin and test_batch.bin from dir. With a subset, each
// split is a seeded stratified sample.
DataSplits load_cifar10(const std::string& dir, std::optional<std::pair<std::size_t, std::size_t>> subset,
                        std::uint64_t seed, std::size_t records_per_file = kCifarRecordsPerFile);

// Equal per-class counts (the first n % K classes get one extra); the
// selected samples keep their original relative order.
Dataset stratified_subset(const Dataset& data, std::size_t n, std::uint64_t seed);

struct SynthOptions {
    std::size_t channels = 3;
    double amplitude = 0.05;  // template contrast around 0.5
    double noise = 0.1;       // per-pixel Gaussian noise
    double offset_std = 0.5;  // per-(class, channel) offset, in template units
    std::uint64_t template_seed = 0x5eed;
};

// Class-conditional images: x = clip(0.5 + amplitude * (T_y + o_y) + noise * z)
// with smooth per-class templates T_y and channel offsets o_y drawn from
// template_seed; sample noise and label order come from seed.
Dataset synth_blobs(std::size_t n, std::size_t classes, std::size_t d_spatial, std::uint64_t seed,
                    const SynthOptions& opts = {});
DataSplits synth_splits(std::size_t n_train, std::size_t n_test, std::size_t classes, std::size_t d_spatial,
                        std::uint64_t seed, SynthOptions opts = {});

// Per-channel population mean and std of the images.
std::pair<std::vector<double>, std::vector<double>> channel_stats(const Dataset& data);

// Random crop after zero padding plus horizontal flip, applied in place.
void augment_batch(Tensor& images, std::size_t pad, Rng& rng);

}  // namespace meansparse
