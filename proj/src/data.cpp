#include "meansparse/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>

#include "meansparse/error.hpp"

namespace meansparse {

Shape Dataset::sample_shape() const {
    Shape s = images.shape();
    if (s.empty()) return s;
    s.erase(s.begin());
    return s;
}

Tensor Dataset::batch(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw DataError("batch range out of bounds");
    Shape s = images.shape();
    s[0] = end - begin;
    const std::size_t m = sample_numel();
    return Tensor(s, std::vector<double>(images.data() + begin * m, images.data() + end * m));
}

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
    Shape s = images.shape();
    s[0] = indices.size();
    const std::size_t m = sample_numel();
    Tensor out(s);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw DataError("sample index out of range");
        std::copy_n(images.data() + indices[i] * m, m, out.data() + i * m);
    }
    return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
    return out;
}

std::span<const int> Dataset::labels_range(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw DataError("label range out of bounds");
    return std::span<const int>(labels).subspan(begin, end - begin);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.images = gather(indices);
    out.labels = gather_labels(indices);
    out.classes = classes;
    out.split = split;
    out.provenance = provenance;
    out.seed = seed;
    return out;
}

void Dataset::validate() const {
    if (images.rank() != 4 || images.dim(0) != labels.size()) {
        throw DataError("dataset images " + shape_to_string(images.shape()) + " do not match " +
                        std::to_string(labels.size()) + " labels");
    }
    for (double v : images.values())
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("pixel value outside [0,1]");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DataError("label outside [0, classes)");
}

Dataset parse_cifar10_batch(std::span<const std::uint8_t> bytes, const std::string& source,
                            std::size_t expected_records) {
    const std::size_t expected = expected_records * kCifarRecordBytes;
    if (bytes.size() != expected) {
        throw DataError(source + ": expected " + std::to_string(expected) + " bytes, found " +
                        std::to_string(bytes.size()));
    }
    const std::size_t n = expected_records;
    Dataset d;
    d.classes = 10;
    d.provenance = "cifar10";
    d.images = Tensor({n, 3, 32, 32});
    d.labels.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
        if (rec[0] > 9) throw DataError(source + ": record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
        d.labels[r] = rec[0];
        double* dst = d.images.data() + r * 3072;
        for (std::size_t i = 0; i < 3072; ++i) dst[i] = static_cast<double>(rec[1 + i]) / 255.0;
    }
    return d;
}

std::vector<std::uint8_t> serialize_cifar10(const Dataset& data) {
    if (data.sample_shape() != Shape{3, 32, 32}) throw DataError("CIFAR-10 records need 3x32x32 images");
    std::vector<std::uint8_t> out(data.size() * kCifarRecordBytes);
    for (std::size_t r = 0; r < data.size(); ++r) {
        std::uint8_t* rec = out.data() + r * kCifarRecordBytes;
        rec[0] = static_cast<std::uint8_t>(data.labels[r]);
        const double* src = data.images.data() + r * 3072;
        for (std::size_t i = 0; i < 3072; ++i) rec[1 + i] = static_cast<std::uint8_t>(std::lround(src[i] * 255.0));
    }
    return out;
}

namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Dataset concat(std::vector<Dataset> parts) {
    Dataset out = std::move(parts.front());
    std::vector<double> pixels(out.images.values().begin(), out.images.values().end());
    for (std::size_t i = 1; i < parts.size(); ++i) {
        pixels.insert(pixels.end(), parts[i].images.values().begin(), parts[i].images.values().end());
        out.labels.insert(out.labels.end(), parts[i].labels.begin(), parts[i].labels.end());
    }
    Shape s = out.images.shape();
    s[0] = out.labels.size();
    out.images = Tensor(s, std::move(pixels));
    return out;
}

}  // namespace

DataSplits load_cifar10(const std::string& dir, std::optional<std::pair<std::size_t, std::size_t>> subset,
                        std::uint64_t seed, std::size_t records_per_file) {
    const std::filesystem::path root(dir);
    std::vector<Dataset> train_parts;
    for (int i = 1; i <= 5; ++i) {
        const auto path = root / ("data_batch_" + std::to_string(i) + ".bin");
        train_parts.push_back(parse_cifar10_batch(read_bytes(path), path.string(), records_per_file));
    }
    const auto test_path = root / "test_batch.bin";
    DataSplits s{concat(std::move(train_parts)), parse_cifar10_batch(read_bytes(test_path), test_path.string(), records_per_file)};
    s.train.split = "train";
    s.test.split = "test";
    s.train.seed = s.test.seed = seed;
    if (subset) {
        s.train = stratified_subset(s.train, subset->first, seed);
        s.test = stratified_subset(s.test, subset->second, seed + 1);
    }
    return s;
}

Dataset stratified_subset(const Dataset& data, std::size_t n, std::uint64_t seed) {
    const std::size_t k = data.classes;
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    Rng rng(seed);
    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < k; ++c) {
        const std::size_t want = n / k + (c < n % k ? 1 : 0);
        auto& pool = by_class[c];
        if (pool.size() < want) {
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                            " samples, subset needs " + std::to_string(want));
        }
        // Partial Fisher-Yates: the first `want` entries become the sample.
        for (std::size_t i = 0; i < want; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want));
    }
    std::sort(chosen.begin(), chosen.end());
    Dataset out = data.subset(chosen);
    out.seed = seed;
    return out;
}

Dataset synth_blobs(std::size_t n, std::size_t classes, std::size_t d_spatial, std::uint64_t seed,
                    const SynthOptions& opts) {
    if (classes < 2) throw ConfigError("synthetic data needs at least two classes");
    if (d_spatial == 0 || opts.channels == 0) throw ConfigError("synthetic images need positive size");
    const std::size_t c = opts.channels, d = d_spatial, plane = d * d;

    // Templates: white noise, 3x3 box blur with wraparound, unit std per plane.
    Rng trng(opts.template_seed);
    std::vector<double> templ(classes * c * plane), offsets(classes * c);
    std::vector<double> raw(plane);
    for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (double& v : raw) v = trng.normal();
            double* dst = templ.data() + (k * c + ch) * plane;
            for (std::size_t y = 0; y < d; ++y)
                for (std::size_t x = 0; x < d; ++x) {
                    double s = 0.0;
                    for (std::size_t dy = 0; dy < 3; ++dy)
                        for (std::size_t dx = 0; dx < 3; ++dx) s += raw[((y + d + dy - 1) % d) * d + (x + d + dx - 1) % d];
                    dst[y * d + x] = s / 9.0;
                }
            double mean = 0.0, var = 0.0;
            for (std::size_t i = 0; i < plane; ++i) mean += dst[i];
            mean /= static_cast<double>(plane);
            for (std::size_t i = 0; i < plane; ++i) var += (dst[i] - mean) * (dst[i] - mean);
            const double sd = std::sqrt(var / static_cast<double>(plane));
            for (std::size_t i = 0; i < plane; ++i) dst[i] = sd > 0.0 ? (dst[i] - mean) / sd : 0.0;
        }
        for (std::size_t ch = 0; ch < c; ++ch) offsets[k * c + ch] = opts.offset_std * trng.normal();
    }

    Rng rng(seed);
    Dataset out;
    out.classes = classes;
    out.provenance = "synthetic";
    out.seed = seed;
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.labels[i] = static_cast<int>(i % classes);
    for (std::size_t i = n; i > 1; --i) std::swap(out.labels[i - 1], out.labels[rng.below(i)]);
    out.images = Tensor({n, c, d, d});
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(out.labels[i]);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* t = templ.data() + (k * c + ch) * plane;
            double* dst = out.images.data() + (i * c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                const double v = 0.5 + opts.amplitude * (t[p] + offsets[k * c + ch]) + opts.noise * rng.normal();
                dst[p] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return out;
}

DataSplits synth_splits(std::size_t n_train, std::size_t n_test, std::size_t classes, std::size_t d_spatial,
                        std::uint64_t seed, SynthOptions opts) {
    opts.template_seed = seed;
    DataSplits s{synth_blobs(n_train, classes, d_spatial, 2 * seed + 1, opts),
                 synth_blobs(n_test, classes, d_spatial, 2 * seed + 2, opts)};
    s.train.split = "train";
    s.test.split = "test";
    return s;
}

std::pair<std::vector<double>, std::vector<double>> channel_stats(const Dataset& data) {
    if (data.size() == 0) throw DataError("channel statistics of an empty dataset");
    const std::size_t n = data.size(), c = data.images.dim(1), plane = data.images.dim(2) * data.images.dim(3);
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) mean[ch] += data.images[(i * c + ch) * plane + p];
    const double count = static_cast<double>(n * plane);
    for (auto& m : mean) m /= count;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) {
                const double dlt = data.images[(i * c + ch) * plane + p] - mean[ch];
                var[ch] += dlt * dlt;
            }
    for (auto& v : var) v = std::sqrt(v / count);
    return {mean, var};
}

void augment_batch(Tensor& images, std::size_t pad, Rng& rng) {
    const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    std::vector<double> buf(c * h * w);
    for (std::size_t i = 0; i < n; ++i) {
        const auto dy = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
        const auto dx = static_cast<std::ptrdiff_t>(rng.below(2 * pad + 1)) - static_cast<std::ptrdiff_t>(pad);
        const bool flip = rng.below(2) == 1;
        double* img = images.data() + i * c * h * w;
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
                    const std::size_t xs = flip ? w - 1 - x : x;
                    const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xs) + dx;
                    const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                                        sx < static_cast<std::ptrdiff_t>(w);
                    buf[(ch * h + y) * w + x] = inside ? img[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] : 0.0;
                }
        std::copy(buf.begin(), buf.end(), img);
    }
}

}  // namespace meansparse
