#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "meansparse/data.hpp"
#include "meansparse/nn.hpp"
#include "meansparse/sparsifier.hpp"

namespace meansparse {

// Count, mean and sum of squared deviations of one channel.
struct Moments {
    double n = 0.0;
    double mean = 0.0;
    double m2 = 0.0;

    void push(double x);
    // Chan et al. pairwise combination.
    static Moments combine(const Moments& a, const Moments& b);
};

// Per-channel streaming moments. Each add() is Welford over one block and is
// kept as a partial; finalize() folds partials left to right. Merging two
// accumulators appends the other's partials, so sharding a stream at block
// boundaries and merging in stream order reproduces the single-stream result
// bit for bit.
class CalibrationAccumulator {
   public:
    explicit CalibrationAccumulator(std::size_t channels = 0) : channels_(channels) {}

    // a: [N, C] or [N, C, H, W]; pools N, H and W per channel.
    void add(const Tensor& a);
    void add_block(std::vector<Moments> block);
    void merge(const CalibrationAccumulator& other);

    std::size_t channels() const noexcept { return channels_; }
    // Total elements seen per channel.
    double count() const;
    std::vector<Moments> totals() const;
    // State with mu = mean, sigma = max(sqrt(m2 / n), kSigmaFloor).
    SparsifierState finalize(double alpha = 0.0, Centering centering = Centering::PerChannelMean) const;

   private:
    std::size_t channels_;
    std::vector<std::vector<Moments>> blocks_;
};

// Exact reference: mean first, then squared deviations.
std::pair<std::vector<double>, std::vector<double>> two_pass_moments(const Tensor& a);

struct Placement {
    enum class Kind { All, Single, Cumulative, MainPath, AfterAddition };
    Kind kind = Kind::All;
    std::size_t index = 0;

    // "all", "single:<i>", "cumulative:<i>", "main", "after"
    static Placement parse(std::string_view text);
    std::string to_string() const;
    // Throws ConfigError if an index lies outside the registry.
    std::vector<std::size_t> sites(const NetSpec& spec) const;
};

struct CalibrationOptions {
    std::size_t batch_size = 256;
    // Leading fraction of a seeded shuffle of the data; 1 uses everything.
    double fraction = 1.0;
    std::uint64_t seed = 0;
};

// One pass over data in eval mode with every sparsifier bypassed; returns the
// statistics of the pre-activation tensor at each requested site.
std::map<std::size_t, CalibrationAccumulator> calibrate_accumulators(const Model& model,
                                                                     const std::vector<std::size_t>& sites,
                                                                     const Dataset& data,
                                                                     const CalibrationOptions& opts = {});
std::map<std::size_t, SparsifierState> calibrate(const Model& model, const std::vector<std::size_t>& sites,
                                                 const Dataset& data, const CalibrationOptions& opts = {});

// Installs states at the placement's sites with a shared alpha and centering;
// any other site is cleared.
void attach(Model& model, const std::map<std::size_t, SparsifierState>& states, const Placement& placement,
            double alpha, Centering centering = Centering::PerChannelMean);

// Calibration cache: one file holding a state per site.
void save_calibration(const std::string& path, const std::map<std::size_t, SparsifierState>& states);
std::map<std::size_t, SparsifierState> load_calibration(const std::string& path);

}  // namespace meansparse
