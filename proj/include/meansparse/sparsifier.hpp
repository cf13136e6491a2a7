#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "meansparse/autograd.hpp"

namespace meansparse {

enum class Centering { PerChannelMean, Zero, GlobalMean };

std::string_view centering_name(Centering c);  // "channel", "zero", "global"
Centering parse_centering(std::string_view text);

constexpr double kSigmaFloor = 1e-8;

// Frozen per-channel MeanSparse operator. Values within alpha * sigma_ch of
// the channel's center are replaced by the center; everything else passes.
struct SparsifierState {
    std::size_t channels = 0;
    std::vector<double> mu;     // per-channel mean of the calibration stream
    std::vector<double> sigma;  // per-channel population std, >= kSigmaFloor
    double global_mean = 0.0;   // mean over every element of every channel
    double alpha = 0.0;
    Centering centering = Centering::PerChannelMean;
    bool enabled = true;
    // Backward passes the upstream gradient everywhere. Off by default; the
    // attack surface is the true function, whose gradient is 0 in the band.
    bool straight_through = false;

    double center(std::size_t ch) const;
    double threshold(std::size_t ch) const { return alpha * sigma[ch]; }
    // Throws if vectors disagree with channels or alpha/sigma are invalid.
    void validate() const;
};

// a: [N, C] or [N, C, H, W]. |a - c| <= Th is blocked (boundary inclusive).
Tensor sparsify_forward(const SparsifierState& state, const Tensor& a);
Tensor sparsify_backward(const SparsifierState& state, const Tensor& a, const Tensor& upstream);

// Tape op; a disabled state records an identity node.
Var mean_sparse(Var x, const SparsifierState& state);

// JSON header line (channels, alpha, centering, sigma_floor, global_mean,
// enabled) followed by MSTN tensors for mu and sigma.
void write_sparsifier(std::ostream& out, const SparsifierState& state);
SparsifierState read_sparsifier(std::istream& in);

}  // namespace meansparse
