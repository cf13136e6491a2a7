#pragma once

#include <vector>

#include "gradcheck.hpp"
#include "meansparse/data.hpp"
#include "meansparse/nn.hpp"

namespace meansparse::testing {

// Small network for fast tests: 3x8x8 inputs, two residual blocks.
inline NetSpec tiny_spec(ActivationKind act = ActivationKind::Relu, std::size_t classes = 4) {
    NetSpec s;
    s.height = s.width = 8;
    s.blocks = 2;
    s.widths = {4, 4, 8};
    s.classes = classes;
    s.activation = act;
    s.input_mean = {0.5, 0.5, 0.5};
    s.input_std = {0.25, 0.25, 0.25};
    return s;
}

inline Tensor random_images(std::size_t n, Rng& rng, std::size_t hw = 8) {
    return random_tensor({n, 3, hw, hw}, rng, 0.0, 1.0);
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(classes));
    return y;
}

inline Tensor eval_logits(const Classifier& m, const Tensor& x) {
    Tape tape;
    return m.logits(tape, tape.constant(x)).value();
}

inline Tensor row(const Tensor& x, std::size_t i) {
    Shape s = x.shape();
    const std::size_t per = x.numel() / s[0];
    s[0] = 1;
    return Tensor(s, std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(i * per),
                                         x.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
}

}  // namespace meansparse::testing
