#include "meansparse/sparsifier.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "meansparse/error.hpp"

namespace meansparse {

std::string_view centering_name(Centering c) {
    switch (c) {
        case Centering::PerChannelMean: return "channel";
        case Centering::Zero: return "zero";
        case Centering::GlobalMean: return "global";
    }
    return "channel";
}

Centering parse_centering(std::string_view text) {
    if (text == "channel") return Centering::PerChannelMean;
    if (text == "zero") return Centering::Zero;
    if (text == "global") return Centering::GlobalMean;
    throw ConfigError("unknown centering '" + std::string(text) + "' (expected channel, zero or global)");
}

double SparsifierState::center(std::size_t ch) const {
    switch (centering) {
        case Centering::PerChannelMean: return mu[ch];
        case Centering::Zero: return 0.0;
        case Centering::GlobalMean: return global_mean;
    }
    return mu[ch];
}

void SparsifierState::validate() const {
    if (mu.size() != channels || sigma.size() != channels) {
        throw ConfigError("sparsifier state holds " + std::to_string(mu.size()) + " means and " +
                          std::to_string(sigma.size()) + " stds for " + std::to_string(channels) + " channels");
    }
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and >= 0");
    for (double s : sigma)
        if (!(s >= 0.0) || !std::isfinite(s)) throw DomainError("sigma must be finite and >= 0");
}

namespace {

struct Layout {
    std::size_t batch, channels, spatial;
};

Layout layout_of(const SparsifierState& state, const Tensor& a) {
    Layout l{};
    if (a.rank() == 4) {
        l = {a.dim(0), a.dim(1), a.dim(2) * a.dim(3)};
    } else if (a.rank() == 2) {
        l = {a.dim(0), a.dim(1), 1};
    } else {
        throw ShapeError("sparsifier expects [N,C] or [N,C,H,W], got " + shape_to_string(a.shape()));
    }
    if (l.channels != state.channels) {
        throw ShapeError("sparsifier calibrated for " + std::to_string(state.channels) + " channels, input " +
                         shape_to_string(a.shape()));
    }
    return l;
}

template <typename Fn>
void for_each_element(const Layout& l, Fn fn) {
    for (std::size_t n = 0; n < l.batch; ++n)
        for (std::size_t ch = 0; ch < l.channels; ++ch)
            for (std::size_t i = 0; i < l.spatial; ++i) fn((n * l.channels + ch) * l.spatial + i, ch);
}

}  // namespace

Tensor sparsify_forward(const SparsifierState& state, const Tensor& a) {
    const Layout l = layout_of(state, a);
    Tensor out(a.shape(), std::vector<double>(a.values().begin(), a.values().end()));
    if (!state.enabled) return out;
    for_each_element(l, [&](std::size_t idx, std::size_t ch) {
        const double c = state.center(ch);
        if (std::abs(a[idx] - c) <= state.threshold(ch)) out[idx] = c;
    });
    return out;
}

Tensor sparsify_backward(const SparsifierState& state, const Tensor& a, const Tensor& upstream) {
    const Layout l = layout_of(state, a);
    if (upstream.shape() != a.shape()) {
        throw ShapeError("shape mismatch in sparsify_backward: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(upstream.shape()));
    }
    Tensor grad(a.shape(), std::vector<double>(upstream.values().begin(), upstream.values().end()));
    if (!state.enabled || state.straight_through) return grad;
    for_each_element(l, [&](std::size_t idx, std::size_t ch) {
        if (std::abs(a[idx] - state.center(ch)) <= state.threshold(ch)) grad[idx] = 0.0;
    });
    return grad;
}

Var mean_sparse(Var x, const SparsifierState& state) {
    Tensor out = sparsify_forward(state, x.value());
    const NodeId ix = x.id();
    // The state is copied so the node stays valid if the caller's state moves.
    return x.tape().record(OpKind::MeanSparse, {ix}, std::move(out), [ix, state](Tape& t, std::span<const double> g) {
        const Tensor& in = t.node(ix).value;
        Tensor up(in.shape(), std::vector<double>(g.begin(), g.end()));
        const Tensor gin = sparsify_backward(state, in, up);
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gin[i];
    });
}

void write_sparsifier(std::ostream& out, const SparsifierState& state) {
    state.validate();
    nlohmann::json header{{"channels", state.channels},
                          {"alpha", state.alpha},
                          {"centering", centering_name(state.centering)},
                          {"sigma_floor", kSigmaFloor},
                          {"global_mean", state.global_mean},
                          {"enabled", state.enabled}};
    out << header.dump() << '\n';
    write_tensor(out, Tensor::vector(state.mu));
    write_tensor(out, Tensor::vector(state.sigma));
    if (!out) throw DataError("failed writing sparsifier state");
}

SparsifierState read_sparsifier(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("missing sparsifier header");
    SparsifierState s;
    try {
        const auto header = nlohmann::json::parse(line);
        s.channels = header.at("channels").get<std::size_t>();
        s.alpha = header.at("alpha").get<double>();
        s.centering = parse_centering(header.at("centering").get<std::string>());
        s.global_mean = header.at("global_mean").get<double>();
        s.enabled = header.value("enabled", true);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad sparsifier header: ") + e.what());
    }
    const Tensor mu = read_tensor(in);
    const Tensor sigma = read_tensor(in);
    s.mu.assign(mu.values().begin(), mu.values().end());
    s.sigma.assign(sigma.values().begin(), sigma.values().end());
    s.validate();
    return s;
}

}  // namespace meansparse
