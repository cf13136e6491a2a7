#include "meansparse/calibration.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "meansparse/error.hpp"
#include "meansparse/parallel.hpp"

namespace meansparse {

void Moments::push(double x) {
    n += 1.0;
    const double delta = x - mean;
    mean += delta / n;
    m2 += delta * (x - mean);
}

Moments Moments::combine(const Moments& a, const Moments& b) {
    if (b.n == 0.0) return a;
    if (a.n == 0.0) return b;
    Moments r;
    r.n = a.n + b.n;
    const double delta = b.mean - a.mean;
    r.mean = a.mean + delta * (b.n / r.n);
    r.m2 = a.m2 + b.m2 + delta * delta * (a.n * b.n / r.n);
    return r;
}

namespace {

struct Layout {
    std::size_t batch, channels, spatial;
};

Layout layout_of(const Tensor& a) {
    if (a.rank() == 4) return {a.dim(0), a.dim(1), a.dim(2) * a.dim(3)};
    if (a.rank() == 2) return {a.dim(0), a.dim(1), 1};
    throw ShapeError("calibration expects [N,C] or [N,C,H,W], got " + shape_to_string(a.shape()));
}

}  // namespace

void CalibrationAccumulator::add(const Tensor& a) {
    const Layout l = layout_of(a);
    if (channels_ == 0 && blocks_.empty()) channels_ = l.channels;
    if (l.channels != channels_) {
        throw ShapeError("accumulator has " + std::to_string(channels_) + " channels, got " + shape_to_string(a.shape()));
    }
    std::vector<Moments> block(channels_);
    for (std::size_t n = 0; n < l.batch; ++n)
        for (std::size_t ch = 0; ch < l.channels; ++ch)
            for (std::size_t i = 0; i < l.spatial; ++i) block[ch].push(a[(n * l.channels + ch) * l.spatial + i]);
    blocks_.push_back(std::move(block));
}

void CalibrationAccumulator::add_block(std::vector<Moments> block) {
    if (channels_ == 0 && blocks_.empty()) channels_ = block.size();
    if (block.size() != channels_) throw ShapeError("moment block has the wrong channel count");
    blocks_.push_back(std::move(block));
}

void CalibrationAccumulator::merge(const CalibrationAccumulator& other) {
    if (other.blocks_.empty()) return;
    if (channels_ == 0 && blocks_.empty()) channels_ = other.channels_;
    if (other.channels_ != channels_) throw ShapeError("cannot merge accumulators with different channel counts");
    blocks_.insert(blocks_.end(), other.blocks_.begin(), other.blocks_.end());
}

std::vector<Moments> CalibrationAccumulator::totals() const {
    std::vector<Moments> t(channels_);
    for (const auto& block : blocks_)
        for (std::size_t ch = 0; ch < channels_; ++ch) t[ch] = Moments::combine(t[ch], block[ch]);
    return t;
}

double CalibrationAccumulator::count() const {
    const auto t = totals();
    return t.empty() ? 0.0 : t[0].n;
}

SparsifierState CalibrationAccumulator::finalize(double alpha, Centering centering) const {
    const auto t = totals();
    if (t.empty() || t[0].n == 0.0) throw DataError("calibration saw no data");
    SparsifierState s;
    s.channels = channels_;
    s.alpha = alpha;
    s.centering = centering;
    Moments pooled;
    for (const auto& m : t) {
        s.mu.push_back(m.mean);
        s.sigma.push_back(std::max(std::sqrt(m.m2 / m.n), kSigmaFloor));
        pooled = Moments::combine(pooled, m);
    }
    s.global_mean = pooled.mean;
    s.validate();
    return s;
}

std::pair<std::vector<double>, std::vector<double>> two_pass_moments(const Tensor& a) {
    const Layout l = layout_of(a);
    std::vector<double> mean(l.channels, 0.0), sd(l.channels, 0.0);
    const double count = static_cast<double>(l.batch * l.spatial);
    for (std::size_t n = 0; n < l.batch; ++n)
        for (std::size_t ch = 0; ch < l.channels; ++ch)
            for (std::size_t i = 0; i < l.spatial; ++i) mean[ch] += a[(n * l.channels + ch) * l.spatial + i];
    for (auto& m : mean) m /= count;
    for (std::size_t n = 0; n < l.batch; ++n)
        for (std::size_t ch = 0; ch < l.channels; ++ch)
            for (std::size_t i = 0; i < l.spatial; ++i) {
                const double d = a[(n * l.channels + ch) * l.spatial + i] - mean[ch];
                sd[ch] += d * d;
            }
    for (auto& s : sd) s = std::sqrt(s / count);
    return {mean, sd};
}

Placement Placement::parse(std::string_view text) {
    Placement p;
    auto index_after = [&](std::string_view prefix) {
        const auto digits = text.substr(prefix.size());
        std::size_t v = 0;
        const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
        if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size()) {
            throw ConfigError("bad placement index in '" + std::string(text) + "'");
        }
        return v;
    };
    if (text == "all") {
        p.kind = Kind::All;
    } else if (text == "main") {
        p.kind = Kind::MainPath;
    } else if (text == "after") {
        p.kind = Kind::AfterAddition;
    } else if (text.starts_with("single:")) {
        p.kind = Kind::Single;
        p.index = index_after("single:");
    } else if (text.starts_with("cumulative:")) {
        p.kind = Kind::Cumulative;
        p.index = index_after("cumulative:");
    } else {
        throw ConfigError("unknown placement '" + std::string(text) + "' (expected all, single:<i>, cumulative:<i>, main, after)");
    }
    return p;
}

std::string Placement::to_string() const {
    switch (kind) {
        case Kind::All: return "all";
        case Kind::Single: return "single:" + std::to_string(index);
        case Kind::Cumulative: return "cumulative:" + std::to_string(index);
        case Kind::MainPath: return "main";
        case Kind::AfterAddition: return "after";
    }
    return "all";
}

std::vector<std::size_t> Placement::sites(const NetSpec& spec) const {
    const std::size_t count = spec.site_count();
    std::vector<std::size_t> out;
    if ((kind == Kind::Single || kind == Kind::Cumulative) && index >= count) {
        throw ConfigError("placement site " + std::to_string(index) + " out of range; model has " +
                          std::to_string(count) + " sites");
    }
    for (std::size_t s = 0; s < count; ++s) {
        bool take = false;
        switch (kind) {
            case Kind::All: take = true; break;
            case Kind::Single: take = s == index; break;
            case Kind::Cumulative: take = s <= index; break;
            case Kind::MainPath: take = spec.site_role(s) == SiteRole::MainPath; break;
            case Kind::AfterAddition: take = spec.site_role(s) == SiteRole::AfterAddition; break;
        }
        if (take) out.push_back(s);
    }
    return out;
}

std::map<std::size_t, CalibrationAccumulator> calibrate_accumulators(const Model& model,
                                                                     const std::vector<std::size_t>& sites,
                                                                     const Dataset& data,
                                                                     const CalibrationOptions& opts) {
    if (data.size() == 0) throw DataError("calibration dataset is empty");
    if (!(opts.fraction > 0.0 && opts.fraction <= 1.0)) throw ConfigError("calibration fraction must lie in (0, 1]");
    if (opts.batch_size == 0) throw ConfigError("calibration batch size must be positive");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (opts.fraction < 1.0) {
        Rng rng(opts.seed);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opts.fraction * static_cast<double>(order.size()))));
        order.resize(keep);
        std::sort(order.begin(), order.end());
    }
    std::vector<bool> wanted(model.site_count(), false);
    for (auto s : sites) {
        if (s >= model.site_count()) {
            throw ConfigError("site " + std::to_string(s) + " out of range; model has " +
                              std::to_string(model.site_count()) + " sites");
        }
        wanted[s] = true;
    }
    const std::size_t batches = (order.size() + opts.batch_size - 1) / opts.batch_size;
    // One accumulator per (batch, site); merged afterwards in batch order.
    std::vector<std::map<std::size_t, CalibrationAccumulator>> partial(batches);
    parallel_for(batches, [&](std::size_t b) {
        const std::size_t begin = b * opts.batch_size, end = std::min(order.size(), begin + opts.batch_size);
        const std::span<const std::size_t> idx(order.data() + begin, end - begin);
        Tape tape;
        Var x = tape.constant(data.gather(idx));
        auto& acc = partial[b];
        model.forward(tape, x, [&](std::size_t site, const Tensor& pre) {
            if (wanted[site]) acc[site].add(pre);
        }, false);
    });
    std::map<std::size_t, CalibrationAccumulator> out;
    for (auto s : sites) out[s] = CalibrationAccumulator(model.site_channels(s));
    for (auto& p : partial)
        for (auto& [site, acc] : p) out[site].merge(acc);
    return out;
}

std::map<std::size_t, SparsifierState> calibrate(const Model& model, const std::vector<std::size_t>& sites,
                                                 const Dataset& data, const CalibrationOptions& opts) {
    std::map<std::size_t, SparsifierState> out;
    for (const auto& [site, acc] : calibrate_accumulators(model, sites, data, opts)) out[site] = acc.finalize();
    return out;
}

void attach(Model& model, const std::map<std::size_t, SparsifierState>& states, const Placement& placement,
            double alpha, Centering centering) {
    const auto sites = placement.sites(model.spec());
    model.clear_sparsifiers();
    for (auto s : sites) {
        const auto it = states.find(s);
        if (it == states.end()) throw ConfigError("no calibration statistics for site " + std::to_string(s));
        SparsifierState st = it->second;
        st.alpha = alpha;
        st.centering = centering;
        st.enabled = true;
        model.set_sparsifier(s, std::move(st));
    }
}

void save_calibration(const std::string& path, const std::map<std::size_t, SparsifierState>& states) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << states.size() << '\n';
    for (const auto& [site, st] : states) {
        out << site << '\n';
        write_sparsifier(out, st);
    }
    if (!out) throw DataError("failed writing " + path);
}

std::map<std::size_t, SparsifierState> load_calibration(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open calibration file " + path);
    std::size_t count = 0;
    if (!(in >> count)) throw DataError("bad calibration file " + path);
    std::map<std::size_t, SparsifierState> out;
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t site = 0;
        if (!(in >> site)) throw DataError("bad calibration file " + path);
        in.ignore(1);
        out[site] = read_sparsifier(in);
    }
    return out;
}

}  // namespace meansparse
