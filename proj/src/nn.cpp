#include "meansparse/nn.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "meansparse/error.hpp"
#include "meansparse/rng.hpp"

namespace meansparse {

std::string_view activation_name(ActivationKind kind) {
    switch (kind) {
        case ActivationKind::Relu: return "relu";
        case ActivationKind::Elu: return "elu";
        case ActivationKind::Gelu: return "gelu";
        case ActivationKind::Silu: return "silu";
        case ActivationKind::PSilu: return "psilu";
        case ActivationKind::PSSilu: return "pssilu";
    }
    return "relu";
}

ActivationKind parse_activation(std::string_view text) {
    for (auto k : {ActivationKind::Relu, ActivationKind::Elu, ActivationKind::Gelu, ActivationKind::Silu,
                   ActivationKind::PSilu, ActivationKind::PSSilu}) {
        if (activation_name(k) == text) return k;
    }
    throw ConfigError("unknown activation '" + std::string(text) + "'");
}

bool is_parametric(ActivationKind kind) { return kind == ActivationKind::PSilu || kind == ActivationKind::PSSilu; }

namespace {

void check_params(ActivationKind kind, const ActivationParams& p) {
    if (!is_parametric(kind)) return;
    if (!(p.beta > 0.0)) throw DomainError("activation beta must be positive, got " + std::to_string(p.beta));
    if (kind == ActivationKind::PSSilu && !(p.shift >= 0.0 && p.shift < 1.0)) {
        throw DomainError("pssilu shift must lie in [0, 1), got " + std::to_string(p.shift));
    }
}

}  // namespace

double activation_value(ActivationKind kind, double x, const ActivationParams& p) {
    check_params(kind, p);
    switch (kind) {
        case ActivationKind::Relu: return x > 0.0 ? x : 0.0;
        case ActivationKind::Elu: return x > 0.0 ? x : std::expm1(x);
        case ActivationKind::Gelu: return gelu_value(x);
        case ActivationKind::Silu: return x * sigmoid(x);
        case ActivationKind::PSilu: return x * sigmoid(p.beta * x);
        case ActivationKind::PSSilu: return x * (sigmoid(p.beta * x) - p.shift) / (1.0 - p.shift);
    }
    return x;
}

Tensor activation_eval(ActivationKind kind, const Tensor& x, const ActivationParams& p) {
    check_params(kind, p);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = activation_value(kind, x[i], p);
    return out;
}

Var apply_activation(ActivationKind kind, Var x, Var beta, Var shift) {
    switch (kind) {
        case ActivationKind::Relu: return relu(x);
        case ActivationKind::Elu: return elu(x);
        case ActivationKind::Gelu: return gelu(x);
        case ActivationKind::Silu: return silu(x);
        case ActivationKind::PSilu: return psilu(x, beta);
        case ActivationKind::PSSilu: return pssilu(x, beta, shift);
    }
    return x;
}

std::string_view site_role_name(SiteRole role) {
    switch (role) {
        case SiteRole::Stem: return "stem";
        case SiteRole::MainPath: return "main";
        case SiteRole::AfterAddition: return "after";
    }
    return "stem";
}

void NetSpec::validate() const {
    if (in_channels == 0 || height == 0 || width == 0) throw ConfigError("input shape must be positive");
    if (blocks < 1) throw ConfigError("need at least one residual block");
    if (classes < 2) throw ConfigError("need at least two classes");
    if (widths.size() < 2) throw ConfigError("widths needs a stem width and at least one stage width");
    for (auto w : widths)
        if (w == 0) throw ConfigError("widths must be positive");
    if (blocks < widths.size() - 1) throw ConfigError("every stage needs at least one residual block");
    if (input_mean.size() != in_channels || input_std.size() != in_channels) {
        throw ConfigError("input normalization needs one mean and std per input channel");
    }
    for (double s : input_std)
        if (!(s > 0.0)) throw ConfigError("input std must be positive");
    check_params(activation, activation_init);
}

std::vector<std::size_t> NetSpec::blocks_per_stage() const {
    const std::size_t stages = widths.size() - 1;
    std::vector<std::size_t> counts(stages, blocks / stages);
    for (std::size_t i = 0; i < blocks % stages; ++i) ++counts[i];
    return counts;
}

SiteRole NetSpec::site_role(std::size_t site) const {
    if (site >= site_count()) throw ConfigError("site " + std::to_string(site) + " out of range");
    if (site == 0) return SiteRole::Stem;
    return site % 2 == 1 ? SiteRole::MainPath : SiteRole::AfterAddition;
}

std::vector<LayerNode> NetSpec::layers() const {
    validate();
    std::vector<LayerNode> out;
    out.push_back({LayerKind::Normalize, "normalize", {"input"}, in_channels, in_channels, 1, -1, 0});
    out.push_back({LayerKind::Conv, "stem.conv", {"normalize"}, in_channels, widths[0], 1, -1, 0});
    out.push_back({LayerKind::BatchNorm, "stem.bn", {"stem.conv"}, widths[0], widths[0], 1, -1, 0});
    out.push_back({LayerKind::Activation, "site0", {"stem.bn"}, widths[0], widths[0], 1, 0, 0});
    std::string prev = "site0";
    std::size_t in_w = widths[0];
    std::size_t b = 0;
    const auto per_stage = blocks_per_stage();
    for (std::size_t stage = 0; stage < per_stage.size(); ++stage) {
        for (std::size_t j = 0; j < per_stage[stage]; ++j) {
            ++b;
            const std::size_t w = widths[stage + 1];
            const std::size_t stride = w != in_w ? 2 : 1;
            const std::string p = "block" + std::to_string(b) + ".";
            const int main_site = static_cast<int>(2 * b - 1), add_site = static_cast<int>(2 * b);
            out.push_back({LayerKind::Conv, p + "conv1", {prev}, in_w, w, stride, -1, b});
            out.push_back({LayerKind::BatchNorm, p + "bn1", {p + "conv1"}, w, w, 1, -1, b});
            out.push_back({LayerKind::Activation, "site" + std::to_string(main_site), {p + "bn1"}, w, w, 1, main_site, b});
            out.push_back({LayerKind::Conv, p + "conv2", {"site" + std::to_string(main_site)}, w, w, 1, -1, b});
            out.push_back({LayerKind::BatchNorm, p + "bn2", {p + "conv2"}, w, w, 1, -1, b});
            std::string shortcut = prev;
            if (stride != 1 || w != in_w) {
                out.push_back({LayerKind::Conv, p + "shortcut.conv", {prev}, in_w, w, stride, -1, b});
                out.push_back({LayerKind::BatchNorm, p + "shortcut.bn", {p + "shortcut.conv"}, w, w, 1, -1, b});
                shortcut = p + "shortcut.bn";
            }
            out.push_back({LayerKind::Add, p + "add", {p + "bn2", shortcut}, w, w, 1, -1, b});
            out.push_back({LayerKind::Activation, "site" + std::to_string(add_site), {p + "add"}, w, w, 1, add_site, b});
            prev = "site" + std::to_string(add_site);
            in_w = w;
        }
    }
    out.push_back({LayerKind::GlobalPool, "pool", {prev}, in_w, in_w, 1, -1, 0});
    out.push_back({LayerKind::Linear, "fc", {"pool"}, in_w, classes, 1, -1, 0});
    return out;
}

void to_json(nlohmann::json& j, const NetSpec& s) {
    j = nlohmann::json{{"in_channels", s.in_channels},
                       {"height", s.height},
                       {"width", s.width},
                       {"blocks", s.blocks},
                       {"widths", s.widths},
                       {"classes", s.classes},
                       {"activation", activation_name(s.activation)},
                       {"activation_beta", s.activation_init.beta},
                       {"activation_shift", s.activation_init.shift},
                       {"input_mean", s.input_mean},
                       {"input_std", s.input_std}};
}

void from_json(const nlohmann::json& j, NetSpec& s) {
    NetSpec d;
    s.in_channels = j.value("in_channels", d.in_channels);
    s.height = j.value("height", d.height);
    s.width = j.value("width", d.width);
    s.blocks = j.value("blocks", d.blocks);
    s.widths = j.value("widths", d.widths);
    s.classes = j.value("classes", d.classes);
    s.activation = parse_activation(j.value("activation", std::string(activation_name(d.activation))));
    s.activation_init.beta = j.value("activation_beta", d.activation_init.beta);
    s.activation_init.shift = j.value("activation_shift", d.activation_init.shift);
    s.input_mean = j.value("input_mean", d.input_mean);
    s.input_std = j.value("input_std", d.input_std);
}

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    t.set_requires_grad(true);
    return t;
}

Conv make_conv(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng) {
    return Conv{he_uniform({out, in, k, k}, in * k * k, rng), stride, k / 2};
}

BatchNorm make_bn(std::size_t c) {
    BatchNorm bn;
    bn.gamma = Tensor({c}, 1.0);
    bn.beta = Tensor({c}, 0.0);
    bn.gamma.set_requires_grad(true);
    bn.beta.set_requires_grad(true);
    bn.running_mean = Tensor({c}, 0.0);
    bn.running_var = Tensor({c}, 1.0);
    return bn;
}

}  // namespace

Model::Model(NetSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    spec_.validate();
    Rng rng(seed);
    stem_ = make_conv(spec_.in_channels, spec_.widths[0], 3, 1, rng);
    stem_bn_ = make_bn(spec_.widths[0]);
    std::size_t in_w = spec_.widths[0];
    const auto per_stage = spec_.blocks_per_stage();
    for (std::size_t stage = 0; stage < per_stage.size(); ++stage) {
        for (std::size_t j = 0; j < per_stage[stage]; ++j) {
            const std::size_t w = spec_.widths[stage + 1];
            const std::size_t stride = w != in_w ? 2 : 1;
            ResidualBlock blk;
            blk.conv1 = make_conv(in_w, w, 3, stride, rng);
            blk.bn1 = make_bn(w);
            blk.conv2 = make_conv(w, w, 3, 1, rng);
            blk.bn2 = make_bn(w);
            if (stride != 1 || w != in_w) {
                blk.shortcut_conv = make_conv(in_w, w, 1, stride, rng);
                blk.shortcut_bn = make_bn(w);
            }
            blocks_.push_back(std::move(blk));
            in_w = w;
        }
    }
    fc_weight_ = he_uniform({spec_.classes, in_w}, in_w, rng);
    fc_bias_ = Tensor({spec_.classes}, 0.0);
    fc_bias_.set_requires_grad(true);
    if (is_parametric(spec_.activation)) {
        for (std::size_t s = 0; s < spec_.site_count(); ++s) {
            act_beta_.push_back(Tensor::scalar(spec_.activation_init.beta));
            act_beta_.back().set_requires_grad(true);
            if (spec_.activation == ActivationKind::PSSilu) {
                act_shift_.push_back(Tensor::scalar(spec_.activation_init.shift));
                act_shift_.back().set_requires_grad(true);
            }
        }
    }
    sparsifiers_.resize(spec_.site_count());
}

Model build_mini_resnet(const NetSpec& spec, std::uint64_t seed) { return Model(spec, seed); }

std::size_t Model::check_site(std::size_t site) const {
    if (site >= site_count()) {
        throw ConfigError("site " + std::to_string(site) + " out of range; model has " +
                          std::to_string(site_count()) + " sites");
    }
    return site;
}

std::size_t Model::site_channels(std::size_t site) const {
    check_site(site);
    if (site == 0) return spec_.widths[0];
    return blocks_[(site - 1) / 2].bn1.gamma.numel();
}

ActivationParams Model::activation_params(std::size_t site) const {
    check_site(site);
    ActivationParams p;
    if (!act_beta_.empty()) p.beta = act_beta_[site].item();
    if (!act_shift_.empty()) p.shift = act_shift_[site].item();
    return p;
}

namespace {

struct Binder {
    Tape& tape;
    Model* trainable;
    Var operator()(const Tensor& t) const {
        if (trainable) return tape.leaf(const_cast<Tensor&>(t));
        return tape.constant(Tensor(t.shape(), std::vector<double>(t.values().begin(), t.values().end())));
    }
};

void update_running(BatchNorm& bn, const std::vector<double>& mean, const std::vector<double>& var, std::size_t count) {
    const double m = bn.momentum;
    const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    for (std::size_t c = 0; c < mean.size(); ++c) {
        bn.running_mean[c] = (1.0 - m) * bn.running_mean[c] + m * mean[c];
        bn.running_var[c] = (1.0 - m) * bn.running_var[c] + m * var[c] * unbias;
    }
}

}  // namespace

Var Model::run(Tape& tape, Var x, bool train, const SiteObserver* observer, bool apply_sparsifiers) {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || xs[1] != spec_.in_channels || xs[2] != spec_.height || xs[3] != spec_.width) {
        throw ShapeError("model expects [N," + std::to_string(spec_.in_channels) + "," + std::to_string(spec_.height) +
                         "," + std::to_string(spec_.width) + "] input, got " + shape_to_string(xs));
    }
    Binder bind{tape, train ? this : nullptr};
    auto conv = [&](const Conv& c, Var in) { return conv2d(in, bind(c.weight), c.stride, c.pad); };
    auto norm = [&](BatchNorm& bn, Var in) {
        if (!train) {
            return batch_norm_eval(in, bind(bn.gamma), bind(bn.beta), bn.running_mean.values(),
                                   bn.running_var.values(), bn.eps);
        }
        std::vector<double> mean, var;
        Var out = batch_norm_train(in, bind(bn.gamma), bind(bn.beta), bn.eps, &mean, &var);
        update_running(bn, mean, var, in.value().numel() / bn.gamma.numel());
        return out;
    };
    auto site = [&](std::size_t index, Var pre) {
        if (observer && *observer) (*observer)(index, pre.value());
        const auto& sp = sparsifiers_[index];
        if (apply_sparsifiers && sp && sp->enabled) pre = mean_sparse(pre, *sp);
        Var beta, shift;
        if (!act_beta_.empty()) beta = bind(act_beta_[index]);
        if (!act_shift_.empty()) shift = bind(act_shift_[index]);
        return apply_activation(spec_.activation, pre, beta, shift);
    };

    std::vector<double> inv_std(spec_.in_channels), offset(spec_.in_channels);
    for (std::size_t c = 0; c < spec_.in_channels; ++c) {
        inv_std[c] = 1.0 / spec_.input_std[c];
        offset[c] = -spec_.input_mean[c] * inv_std[c];
    }
    Var h = channel_affine(x, inv_std, offset);
    h = site(0, norm(stem_bn_, conv(stem_, h)));
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        ResidualBlock& blk = blocks_[b];
        Var main = site(2 * b + 1, norm(blk.bn1, conv(blk.conv1, h)));
        main = norm(blk.bn2, conv(blk.conv2, main));
        Var skip = blk.shortcut_conv ? norm(*blk.shortcut_bn, conv(*blk.shortcut_conv, h)) : h;
        h = site(2 * b + 2, add(main, skip));
    }
    Var pooled = global_avg_pool(h);
    return linear(pooled, bind(fc_weight_), bind(fc_bias_));
}

Var Model::logits(Tape& tape, Var x) const { return forward(tape, x, SiteObserver{}, true); }

Var Model::forward(Tape& tape, Var x, const SiteObserver& observer, bool apply_sparsifiers) const {
    // Eval mode never writes through the pointer: parameters are copied onto
    // the tape and running statistics are only read.
    return const_cast<Model*>(this)->run(tape, x, false, &observer, apply_sparsifiers);
}

Var Model::forward_train(Tape& tape, Var x) { return run(tape, x, true, nullptr, true); }

std::vector<NamedTensor> Model::named_tensors() {
    std::vector<NamedTensor> out;
    auto conv = [&](const std::string& name, Conv& c) { out.push_back({name + ".weight", &c.weight, true, true}); };
    auto bn = [&](const std::string& name, BatchNorm& b) {
        out.push_back({name + ".gamma", &b.gamma, true, true});
        out.push_back({name + ".beta", &b.beta, true, true});
        out.push_back({name + ".running_mean", &b.running_mean, false, false});
        out.push_back({name + ".running_var", &b.running_var, false, false});
    };
    conv("stem.conv", stem_);
    bn("stem.bn", stem_bn_);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const std::string p = "block" + std::to_string(b + 1) + ".";
        conv(p + "conv1", blocks_[b].conv1);
        bn(p + "bn1", blocks_[b].bn1);
        conv(p + "conv2", blocks_[b].conv2);
        bn(p + "bn2", blocks_[b].bn2);
        if (blocks_[b].shortcut_conv) {
            conv(p + "shortcut.conv", *blocks_[b].shortcut_conv);
            bn(p + "shortcut.bn", *blocks_[b].shortcut_bn);
        }
    }
    out.push_back({"fc.weight", &fc_weight_, true, true});
    out.push_back({"fc.bias", &fc_bias_, true, true});
    for (std::size_t s = 0; s < act_beta_.size(); ++s)
        out.push_back({"act" + std::to_string(s) + ".beta", &act_beta_[s], true, false});
    for (std::size_t s = 0; s < act_shift_.size(); ++s)
        out.push_back({"act" + std::to_string(s) + ".shift", &act_shift_[s], true, false});
    return out;
}

std::vector<NamedTensor> Model::parameters() {
    std::vector<NamedTensor> out;
    for (auto& nt : named_tensors())
        if (nt.trainable) out.push_back(nt);
    return out;
}

void Model::zero_grad() {
    for (auto& p : parameters()) p.tensor->clear_grad();
}

void Model::project_activation_params() {
    constexpr double kMinBeta = 1e-3, kMaxShift = 0.99;
    for (auto& b : act_beta_) b[0] = std::max(b[0], kMinBeta);
    for (auto& s : act_shift_) s[0] = std::clamp(s[0], 0.0, kMaxShift);
}

const std::optional<SparsifierState>& Model::sparsifier(std::size_t site) const { return sparsifiers_[check_site(site)]; }

void Model::set_sparsifier(std::size_t site, SparsifierState state) {
    check_site(site);
    state.validate();
    if (state.channels != site_channels(site)) {
        throw ShapeError("site " + std::to_string(site) + " has " + std::to_string(site_channels(site)) +
                         " channels, sparsifier has " + std::to_string(state.channels));
    }
    sparsifiers_[site] = std::move(state);
}

void Model::clear_sparsifiers() {
    for (auto& s : sparsifiers_) s.reset();
}

std::size_t Model::sparsifier_count() const {
    std::size_t n = 0;
    for (const auto& s : sparsifiers_) n += s.has_value();
    return n;
}

void Model::set_alpha(double alpha) {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw DomainError("alpha must be finite and >= 0");
    for (auto& s : sparsifiers_)
        if (s) s->alpha = alpha;
}

void Model::save(std::ostream& out, DType dtype) const {
    auto& self = const_cast<Model&>(*this);
    nlohmann::json header{{"format", "meansparse-model"},
                          {"version", 1},
                          {"spec", spec_},
                          {"seed", seed_},
                          {"activation", activation_name(spec_.activation)},
                          {"dtype", dtype == DType::F64 ? "f64" : "f32"}};
    nlohmann::json names = nlohmann::json::array();
    const auto tensors = self.named_tensors();
    for (const auto& nt : tensors) names.push_back(nt.name);
    header["tensors"] = names;
    out << header.dump() << '\n';
    for (const auto& nt : tensors) write_tensor(out, *nt.tensor, dtype);
    if (!out) throw DataError("failed writing checkpoint");
}

Model Model::load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty checkpoint");
    nlohmann::json header;
    NetSpec spec;
    std::uint64_t seed = 0;
    std::vector<std::string> names;
    try {
        header = nlohmann::json::parse(line);
        if (header.at("format") != "meansparse-model") throw DataError("not a model checkpoint");
        spec = header.at("spec").get<NetSpec>();
        seed = header.at("seed").get<std::uint64_t>();
        names = header.at("tensors").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad checkpoint header: ") + e.what());
    }
    Model m(spec, seed);
    auto tensors = m.named_tensors();
    if (names.size() != tensors.size()) throw DataError("checkpoint tensor count does not match its spec");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (names[i] != tensors[i].name) throw DataError("checkpoint tensor '" + names[i] + "' out of order");
        Tensor t = read_tensor(in);
        if (t.shape() != tensors[i].tensor->shape()) {
            throw DataError("checkpoint tensor '" + names[i] + "' has shape " + shape_to_string(t.shape()) +
                            ", expected " + shape_to_string(tensors[i].tensor->shape()));
        }
        std::copy(t.values().begin(), t.values().end(), tensors[i].tensor->values().begin());
    }
    return m;
}

void Model::save_file(const std::string& path, DType dtype) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    save(out, dtype);
}

Model Model::load_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    return load(in);
}

std::vector<int> predict(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("predict expects [N,K] logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits[r * k + j] > logits[r * k + best]) best = j;
        out[r] = static_cast<int>(best);
    }
    return out;
}

}  // namespace meansparse
