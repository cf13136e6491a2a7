#include "meansparse/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "meansparse/error.hpp"
#include "meansparse/log.hpp"

#ifndef MEANSPARSE_GIT_HASH
#define MEANSPARSE_GIT_HASH "unknown"
#endif

namespace meansparse {

std::string git_hash() { return MEANSPARSE_GIT_HASH; }

AttackSpec default_eval_attack() {
    AttackSpec a;
    a.steps = 20;
    a.step_size = 2.0 / 255.0;
    return a;
}

void SweepPlan::validate() const {
    if (alphas.empty() || std::find(alphas.begin(), alphas.end(), 0.0) == alphas.end()) {
        throw ConfigError("alpha grid must contain 0 (the base model row)");
    }
    for (double a : alphas)
        if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("alpha values must be finite and >= 0");
    if (attacks.empty()) throw ConfigError("sweep needs at least one attack");
    for (const auto& a : attacks) a.validate();
    if (eval_batch == 0) throw ConfigError("evaluation batch must be positive");
}

namespace {

EvalReport sweep_rows(const Model& model, const std::map<std::size_t, SparsifierState>& stats, const Dataset& eval,
                      const SweepPlan& plan, const std::string& model_id, const std::string& variant,
                      const std::string& kind, bool include_base) {
    EvalReport report;
    for (double alpha : plan.alphas) {
        if (alpha == 0.0 && !include_base) continue;
        Model m = model;
        m.clear_sparsifiers();
        std::string prep_error;
        if (alpha > 0.0) {
            try {
                attach(m, stats, plan.placement, alpha, plan.centering);
            } catch (const Error& e) {
                prep_error = e.what();
            }
        }
        for (const auto& attack : plan.attacks) {
            ReportRow row;
            row.kind = kind;
            row.variant = variant;
            row.alpha = alpha;
            row.placement = plan.placement.to_string();
            row.centering = std::string(centering_name(plan.centering));
            row.attack = attack.label();
            row.norm = std::string(norm_name(attack.norm));
            row.epsilon = attack.epsilon;
            row.seed = attack.seed;
            row.model_id = model_id;
            row.base = alpha == 0.0;
            const auto t0 = std::chrono::steady_clock::now();
            try {
                if (!prep_error.empty()) throw Error(prep_error);
                const RobustResult r = evaluate_robust(m, eval, attack, plan.eval_batch);
                row.clean_acc = 100.0 * r.clean_acc;
                row.robust_acc = 100.0 * r.robust_acc;
                if (!r.all_feasible) row.status = "infeasible";
            } catch (const Error& e) {
                row.status = std::string("failed: ") + e.what();
                log_warn("sweep row alpha=" + std::to_string(alpha) + " " + row.attack + " failed: " + e.what());
            }
            row.eval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log_info(kind + " " + variant + " alpha " + std::to_string(alpha) + " " + row.attack + " clean " +
                     std::to_string(row.clean_acc) + " robust " + std::to_string(row.robust_acc));
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

void append(EvalReport& into, EvalReport from) {
    for (auto& r : from.rows) into.rows.push_back(std::move(r));
}

}  // namespace

EvalReport alpha_sweep(const Model& model, const std::map<std::size_t, SparsifierState>& stats, const Dataset& eval,
                       const SweepPlan& plan, const std::string& model_id, const std::string& variant,
                       const std::string& kind) {
    plan.validate();
    return sweep_rows(model, stats, eval, plan, model_id, variant, kind, true);
}

double select_alpha(std::span<const AlphaPoint> points, double max_clean_drop) {
    const auto base = std::find_if(points.begin(), points.end(), [](const AlphaPoint& p) { return p.alpha == 0.0; });
    if (base == points.end()) {
        log_warn("no base (alpha = 0) point; selecting alpha = 0");
        return 0.0;
    }
    const double floor = base->clean - max_clean_drop - 1e-9;
    std::optional<AlphaPoint> best;
    for (const auto& p : points) {
        if (p.clean < floor) continue;
        if (!best || p.robust > best->robust || (p.robust == best->robust && p.alpha < best->alpha)) best = p;
    }
    if (!best) {
        log_warn("no alpha keeps clean accuracy within the allowed drop; selecting alpha = 0");
        return 0.0;
    }
    return best->alpha;
}

double select_alpha(const EvalReport& report, double max_clean_drop, const std::string& attack,
                    const std::string& variant) {
    std::string chosen = attack;
    if (chosen.empty()) {
        if (report.rows.empty()) {
            log_warn("empty report; selecting alpha = 0");
            return 0.0;
        }
        chosen = report.rows.front().attack;
    }
    std::vector<AlphaPoint> points;
    const ReportRow* fallback_base = nullptr;
    for (const auto& r : report.rows) {
        if (r.status != "ok" || r.attack != chosen) continue;
        if (r.base && !fallback_base) fallback_base = &r;
        if (r.variant == variant) points.push_back({r.alpha, r.clean_acc, r.robust_acc});
    }
    const bool has_base = std::any_of(points.begin(), points.end(), [](const AlphaPoint& p) { return p.alpha == 0.0; });
    if (!has_base && fallback_base) points.push_back({0.0, fallback_base->clean_acc, fallback_base->robust_acc});
    return select_alpha(points, max_clean_drop);
}

std::string_view ablation_name(AblationKind k) {
    switch (k) {
        case AblationKind::Activation: return "activation";
        case AblationKind::ThreatNorm: return "threat";
        case AblationKind::ATMethod: return "at";
        case AblationKind::Centering: return "centering";
        case AblationKind::AttackPower: return "power";
        case AblationKind::Placement: return "placement";
    }
    return "activation";
}

AblationKind parse_ablation(std::string_view text) {
    for (auto k : {AblationKind::Activation, AblationKind::ThreatNorm, AblationKind::ATMethod, AblationKind::Centering,
                   AblationKind::AttackPower, AblationKind::Placement}) {
        if (ablation_name(k) == text) return k;
    }
    throw ConfigError("unknown ablation '" + std::string(text) +
                      "' (expected activation, threat, at, centering, power or placement)");
}

DataSplits load_data(const DataConfig& cfg) {
    DataSplits s;
    if (cfg.synthetic) {
        s = synth_splits(cfg.n_train, cfg.n_test, cfg.classes, cfg.spatial, cfg.seed);
    } else {
        if (cfg.data_dir.empty()) throw ConfigError("CIFAR-10 needs --data-dir (or use --synthetic)");
        s = load_cifar10(cfg.data_dir, cfg.subset, cfg.seed);
    }
    s.train.validate();
    s.test.validate();
    return s;
}

// ---- JSON ---------------------------------------------------------------

namespace {

double rational_field(const nlohmann::json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_string()) return parse_rational(v.get<std::string>());
    return v.get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const AttackSpec& a) {
    j = nlohmann::json{{"kind", attack_kind_name(a.kind)},
                       {"norm", norm_name(a.norm)},
                       {"epsilon", a.epsilon},
                       {"steps", a.steps},
                       {"step_size", a.step_size},
                       {"restarts", a.restarts},
                       {"loss", attack_loss_name(a.loss)},
                       {"seed", a.seed},
                       {"momentum", a.momentum},
                       {"step_halving", a.step_halving}};
    j["random_start"] = a.random_start ? nlohmann::json(*a.random_start) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, AttackSpec& a) {
    AttackSpec d = a;
    a.kind = parse_attack_kind(j.value("kind", std::string(attack_kind_name(d.kind))));
    a.norm = parse_norm(j.value("norm", std::string(norm_name(d.norm))));
    a.epsilon = rational_field(j, "epsilon", d.epsilon);
    a.steps = j.value("steps", d.steps);
    a.step_size = rational_field(j, "step_size", d.step_size);
    a.restarts = j.value("restarts", d.restarts);
    a.loss = parse_attack_loss(j.value("loss", std::string(attack_loss_name(d.loss))));
    a.seed = j.value("seed", d.seed);
    a.momentum = j.value("momentum", d.momentum);
    a.step_halving = j.value("step_halving", d.step_halving);
    if (j.contains("random_start")) {
        const auto& v = j.at("random_start");
        a.random_start = v.is_null() ? std::nullopt : std::optional<bool>(v.get<bool>());
    }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"decay_epochs", c.decay_epochs},
                       {"lr_factor", c.lr_factor},
                       {"momentum", c.momentum},
                       {"weight_decay", c.weight_decay},
                       {"mode", train_mode_name(c.mode)},
                       {"trades_beta", c.trades_beta},
                       {"at_attack", c.at_attack},
                       {"select_attack", c.select_attack},
                       {"selection", c.selection == SelectionRule::BestPgd ? "best_pgd" : "last"},
                       {"val_size", c.val_size},
                       {"augment", c.augment},
                       {"augment_pad", c.augment_pad},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d = c;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.decay_epochs = j.value("decay_epochs", d.decay_epochs);
    c.lr_factor = j.value("lr_factor", d.lr_factor);
    c.momentum = j.value("momentum", d.momentum);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.mode = parse_train_mode(j.value("mode", std::string(train_mode_name(d.mode))));
    c.trades_beta = j.value("trades_beta", d.trades_beta);
    if (j.contains("at_attack")) j.at("at_attack").get_to(c.at_attack);
    if (j.contains("select_attack")) j.at("select_attack").get_to(c.select_attack);
    const std::string sel = j.value("selection", std::string(d.selection == SelectionRule::BestPgd ? "best_pgd" : "last"));
    if (sel != "best_pgd" && sel != "last") throw ConfigError("selection must be best_pgd or last");
    c.selection = sel == "best_pgd" ? SelectionRule::BestPgd : SelectionRule::Last;
    c.val_size = j.value("val_size", d.val_size);
    c.augment = j.value("augment", d.augment);
    c.augment_pad = j.value("augment_pad", d.augment_pad);
    c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json data{{"synthetic", c.data.synthetic}, {"data_dir", c.data.data_dir},  {"n_train", c.data.n_train},
                        {"n_test", c.data.n_test},       {"classes", c.data.classes},    {"spatial", c.data.spatial},
                        {"seed", c.data.seed}};
    data["subset"] = c.data.subset ? nlohmann::json::array({c.data.subset->first, c.data.subset->second})
                                   : nlohmann::json(nullptr);
    nlohmann::json plan{{"alphas", c.plan.alphas},
                        {"attacks", c.plan.attacks},
                        {"placement", c.plan.placement.to_string()},
                        {"centering", centering_name(c.plan.centering)},
                        {"eval_batch", c.plan.eval_batch}};
    j = nlohmann::json{{"data", data},
                       {"net", c.net},
                       {"train", c.train},
                       {"plan", plan},
                       {"calibration",
                        {{"batch_size", c.calibration.batch_size},
                         {"fraction", c.calibration.fraction},
                         {"seed", c.calibration.seed}}},
                       {"cache_dir", c.cache_dir},
                       {"no_train", c.no_train},
                       {"eval_size", c.eval_size},
                       {"max_clean_drop", c.max_clean_drop}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    try {
        if (j.contains("data")) {
            const auto& d = j.at("data");
            c.data.synthetic = d.value("synthetic", c.data.synthetic);
            c.data.data_dir = d.value("data_dir", c.data.data_dir);
            c.data.n_train = d.value("n_train", c.data.n_train);
            c.data.n_test = d.value("n_test", c.data.n_test);
            c.data.classes = d.value("classes", c.data.classes);
            c.data.spatial = d.value("spatial", c.data.spatial);
            c.data.seed = d.value("seed", c.data.seed);
            if (d.contains("subset") && !d.at("subset").is_null()) {
                const auto v = d.at("subset").get<std::vector<std::size_t>>();
                if (v.size() != 2) throw ConfigError("data.subset needs [n_train, n_test]");
                c.data.subset = std::make_pair(v[0], v[1]);
            }
        }
        if (j.contains("net")) {
            nlohmann::json merged = c.net;
            merged.update(j.at("net"));
            c.net = merged.get<NetSpec>();
        }
        if (j.contains("train")) j.at("train").get_to(c.train);
        if (j.contains("plan")) {
            const auto& p = j.at("plan");
            c.plan.alphas = p.value("alphas", c.plan.alphas);
            if (p.contains("attacks")) {
                c.plan.attacks.clear();
                for (const auto& a : p.at("attacks")) c.plan.attacks.push_back(a.get<AttackSpec>());
            }
            if (p.contains("placement")) c.plan.placement = Placement::parse(p.at("placement").get<std::string>());
            if (p.contains("centering")) c.plan.centering = parse_centering(p.at("centering").get<std::string>());
            c.plan.eval_batch = p.value("eval_batch", c.plan.eval_batch);
        }
        if (j.contains("calibration")) {
            const auto& k = j.at("calibration");
            c.calibration.batch_size = k.value("batch_size", c.calibration.batch_size);
            c.calibration.fraction = k.value("fraction", c.calibration.fraction);
            c.calibration.seed = k.value("seed", c.calibration.seed);
        }
        c.cache_dir = j.value("cache_dir", c.cache_dir);
        c.no_train = j.value("no_train", c.no_train);
        c.eval_size = j.value("eval_size", c.eval_size);
        c.max_clean_drop = j.value("max_clean_drop", c.max_clean_drop);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
}

// ---- models and ablations ------------------------------------------------

NetSpec spec_for_data(NetSpec spec, const DataSplits& data) {
    const Shape s = data.train.sample_shape();
    if (s.size() != 3) throw DataError("training images must be [N,C,H,W]");
    spec.in_channels = s[0];
    spec.height = s[1];
    spec.width = s[2];
    spec.classes = data.train.classes;
    auto [mean, sd] = channel_stats(data.train);
    for (auto& v : sd) v = std::max(v, 1e-3);
    spec.input_mean = mean;
    spec.input_std = sd;
    return spec;
}

namespace {

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

ObtainedModel obtain_model(const ExperimentConfig& cfg, const DataSplits& data, const NetSpec& spec,
                           const TrainConfig& train_cfg) {
    nlohmann::json identity{{"net", spec},
                            {"train", train_cfg},
                            {"data",
                             {{"provenance", data.train.provenance},
                              {"n_train", data.train.size()},
                              {"n_test", data.test.size()},
                              {"seed", cfg.data.seed},
                              {"synthetic", cfg.data.synthetic}}}};
    ObtainedModel out;
    out.id = std::string(activation_name(spec.activation)) + "-" + std::string(train_mode_name(train_cfg.mode)) + "-" +
             fnv1a_hex(identity.dump());
    const std::filesystem::path dir(cfg.cache_dir);
    out.path = (dir / ("model-" + out.id + ".ckpt")).string();
    if (std::filesystem::exists(out.path)) {
        out.model = Model::load_file(out.path);
        log_info("loaded cached checkpoint " + out.path);
        return out;
    }
    if (cfg.no_train) throw DataError("missing checkpoint " + out.path + " and training is disabled");
    log_info("training " + out.id);
    // Selection uses a held-out tail of the training split, never the test split.
    const std::size_t n = data.train.size();
    const std::size_t n_val = std::min(train_cfg.val_size == 0 ? n / 10 : train_cfg.val_size, n / 4);
    std::vector<std::size_t> fit_idx(n - n_val), val_idx(n_val);
    std::iota(fit_idx.begin(), fit_idx.end(), std::size_t{0});
    std::iota(val_idx.begin(), val_idx.end(), n - n_val);
    TrainResult r = train(Model(spec, train_cfg.seed), data.train.subset(fit_idx), data.train.subset(val_idx), train_cfg);
    std::filesystem::create_directories(dir);
    r.best_model.save_file(out.path);
    std::ofstream hist(dir / ("model-" + out.id + ".history.csv"));
    write_history_csv(hist, r.history);
    out.model = std::move(r.best_model);
    out.trained = true;
    out.history = std::move(r.history);
    return out;
}

Dataset eval_split(const ExperimentConfig& cfg, const DataSplits& data) {
    if (cfg.eval_size == 0 || cfg.eval_size >= data.test.size()) return data.test;
    std::vector<std::size_t> head(cfg.eval_size);
    std::iota(head.begin(), head.end(), std::size_t{0});
    return data.test.subset(head);
}

namespace {

std::vector<std::size_t> all_sites(const Model& m) {
    std::vector<std::size_t> s(m.site_count());
    std::iota(s.begin(), s.end(), std::size_t{0});
    return s;
}

AttackSpec with_epsilon(AttackSpec a, Norm norm, double eps) {
    // Step size keeps its ratio to the radius of the template attack.
    const double ratio = a.epsilon > 0.0 ? a.step_size / a.epsilon : 0.25;
    a.norm = norm;
    a.epsilon = eps;
    a.step_size = ratio * eps;
    return a;
}

}  // namespace

EvalReport run_ablation(AblationKind kind, const ExperimentConfig& cfg, const DataSplits& data) {
    cfg.plan.validate();
    const std::string name(ablation_name(kind));
    const Dataset eval = eval_split(cfg, data);
    const NetSpec base_spec = spec_for_data(cfg.net, data);
    EvalReport report;

    auto sweep_model = [&](const NetSpec& spec, const TrainConfig& tc, const SweepPlan& plan, const std::string& variant) {
        ObtainedModel om = obtain_model(cfg, data, spec, tc);
        const auto stats = calibrate(om.model, all_sites(om.model), data.train, cfg.calibration);
        append(report, alpha_sweep(om.model, stats, eval, plan, om.id, variant, name));
    };

    switch (kind) {
        case AblationKind::Activation: {
            for (auto act : {ActivationKind::Relu, ActivationKind::Elu, ActivationKind::Gelu, ActivationKind::Silu,
                             ActivationKind::PSilu, ActivationKind::PSSilu}) {
                NetSpec spec = base_spec;
                spec.activation = act;
                sweep_model(spec, cfg.train, cfg.plan, std::string(activation_name(act)));
            }
            break;
        }
        case AblationKind::ATMethod: {
            for (auto mode : {TrainMode::PGD_AT, TrainMode::TRADES}) {
                TrainConfig tc = cfg.train;
                tc.mode = mode;
                sweep_model(base_spec, tc, cfg.plan, std::string(train_mode_name(mode)));
            }
            break;
        }
        case AblationKind::ThreatNorm:
        case AblationKind::Centering:
        case AblationKind::AttackPower:
        case AblationKind::Placement: {
            ObtainedModel om = obtain_model(cfg, data, base_spec, cfg.train);
            const auto stats = calibrate(om.model, all_sites(om.model), data.train, cfg.calibration);
            const AttackSpec& templ = cfg.plan.attacks.front();
            if (kind == AblationKind::ThreatNorm) {
                SweepPlan plan = cfg.plan;
                plan.attacks = {with_epsilon(templ, Norm::Linf, 8.0 / 255.0), with_epsilon(templ, Norm::L2, 128.0 / 255.0)};
                append(report, alpha_sweep(om.model, stats, eval, plan, om.id, "", name));
            } else if (kind == AblationKind::AttackPower) {
                SweepPlan plan = cfg.plan;
                plan.alphas = {0.0, 0.2, 0.35};
                plan.attacks.clear();
                for (int e = 1; e <= 16; ++e) plan.attacks.push_back(with_epsilon(templ, templ.norm, e / 255.0));
                append(report, alpha_sweep(om.model, stats, eval, plan, om.id, "", name));
            } else if (kind == AblationKind::Centering) {
                bool first = true;
                for (auto c : {Centering::Zero, Centering::GlobalMean, Centering::PerChannelMean}) {
                    SweepPlan plan = cfg.plan;
                    plan.centering = c;
                    plan.validate();
                    append(report, sweep_rows(om.model, stats, eval, plan, om.id, std::string(centering_name(c)), name, first));
                    first = false;
                }
            } else {
                std::vector<Placement> placements;
                const std::size_t sites = om.model.site_count();
                for (std::size_t i = 0; i < sites; ++i) placements.push_back({Placement::Kind::Single, i});
                for (std::size_t i = 0; i < sites; ++i) placements.push_back({Placement::Kind::Cumulative, i});
                placements.push_back({Placement::Kind::MainPath, 0});
                placements.push_back({Placement::Kind::AfterAddition, 0});
                bool first = true;
                for (const auto& p : placements) {
                    SweepPlan plan = cfg.plan;
                    plan.placement = p;
                    append(report, sweep_rows(om.model, stats, eval, plan, om.id, p.to_string(), name, first));
                    first = false;
                }
            }
            break;
        }
    }
    return report;
}

// ---- files ---------------------------------------------------------------

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string clean_field(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    return out;
}

constexpr const char* kReportHeader =
    "kind,variant,alpha,placement,centering,attack,norm,epsilon,clean_acc,robust_acc,seed,model_id,base,status";

}  // namespace

void write_report_csv(const std::string& path, const EvalReport& report) {
    auto out = open_out(path);
    out << kReportHeader << '\n';
    for (const auto& r : report.rows) {
        out << clean_field(r.kind) << ',' << clean_field(r.variant) << ',' << fmt("%.6g", r.alpha) << ','
            << clean_field(r.placement) << ',' << clean_field(r.centering) << ',' << clean_field(r.attack) << ','
            << r.norm << ',' << fmt("%.10g", r.epsilon) << ',' << fmt("%.4f", r.clean_acc) << ','
            << fmt("%.4f", r.robust_acc) << ',' << r.seed << ',' << clean_field(r.model_id) << ','
            << (r.base ? 1 : 0) << ',' << clean_field(r.status) << '\n';
    }
    if (!out) throw DataError("failed writing " + path);
}

EvalReport read_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report " + path);
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader) throw DataError(path + " is not a report.csv");
    EvalReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 14) throw DataError("malformed report line: " + line);
        ReportRow r;
        try {
            r.kind = f[0];
            r.variant = f[1];
            r.alpha = std::stod(f[2]);
            r.placement = f[3];
            r.centering = f[4];
            r.attack = f[5];
            r.norm = f[6];
            r.epsilon = std::stod(f[7]);
            r.clean_acc = std::stod(f[8]);
            r.robust_acc = std::stod(f[9]);
            r.seed = std::stoull(f[10]);
            r.model_id = f[11];
            r.base = f[12] == "1";
            r.status = f[13];
        } catch (const std::exception&) {
            throw DataError("malformed report line: " + line);
        }
        report.rows.push_back(std::move(r));
    }
    return report;
}

void write_timings_csv(const std::string& path, const EvalReport& report) {
    auto out = open_out(path);
    out << "kind,variant,alpha,placement,centering,attack,eval_seconds\n";
    for (const auto& r : report.rows) {
        out << clean_field(r.kind) << ',' << clean_field(r.variant) << ',' << fmt("%.6g", r.alpha) << ','
            << clean_field(r.placement) << ',' << clean_field(r.centering) << ',' << clean_field(r.attack) << ','
            << fmt("%.3f", r.eval_seconds) << '\n';
    }
}

void write_plotdata_csv(const std::string& path, const EvalReport& report) {
    std::vector<const ReportRow*> rows;
    for (const auto& r : report.rows)
        if (r.status == "ok") rows.push_back(&r);
    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow* a, const ReportRow* b) {
        return std::tie(a->variant, a->attack, a->placement, a->centering, a->alpha) <
               std::tie(b->variant, b->attack, b->placement, b->centering, b->alpha);
    });
    auto out = open_out(path);
    out << "variant,attack,placement,centering,alpha,clean_acc,robust_acc\n";
    for (const auto* r : rows) {
        out << clean_field(r->variant) << ',' << clean_field(r->attack) << ',' << clean_field(r->placement) << ','
            << clean_field(r->centering) << ',' << fmt("%.6g", r->alpha) << ',' << fmt("%.4f", r->clean_acc) << ','
            << fmt("%.4f", r->robust_acc) << '\n';
    }
}

void write_manifest(const std::string& path, const nlohmann::json& config, const EvalReport& report,
                    const std::vector<std::string>& model_ids) {
    nlohmann::json m;
    m["git_hash"] = git_hash();
    m["config"] = config;
    m["model_ids"] = model_ids;
    m["rows"] = report.rows.size();
    m["selected_alpha"] = report.selected_alpha ? nlohmann::json(*report.selected_alpha) : nlohmann::json(nullptr);
    nlohmann::json seeds = nlohmann::json::object();
    if (config.contains("data") && config["data"].contains("seed")) seeds["data"] = config["data"]["seed"];
    if (config.contains("train") && config["train"].contains("seed")) seeds["train"] = config["train"]["seed"];
    nlohmann::json attack_seeds = nlohmann::json::array();
    for (const auto& r : report.rows)
        if (std::find(attack_seeds.begin(), attack_seeds.end(), r.seed) == attack_seeds.end()) attack_seeds.push_back(r.seed);
    seeds["attacks"] = attack_seeds;
    m["seeds"] = seeds;
    double total = 0.0;
    for (const auto& r : report.rows) total += r.eval_seconds;
    m["eval_seconds_total"] = total;
    auto out = open_out(path);
    out << m.dump(2) << '\n';
}

}  // namespace meansparse
