#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "meansparse/error.hpp"
#include "meansparse/harness.hpp"
#include "meansparse/log.hpp"
#include "meansparse/parallel.hpp"
#include "meansparse/prox.hpp"

namespace meansparse::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Raw flag values; a flag only takes effect when it was given on the command
// line, so file values survive unless overridden.
struct Flags {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::size_t threads = 0;
    std::string precision = "fp64";
    bool quiet = false;
    bool verbose = false;

    bool synthetic = false;
    std::string data_dir;
    std::string subset;
    std::size_t n_train = 0, n_test = 0, eval_size = 0;
    std::string cache_dir;
    bool no_train = false;
    std::string model_path;
    std::string calibration_path;

    std::string activation;
    std::size_t blocks = 0;
    std::string mode;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    double lr = 0.0;

    std::string attack_kind, norm, eps, step_size, attack_loss;
    std::size_t steps = 0, restarts = 0;

    std::string alpha = "0";
    std::string centering, placement;
    double calib_fraction = 1.0;
    std::string alpha_grid;
    double max_clean_drop = 0.1;

    std::string report_path;
    std::string attack_label, variant;
    std::string ablation;

    std::string problem = "quadratic";
    double gamma = 0.0, lambda0 = 0.0, decay = 0.95, step = 0.0;
    std::size_t iters = 40;
};

struct Run {
    CLI::App* sub = nullptr;
    Flags f;
    ExperimentConfig cfg;
    json file;  // raw config file, empty when none was given
    fs::path out;
    DType dtype = DType::F64;

    bool given(const std::string& flag) const {
        const CLI::Option* opt = sub->get_option_no_throw(flag);
        return opt != nullptr && opt->count() > 0;
    }
};

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    std::istringstream is(text);
    while (std::getline(is, cur, sep)) {
        cur.erase(0, cur.find_first_not_of(" \t"));
        cur.erase(cur.find_last_not_of(" \t") + 1);
        if (!cur.empty()) parts.push_back(cur);
    }
    return parts;
}

std::size_t parse_count(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("bad " + what + ": '" + text + "'");
    }
}

// ---- option registration -------------------------------------------------

void add_run_options(CLI::App* s, Flags& f) {
    s->add_option("--config", f.config_path, "JSON config file; flags override its values")->check(CLI::ExistingFile);
    s->add_option("--out", f.out_dir, "Run directory for all artifacts (default runs/<subcommand>)");
    s->add_option("--seed", f.seed, "Master seed for data, initialization, calibration and attacks");
    s->add_option("--threads", f.threads, "Worker threads (default: all cores; 1 is the deterministic mode)");
    s->add_option("--precision", f.precision, "Checkpoint storage precision: fp64 or fp32 (compute is fp64)");
    s->add_flag("-q,--quiet", f.quiet, "Only errors");
    s->add_flag("-v,--verbose", f.verbose, "Progress messages");
}

void add_data_options(CLI::App* s, Flags& f) {
    s->add_flag("--synthetic", f.synthetic, "Use synthetic blobs instead of CIFAR-10");
    s->add_option("--data-dir", f.data_dir, "Directory holding the CIFAR-10 binary batches");
    s->add_option("--subset", f.subset, "Stratified CIFAR-10 subset as N_TRAIN,N_TEST");
    s->add_option("--n-train", f.n_train, "Synthetic training samples");
    s->add_option("--n-test", f.n_test, "Synthetic test samples");
    s->add_option("--eval-size", f.eval_size, "Leading test samples evaluated (0: all)");
}

void add_model_options(CLI::App* s, Flags& f) {
    s->add_option("--model", f.model_path, "Checkpoint to use instead of the training cache");
    s->add_option("--cache-dir", f.cache_dir, "Checkpoint cache (default <out>/checkpoints)");
    s->add_flag("--no-train", f.no_train, "Fail instead of training when no cached checkpoint exists");
    s->add_option("--activation", f.activation, "relu, elu, gelu, silu, psilu or pssilu");
    s->add_option("--blocks", f.blocks, "Residual blocks");
    s->add_option("--mode", f.mode, "Training: standard, pgd or trades");
    s->add_option("--epochs", f.epochs, "Training epochs");
    s->add_option("--batch-size", f.batch_size, "Training batch size");
    s->add_option("--lr", f.lr, "Initial learning rate");
}

void add_calibration_options(CLI::App* s, Flags& f) {
    s->add_option("--calibration", f.calibration_path, "Saved statistics (skips the calibration pass)");
    s->add_option("--calib-fraction", f.calib_fraction, "Fraction of the training split used for statistics");
    s->add_option("--centering", f.centering, "channel, zero or global");
    s->add_option("--placement", f.placement, "all, single:<i>, cumulative:<i>, main or after");
}

void add_attack_options(CLI::App* s, Flags& f) {
    s->add_option("--attack", f.attack_kind, "fgsm, pgd or mpgd");
    s->add_option("--norm", f.norm, "linf or l2");
    s->add_option("--eps", f.eps, "Radius, e.g. 8/255");
    s->add_option("--steps", f.steps, "Attack iterations");
    s->add_option("--step-size", f.step_size, "Attack step, e.g. 2/255");
    s->add_option("--restarts", f.restarts, "Attack restarts");
    s->add_option("--attack-loss", f.attack_loss, "ce or dlr");
}

// ---- effective configuration ---------------------------------------------

void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
    c.data.seed = seed;
    c.train.seed = seed;
    c.train.at_attack.seed = seed;
    c.train.select_attack.seed = seed;
    c.calibration.seed = seed;
    for (auto& a : c.plan.attacks) a.seed = seed;
}

void apply_flags(Run& r) {
    const Flags& f = r.f;
    ExperimentConfig& c = r.cfg;
    if (r.given("--seed")) apply_seed(c, f.seed);

    if (r.given("--synthetic")) c.data.synthetic = true;
    if (r.given("--data-dir")) {
        c.data.data_dir = f.data_dir;
        if (!r.given("--synthetic")) c.data.synthetic = false;
    }
    if (r.given("--subset")) {
        const auto parts = split(f.subset, ',');
        if (parts.size() != 2) throw ConfigError("--subset needs N_TRAIN,N_TEST");
        c.data.subset = std::make_pair(parse_count(parts[0], "--subset"), parse_count(parts[1], "--subset"));
    }
    if (r.given("--n-train")) c.data.n_train = f.n_train;
    if (r.given("--n-test")) c.data.n_test = f.n_test;
    if (r.given("--eval-size")) c.eval_size = f.eval_size;
    if (r.given("--cache-dir")) c.cache_dir = f.cache_dir;
    if (r.given("--no-train")) c.no_train = true;

    if (r.given("--activation")) c.net.activation = parse_activation(f.activation);
    if (r.given("--blocks")) c.net.blocks = f.blocks;
    if (r.given("--mode")) c.train.mode = parse_train_mode(f.mode);
    if (r.given("--epochs")) c.train.epochs = f.epochs;
    if (r.given("--batch-size")) c.train.batch_size = f.batch_size;
    if (r.given("--lr")) c.train.lr = f.lr;

    if (r.given("--calib-fraction")) c.calibration.fraction = f.calib_fraction;
    if (r.given("--centering")) c.plan.centering = parse_centering(f.centering);
    if (r.given("--placement")) c.plan.placement = Placement::parse(f.placement);
    if (r.given("--alpha-grid")) {
        c.plan.alphas.clear();
        for (const auto& a : split(f.alpha_grid, ',')) c.plan.alphas.push_back(parse_rational(a));
    }
    if (r.given("--max-clean-drop")) c.max_clean_drop = f.max_clean_drop;

    const bool attack_flag = r.given("--attack") || r.given("--norm") || r.given("--eps") || r.given("--steps") ||
                             r.given("--step-size") || r.given("--restarts") || r.given("--attack-loss");
    if (attack_flag) {
        AttackSpec a = c.plan.attacks.empty() ? default_eval_attack() : c.plan.attacks.front();
        if (r.given("--attack")) a.kind = parse_attack_kind(f.attack_kind);
        if (r.given("--norm")) a.norm = parse_norm(f.norm);
        if (r.given("--eps")) a.epsilon = parse_rational(f.eps);
        if (r.given("--steps")) a.steps = f.steps;
        if (r.given("--step-size")) a.step_size = parse_rational(f.step_size);
        if (r.given("--restarts")) a.restarts = f.restarts;
        if (r.given("--attack-loss")) a.loss = parse_attack_loss(f.attack_loss);
        c.plan.attacks = {a};
    }
}

void setup(Run& r, const std::string& name) {
    Flags& f = r.f;
    set_log_level(f.quiet ? LogLevel::Quiet : f.verbose ? LogLevel::Info : LogLevel::Warn);

    if (!f.config_path.empty()) {
        std::ifstream in(f.config_path);
        if (!in) throw ConfigError("cannot read config " + f.config_path);
        try {
            r.file = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config " + f.config_path + " is not valid JSON: " + e.what());
        }
        from_json(r.file, r.cfg);
        if (r.file.contains("seed") && !r.given("--seed")) apply_seed(r.cfg, r.file.at("seed").get<std::uint64_t>());
        if (r.file.contains("threads") && !r.given("--threads")) f.threads = r.file.at("threads").get<std::size_t>();
        if (r.file.contains("precision") && !r.given("--precision")) f.precision = r.file.at("precision").get<std::string>();
        if (r.file.contains("out") && !r.given("--out")) f.out_dir = r.file.at("out").get<std::string>();
    }
    apply_flags(r);

    if (f.precision == "fp64") {
        r.dtype = DType::F64;
    } else if (f.precision == "fp32") {
        r.dtype = DType::F32;
    } else {
        throw ConfigError("--precision must be fp64 or fp32");
    }
    set_num_threads(f.threads ? f.threads : std::max(1u, std::thread::hardware_concurrency()));

    r.out = f.out_dir.empty() ? fs::path("runs") / name : fs::path(f.out_dir);
    if (!r.given("--cache-dir") && !r.file.contains("cache_dir")) r.cfg.cache_dir = (r.out / "checkpoints").string();

    r.cfg.net.validate();
    r.cfg.train.validate();
    for (const auto& a : r.cfg.plan.attacks) a.validate();
    if (!(r.cfg.calibration.fraction > 0.0 && r.cfg.calibration.fraction <= 1.0)) {
        throw ConfigError("--calib-fraction must lie in (0, 1]");
    }
    fs::create_directories(r.out);
}

json effective_config(const Run& r) {
    json j = r.cfg;
    j["subcommand"] = r.sub->get_name();
    j["threads"] = num_threads();
    j["precision"] = r.f.precision;
    j["out"] = r.out.string();
    if (!r.f.model_path.empty()) j["model"] = r.f.model_path;
    if (!r.f.calibration_path.empty()) j["calibration"] = r.f.calibration_path;
    return j;
}

// ---- shared steps --------------------------------------------------------

struct Loaded {
    DataSplits data;
    Model model;
    std::string id;
};

Loaded load_model(const Run& r, bool need_data = true) {
    Loaded l;
    if (need_data || r.f.model_path.empty()) l.data = load_data(r.cfg.data);
    if (!r.f.model_path.empty()) {
        l.model = Model::load_file(r.f.model_path);
        l.id = fs::path(r.f.model_path).stem().string();
        if (l.data.train.size() && l.model.spec().classes != l.data.train.classes) {
            throw DataError("checkpoint has " + std::to_string(l.model.spec().classes) + " classes, data has " +
                            std::to_string(l.data.train.classes));
        }
        return l;
    }
    ObtainedModel om = obtain_model(r.cfg, l.data, spec_for_data(r.cfg.net, l.data), r.cfg.train);
    l.model = std::move(om.model);
    l.id = om.id;
    return l;
}

std::map<std::size_t, SparsifierState> statistics(const Run& r, const Loaded& l) {
    if (!r.f.calibration_path.empty()) return load_calibration(r.f.calibration_path);
    std::vector<std::size_t> sites(l.model.site_count());
    for (std::size_t i = 0; i < sites.size(); ++i) sites[i] = i;
    return calibrate(l.model, sites, l.data.train, r.cfg.calibration);
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

void print_rows(const EvalReport& report) {
    std::size_t wv = 7, wa = 6, wp = 9;
    for (const auto& row : report.rows) {
        wv = std::max(wv, row.variant.size());
        wa = std::max(wa, row.attack.size());
        wp = std::max(wp, row.placement.size());
    }
    auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
    std::cout << pad("variant", wv) << "  " << pad("alpha", 6) << "  " << pad("placement", wp) << "  "
              << pad("attack", wa) << "  " << pad("clean", 7) << "  " << pad("robust", 7) << "  status\n";
    for (const auto& row : report.rows) {
        char a[16];
        std::snprintf(a, sizeof a, "%.3g", row.alpha);
        std::cout << pad(row.variant, wv) << "  " << pad(a, 6) << "  " << pad(row.placement, wp) << "  "
                  << pad(row.attack, wa) << "  " << pad(pct(row.clean_acc), 7) << "  " << pad(pct(row.robust_acc), 7)
                  << "  " << row.status << '\n';
    }
    if (report.selected_alpha) std::cout << "selected alpha: " << *report.selected_alpha << '\n';
}

void write_outputs(const Run& r, const EvalReport& report, const std::vector<std::string>& ids) {
    write_report_csv((r.out / "report.csv").string(), report);
    write_timings_csv((r.out / "timings.csv").string(), report);
    write_plotdata_csv((r.out / "plotdata.csv").string(), report);
    write_manifest((r.out / "manifest.json").string(), effective_config(r), report, ids);
}

// ---- subcommands ---------------------------------------------------------

int cmd_train(const Run& r) {
    const DataSplits data = load_data(r.cfg.data);
    ObtainedModel om = obtain_model(r.cfg, data, spec_for_data(r.cfg.net, data), r.cfg.train);
    om.model.save_file((r.out / "model.ckpt").string(), r.dtype);
    if (!om.history.empty()) {
        std::ofstream hist(r.out / "history.csv");
        write_history_csv(hist, om.history);
    }
    write_manifest((r.out / "manifest.json").string(), effective_config(r), EvalReport{}, {om.id});
    const Dataset eval = eval_split(r.cfg, data);
    std::cout << "model " << om.id << (om.trained ? " trained" : " loaded from cache") << ", clean test accuracy "
              << pct(100.0 * clean_accuracy(om.model, eval)) << "%\n";
    return 0;
}

int cmd_calibrate(const Run& r) {
    const Loaded l = load_model(r);
    const auto stats = statistics(r, l);
    save_calibration((r.out / "calibration.bin").string(), stats);
    write_manifest((r.out / "manifest.json").string(), effective_config(r), EvalReport{}, {l.id});
    for (const auto& [site, s] : stats) {
        double sigma = 0.0;
        for (double v : s.sigma) sigma += v;
        std::cout << "site " << site << ": " << s.channels << " channels, mean sigma "
                  << sigma / static_cast<double>(s.channels) << '\n';
    }
    return 0;
}

int cmd_attack(const Run& r) {
    Loaded l = load_model(r);
    const double alpha = parse_rational(r.f.alpha);
    if (!(alpha >= 0.0)) throw ConfigError("--alpha must be >= 0");
    l.model.clear_sparsifiers();
    if (alpha > 0.0) attach(l.model, statistics(r, l), r.cfg.plan.placement, alpha, r.cfg.plan.centering);
    const Dataset eval = eval_split(r.cfg, l.data);
    SweepPlan plan = r.cfg.plan;
    plan.alphas = {alpha};
    EvalReport report;
    for (const auto& a : plan.attacks) {
        const RobustResult res = evaluate_robust(l.model, eval, a, plan.eval_batch);
        ReportRow row;
        row.kind = "attack";
        row.alpha = alpha;
        row.placement = plan.placement.to_string();
        row.centering = std::string(centering_name(plan.centering));
        row.attack = a.label();
        row.norm = std::string(norm_name(a.norm));
        row.epsilon = a.epsilon;
        row.clean_acc = 100.0 * res.clean_acc;
        row.robust_acc = 100.0 * res.robust_acc;
        row.seed = a.seed;
        row.model_id = l.id;
        row.base = alpha == 0.0;
        if (!res.all_feasible) row.status = "infeasible";
        report.rows.push_back(row);
    }
    write_outputs(r, report, {l.id});
    print_rows(report);
    return 0;
}

int cmd_sweep(const Run& r) {
    r.cfg.plan.validate();  // before any training
    const Loaded l = load_model(r);
    const auto stats = statistics(r, l);
    const Dataset eval = eval_split(r.cfg, l.data);
    EvalReport report = alpha_sweep(l.model, stats, eval, r.cfg.plan, l.id);
    report.selected_alpha = select_alpha(report, r.cfg.max_clean_drop);
    write_outputs(r, report, {l.id});
    print_rows(report);
    return 0;
}

int cmd_select(const Run& r) {
    if (r.f.report_path.empty()) throw ConfigError("select needs --report <report.csv>");
    const EvalReport report = read_report_csv(r.f.report_path);
    const double alpha = select_alpha(report, r.cfg.max_clean_drop, r.f.attack_label, r.f.variant);
    json out{{"report", r.f.report_path},
             {"max_clean_drop", r.cfg.max_clean_drop},
             {"attack", r.f.attack_label},
             {"variant", r.f.variant},
             {"selected_alpha", alpha}};
    std::ofstream(r.out / "selection.json") << out.dump(2) << '\n';
    std::cout << alpha << '\n';
    return 0;
}

int cmd_ablate(const Run& r) {
    const AblationKind kind = parse_ablation(r.f.ablation);
    r.cfg.plan.validate();
    const DataSplits data = load_data(r.cfg.data);
    const EvalReport report = run_ablation(kind, r.cfg, data);
    std::vector<std::string> ids;
    for (const auto& row : report.rows)
        if (std::find(ids.begin(), ids.end(), row.model_id) == ids.end()) ids.push_back(row.model_id);
    write_outputs(r, report, ids);
    print_rows(report);
    return 0;
}

int cmd_proxdemo(const Run& r) {
    const Flags& f = r.f;
    ProxProblem p;
    if (f.problem == "quadratic") {
        p = quadratic_toy(f.seed);
    } else if (f.problem == "regression") {
        p = regression_toy(f.seed);
    } else {
        throw ConfigError("--problem must be quadratic or regression");
    }
    if (r.given("--gamma")) p.gamma = f.gamma;
    if (r.given("--lambda0")) p.lambda0 = f.lambda0;
    if (r.given("--decay")) p.decay = f.decay;
    if (f.iters == 0) throw ConfigError("--iters must be positive");
    // Default step on the quadratic: exact minimization at the smallest lambda
    // of the run, so every iteration contracts. The regression default was
    // found by a scan.
    double step = f.step;
    if (!r.given("--step")) {
        const double lambda_min = p.lambda0 * std::pow(p.decay, static_cast<double>(f.iters - 1));
        step = f.problem == "quadratic" ? 1.0 / (1.0 + 1.0 / lambda_min) : 0.005;
    }
    const fs::path trace_path = r.out / "trace.csv";
    PenaltyResult res;
    try {
        res = penalty_solve(p, f.iters, step);
    } catch (const DivergenceError& e) {
        std::ofstream out(trace_path);
        write_trace_csv(out, e.trace());
        throw;
    }
    {
        std::ofstream out(trace_path);
        write_trace_csv(out, res.trace);
    }
    json manifest{{"subcommand", "proxdemo"},
                  {"problem", f.problem},
                  {"seed", f.seed},
                  {"gamma", p.gamma},
                  {"lambda0", p.lambda0},
                  {"decay", p.decay},
                  {"iters", f.iters},
                  {"step", step},
                  {"git_hash", git_hash()}};
    std::ofstream(r.out / "manifest.json") << manifest.dump(2) << '\n';
    const TraceRow& last = res.trace.back();
    std::cout << "iterations " << res.trace.size() << ", final lambda " << last.lambda << ", objective "
              << last.objective << ", penalty gap " << last.penalty_gap << ", active " << last.active_count << '\n';
    return 0;
}

int cmd_report(const Run& r) {
    if (r.f.report_path.empty()) throw ConfigError("report needs --report <report.csv>");
    EvalReport report = read_report_csv(r.f.report_path);
    write_plotdata_csv((r.out / "plotdata.csv").string(), report);
    print_rows(report);
    return 0;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"MeanSparse: post-training robustness enhancement by mean-centered feature sparsification"};
    app.name("meansparse");
    app.require_subcommand(1, 1);
    Run r;
    Flags& f = r.f;

    auto* train = app.add_subcommand("train", "Train (or load from cache) a mini-ResNet");
    add_run_options(train, f);
    add_data_options(train, f);
    add_model_options(train, f);

    auto* calibrate_cmd = app.add_subcommand("calibrate", "Compute per-site feature statistics");
    add_run_options(calibrate_cmd, f);
    add_data_options(calibrate_cmd, f);
    add_model_options(calibrate_cmd, f);
    add_calibration_options(calibrate_cmd, f);

    auto* attack = app.add_subcommand("attack", "Clean and robust accuracy at one alpha");
    add_run_options(attack, f);
    add_data_options(attack, f);
    add_model_options(attack, f);
    add_calibration_options(attack, f);
    add_attack_options(attack, f);
    attack->add_option("--alpha", f.alpha, "Threshold multiplier (0 disables the sparsifiers)");

    auto* sweep = app.add_subcommand("sweep", "Evaluate a grid of alpha values");
    add_run_options(sweep, f);
    add_data_options(sweep, f);
    add_model_options(sweep, f);
    add_calibration_options(sweep, f);
    add_attack_options(sweep, f);
    sweep->add_option("--alpha-grid", f.alpha_grid, "Comma-separated alphas; must include 0");
    sweep->add_option("--max-clean-drop", f.max_clean_drop, "Allowed clean accuracy drop in points");

    auto* select = app.add_subcommand("select", "Pick alpha from a sweep report");
    add_run_options(select, f);
    select->add_option("--report", f.report_path, "report.csv of a sweep")->required();
    select->add_option("--max-clean-drop", f.max_clean_drop, "Allowed clean accuracy drop in points");
    select->add_option("--attack-label", f.attack_label, "Attack column to use (default: the first)");
    select->add_option("--variant", f.variant, "Variant to use (default: empty)");

    auto* ablate = app.add_subcommand("ablate", "Run one ablation study");
    add_run_options(ablate, f);
    add_data_options(ablate, f);
    add_model_options(ablate, f);
    add_calibration_options(ablate, f);
    add_attack_options(ablate, f);
    ablate->add_option("kind", f.ablation, "activation, threat, at, centering, power or placement")->required();
    ablate->add_option("--alpha-grid", f.alpha_grid, "Comma-separated alphas; must include 0");

    auto* prox = app.add_subcommand("proxdemo", "Penalty-method demo for the l0 proximal operator");
    add_run_options(prox, f);
    prox->add_option("--problem", f.problem, "quadratic or regression");
    prox->add_option("--gamma", f.gamma, "l0 weight");
    prox->add_option("--lambda0", f.lambda0, "Initial penalty parameter");
    prox->add_option("--decay", f.decay, "Geometric lambda decay");
    prox->add_option("--iters", f.iters, "Iterations");
    prox->add_option("--step", f.step, "Gradient step (default: derived from the final lambda)");

    auto* report = app.add_subcommand("report", "Print a report and write its plot data");
    add_run_options(report, f);
    report->add_option("--report", f.report_path, "report.csv to summarize")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        CLI::App* active = &app;
        for (auto* s : app.get_subcommands()) active = s;
        std::cerr << "error: " << e.what() << "\n\n" << active->help();
        return 2;
    }

    r.sub = app.get_subcommands().front();
    const std::string name = r.sub->get_name();
    try {
        setup(r, name);
        if (name == "train") return cmd_train(r);
        if (name == "calibrate") return cmd_calibrate(r);
        if (name == "attack") return cmd_attack(r);
        if (name == "sweep") return cmd_sweep(r);
        if (name == "select") return cmd_select(r);
        if (name == "ablate") return cmd_ablate(r);
        if (name == "proxdemo") return cmd_proxdemo(r);
        return cmd_report(r);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace meansparse::cli
