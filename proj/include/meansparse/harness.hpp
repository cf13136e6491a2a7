#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "meansparse/attacks.hpp"
#include "meansparse/calibration.hpp"
#include "meansparse/data.hpp"
#include "meansparse/nn.hpp"
#include "meansparse/trainer.hpp"

namespace meansparse {

// PGD-20, l-inf 8/255, step 2/255.
AttackSpec default_eval_attack();

struct SweepPlan {
    std::vector<double> alphas{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5};
    std::vector<AttackSpec> attacks{default_eval_attack()};
    Placement placement{};
    Centering centering = Centering::PerChannelMean;
    std::size_t eval_batch = 100;

    // Throws ConfigError unless the grid holds 0 and every alpha is >= 0.
    void validate() const;
};

struct ReportRow {
    std::string kind;     // ablation kind or "sweep"
    std::string variant;  // e.g. activation name, training method
    double alpha = 0.0;
    std::string placement;
    std::string centering;
    std::string attack;  // AttackSpec::label()
    std::string norm;
    double epsilon = 0.0;
    double clean_acc = 0.0;   // percent
    double robust_acc = 0.0;  // percent
    double eval_seconds = 0.0;
    std::uint64_t seed = 0;
    std::string model_id;
    bool base = false;
    std::string status = "ok";
};

struct EvalReport {
    std::vector<ReportRow> rows;
    std::optional<double> selected_alpha;
};

// Clean and robust accuracy per (alpha, attack). The alpha = 0 row evaluates
// the model with no sparsifier installed; other rows attach the given
// statistics. A failing row is recorded with its error and the sweep goes on.
EvalReport alpha_sweep(const Model& model, const std::map<std::size_t, SparsifierState>& stats, const Dataset& eval,
                       const SweepPlan& plan, const std::string& model_id, const std::string& variant = "",
                       const std::string& kind = "sweep");

struct AlphaPoint {
    double alpha;
    double clean;   // percent
    double robust;  // percent
};

// Alpha with the highest robust accuracy among points whose clean accuracy is
// at least base - max_clean_drop (points); ties go to the smaller alpha. The
// base is the point with alpha = 0. Without a base the answer is 0, with a
// warning.
double select_alpha(std::span<const AlphaPoint> points, double max_clean_drop);
// Uses the ok rows of one attack and variant; an empty attack string means
// the first attack in the report.
double select_alpha(const EvalReport& report, double max_clean_drop, const std::string& attack = "",
                    const std::string& variant = "");

enum class AblationKind { Activation, ThreatNorm, ATMethod, Centering, AttackPower, Placement };
std::string_view ablation_name(AblationKind k);  // "activation", "threat", "at", "centering", "power", "placement"
AblationKind parse_ablation(std::string_view text);

struct DataConfig {
    bool synthetic = true;
    std::string data_dir;
    std::optional<std::pair<std::size_t, std::size_t>> subset;  // CIFAR-10 only
    std::size_t n_train = 2000, n_test = 1000;                  // synthetic only
    std::size_t classes = 10;
    std::size_t spatial = 8;
    std::uint64_t seed = 0;
};

DataSplits load_data(const DataConfig& cfg);

struct ExperimentConfig {
    DataConfig data;
    NetSpec net;
    TrainConfig train;
    SweepPlan plan;
    CalibrationOptions calibration;
    std::string cache_dir = "checkpoints";
    bool no_train = false;
    std::size_t eval_size = 0;  // leading test samples evaluated; 0 means all
    double max_clean_drop = 0.1;
};

void to_json(nlohmann::json& j, const AttackSpec& a);
void from_json(const nlohmann::json& j, AttackSpec& a);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

// Spec adapted to the data: input shape, classes and input normalization
// from the training split.
NetSpec spec_for_data(NetSpec spec, const DataSplits& data);

// Trained model for (spec, train config, data): loaded from the cache when a
// checkpoint with the same identity exists, trained and cached otherwise.
struct ObtainedModel {
    Model model;
    std::string id;
    std::string path;
    bool trained = false;
    std::vector<EpochRecord> history;
};
ObtainedModel obtain_model(const ExperimentConfig& cfg, const DataSplits& data, const NetSpec& spec,
                           const TrainConfig& train_cfg);

Dataset eval_split(const ExperimentConfig& cfg, const DataSplits& data);

EvalReport run_ablation(AblationKind kind, const ExperimentConfig& cfg, const DataSplits& data);

// report.csv: one line per row, without timings, so repeated runs produce
// identical files. timings.csv carries eval_seconds.
void write_report_csv(const std::string& path, const EvalReport& report);
EvalReport read_report_csv(const std::string& path);
void write_timings_csv(const std::string& path, const EvalReport& report);
// alpha vs clean/robust accuracy, one curve per (variant, attack, placement, centering).
void write_plotdata_csv(const std::string& path, const EvalReport& report);
// Config, seeds and build identity of a run.
void write_manifest(const std::string& path, const nlohmann::json& config, const EvalReport& report,
                    const std::vector<std::string>& model_ids);

std::string git_hash();

}  // namespace meansparse
