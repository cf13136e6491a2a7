#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "meansparse/data.hpp"
#include "meansparse/nn.hpp"

namespace meansparse {

enum class Norm { Linf, L2 };
enum class AttackLoss { CrossEntropy, DLR };
enum class AttackKind { FGSM, PGD, MomentumPGD };

std::string_view norm_name(Norm n);  // "linf", "l2"
Norm parse_norm(std::string_view text);
std::string_view attack_loss_name(AttackLoss l);  // "ce", "dlr"
AttackLoss parse_attack_loss(std::string_view text);
std::string_view attack_kind_name(AttackKind k);  // "fgsm", "pgd", "mpgd"
AttackKind parse_attack_kind(std::string_view text);

// "8/255", "0.03" or "1e-2"; the rational form divides once in fp64.
double parse_rational(std::string_view text);

struct AttackSpec {
    AttackKind kind = AttackKind::PGD;
    Norm norm = Norm::Linf;
    double epsilon = 8.0 / 255.0;  // pixel units
    std::size_t steps = 10;
    double step_size = 0.0078;
    std::size_t restarts = 1;
    AttackLoss loss = AttackLoss::CrossEntropy;
    std::uint64_t seed = 0;
    // Unset: random start iff restarts > 1.
    std::optional<bool> random_start;
    // Momentum variant only.
    double momentum = 0.75;
    bool step_halving = true;

    void validate() const;
    bool uses_random_start() const { return random_start.value_or(restarts > 1); }
    std::string label() const;  // e.g. "pgd-linf-8/255" style summary, for reports
};

// Step fractions at which the momentum variant halves its step size.
inline constexpr double kHalvingFractions[] = {0.22, 0.44, 0.66, 0.88};

// Called with every iterate (after projection) of each restart.
using IterateObserver = std::function<void(std::size_t restart, std::size_t step, const Tensor& x_adv)>;

// x: [N, C, H, W] in [0,1]; y: N labels. first_index is the dataset index of
// row 0, which seeds that row's random stream as seed ^ index. Every row is
// attacked independently of the others, so results do not depend on how a
// dataset is chunked.
Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec);
Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
           std::uint64_t first_index = 0, const IterateObserver& observer = {});
// Gradient momentum (normalized accumulation), step halving, best-loss iterate.
Tensor momentum_pgd_ce(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                       std::uint64_t first_index = 0, const IterateObserver& observer = {});
Tensor run_attack(const Classifier& model, const Tensor& x, std::span<const int> y, const AttackSpec& spec,
                  std::uint64_t first_index = 0);

// Per-row attack loss on logits [N, K].
std::vector<double> per_sample_loss(const Tensor& logits, std::span<const int> y, AttackLoss loss);
// DLR needs 4 classes; below that the cross-entropy loss is used, with a warning.
AttackLoss effective_loss(AttackLoss requested, std::size_t classes);

// Distance of x_adv from x in the attack's norm, per row.
std::vector<double> perturbation_norms(const Tensor& x, const Tensor& x_adv, Norm norm);
// True when every row lies in the epsilon ball (l2 with 1e-9 relative slack)
// and every value lies in [0,1].
bool feasible(const Tensor& x, const Tensor& x_adv, Norm norm, double epsilon);

struct RobustResult {
    double clean_acc = 0.0;
    double robust_acc = 0.0;
    std::vector<bool> clean_correct;
    std::vector<bool> robust_correct;  // false whenever clean_correct is false
    bool all_feasible = true;
};

// Accuracies on clean inputs and on attacked inputs. Batches run in
// parallel; the result is identical for any thread count.
RobustResult evaluate_robust(const Classifier& model, const Dataset& data, const AttackSpec& spec,
                             std::size_t batch_size = 100);
double clean_accuracy(const Classifier& model, const Dataset& data, std::size_t batch_size = 250);

}  // namespace meansparse
