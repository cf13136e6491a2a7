#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "meansparse/autograd.hpp"
#include "meansparse/sparsifier.hpp"

namespace meansparse {

enum class ActivationKind { Relu, Elu, Gelu, Silu, PSilu, PSSilu };

std::string_view activation_name(ActivationKind kind);  // "relu", "elu", ...
ActivationKind parse_activation(std::string_view text);
bool is_parametric(ActivationKind kind);

// Learnable parameters of parametric kinds. PSSiLU is
//   f(x) = x * (sigmoid(beta x) - shift) / (1 - shift),  beta > 0, 0 <= shift < 1
// which reduces to PSiLU at shift = 0 and to SiLU at beta = 1, shift = 0.
struct ActivationParams {
    double beta = 1.0;
    double shift = 0.0;
};

double activation_value(ActivationKind kind, double x, const ActivationParams& p = {});
Tensor activation_eval(ActivationKind kind, const Tensor& x, const ActivationParams& p = {});
// Tape form; beta/shift are scalar vars consumed only by parametric kinds.
Var apply_activation(ActivationKind kind, Var x, Var beta, Var shift);

enum class SiteRole { Stem, MainPath, AfterAddition };
std::string_view site_role_name(SiteRole role);

enum class LayerKind { Normalize, Conv, BatchNorm, Activation, Add, GlobalPool, Linear };

// Flat description of the network graph; inputs name the producing nodes.
struct LayerNode {
    LayerKind kind;
    std::string name;
    std::vector<std::string> inputs;
    std::size_t in_channels = 0, out_channels = 0, stride = 1;
    int site = -1;  // activation site index, Activation nodes only
    std::size_t block = 0;  // 1-based residual block, 0 outside blocks
};

struct NetSpec {
    std::size_t in_channels = 3, height = 32, width = 32;
    std::size_t blocks = 4;
    // widths[0] is the stem; widths[1..] are the stage widths.
    std::vector<std::size_t> widths{16, 16, 32, 64};
    std::size_t classes = 10;
    ActivationKind activation = ActivationKind::Relu;
    ActivationParams activation_init{};
    // Folded into the first layer as (x - mean) / std per input channel.
    std::vector<double> input_mean{0.4914, 0.4822, 0.4465};
    std::vector<double> input_std{0.2471, 0.2435, 0.2616};

    void validate() const;
    std::size_t site_count() const { return 2 * blocks + 1; }
    // Residual blocks per stage; earlier stages absorb the remainder.
    std::vector<std::size_t> blocks_per_stage() const;
    std::vector<LayerNode> layers() const;
    SiteRole site_role(std::size_t site) const;
};

void to_json(nlohmann::json& j, const NetSpec& s);
void from_json(const nlohmann::json& j, NetSpec& s);

struct Conv {
    Tensor weight;  // [out, in, k, k]
    std::size_t stride = 1, pad = 0;
};

struct BatchNorm {
    Tensor gamma, beta;
    Tensor running_mean, running_var;  // running_var holds the unbiased estimate
    double momentum = 0.1;
    double eps = 1e-5;
};

struct ResidualBlock {
    Conv conv1;
    BatchNorm bn1;
    Conv conv2;
    BatchNorm bn2;
    std::optional<Conv> shortcut_conv;
    std::optional<BatchNorm> shortcut_bn;
};

// Anything attacks can differentiate through: maps inputs [N,C,H,W] in
// [0,1] to logits [N,K] on the caller's tape. Implementations are read-only
// during logits(), so one instance may serve several threads.
class Classifier {
   public:
    virtual ~Classifier() = default;
    virtual Var logits(Tape& tape, Var x) const = 0;
    virtual std::size_t classes() const = 0;
};

struct NamedTensor {
    std::string name;
    Tensor* tensor;
    bool trainable;
    bool decay;  // weight decay applies
};

// Called at every activation site with the pre-activation value, before the
// sparsifier runs.
using SiteObserver = std::function<void(std::size_t site, const Tensor& pre_activation)>;

class Model : public Classifier {
   public:
    Model() = default;
    Model(NetSpec spec, std::uint64_t seed);

    const NetSpec& spec() const noexcept { return spec_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t classes() const override { return spec_.classes; }
    std::size_t site_count() const { return spec_.site_count(); }
    std::size_t site_channels(std::size_t site) const;

    // Eval forward: parameters are constants, batch norm uses running
    // statistics, attached sparsifiers apply.
    Var logits(Tape& tape, Var x) const override;
    Var forward(Tape& tape, Var x, const SiteObserver& observer, bool apply_sparsifiers) const;
    // Training forward: parameters bound as leaves, batch statistics, running
    // statistics updated.
    Var forward_train(Tape& tape, Var x);

    std::vector<NamedTensor> named_tensors();
    std::vector<NamedTensor> parameters();
    void zero_grad();
    // Keeps parametric activations inside their domain after an update.
    void project_activation_params();
    ActivationParams activation_params(std::size_t site) const;

    const std::optional<SparsifierState>& sparsifier(std::size_t site) const;
    void set_sparsifier(std::size_t site, SparsifierState state);
    void clear_sparsifiers();
    std::size_t sparsifier_count() const;
    void set_alpha(double alpha);

    void save(std::ostream& out, DType dtype = DType::F64) const;
    static Model load(std::istream& in);
    void save_file(const std::string& path, DType dtype = DType::F64) const;
    static Model load_file(const std::string& path);

   private:
    Var run(Tape& tape, Var x, bool train, const SiteObserver* observer, bool apply_sparsifiers);
    std::size_t check_site(std::size_t site) const;

    NetSpec spec_;
    std::uint64_t seed_ = 0;
    Conv stem_;
    BatchNorm stem_bn_;
    std::vector<ResidualBlock> blocks_;
    Tensor fc_weight_, fc_bias_;
    std::vector<Tensor> act_beta_, act_shift_;  // one scalar per site
    std::vector<std::optional<SparsifierState>> sparsifiers_;
};

Model build_mini_resnet(const NetSpec& spec, std::uint64_t seed);

// argmax over classes for each row of logits [N, K]; ties go to the lower class.
std::vector<int> predict(const Tensor& logits);

}  // namespace meansparse
