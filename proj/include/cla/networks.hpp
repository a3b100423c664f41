#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cla/autodiff.hpp"
#include "cla/binio.hpp"
#include "cla/rng.hpp"
#include "cla/tensor.hpp"

namespace cla::nets {

struct MlpSpec {
    std::vector<std::size_t> layer_widths;  // [in, hidden..., out]
    std::vector<bool> hidden_batch_norm;    // one flag per hidden layer; empty = none
    bool final_relu = false;

    std::size_t layer_count() const { return layer_widths.size() - 1; }
    void validate() const;

    static MlpSpec linear(std::size_t in, std::size_t out) { return MlpSpec{{in, out}, {}, false}; }
};

struct Layer {
    Tensor w;  // [in x out]
    Tensor b;  // [out]
    bool has_bn = false;
    Tensor gamma, beta;
    std::vector<double> run_mean, run_var;
};

/// Fully connected network: linear -> (batch_norm) -> relu on hidden
/// layers, optional relu on the output.
class Mlp {
public:
    Mlp() = default;
    Mlp(MlpSpec s, Rng& rng);

    /// Identity map: single [w x w] layer with unit weights, zero bias.
    static Mlp identity(std::size_t width);

    std::size_t input_width() const { return spec.layer_widths.front(); }
    std::size_t output_width() const { return spec.layer_widths.back(); }

    /// Graph forward. `frozen` mounts all parameters as constants and
    /// suppresses running-stat updates; batch-norm layers use batch
    /// statistics only when training and not frozen.
    ad::Var forward(ad::Graph& g, ad::Var x, bool training, bool frozen = false);

    /// Plain eval-mode forward (running stats, no graph, no gradients).
    Tensor infer(const Tensor& x) const;

    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
    std::vector<std::vector<double>*> state_buffers();
    std::vector<const std::vector<double>*> state_buffers() const;

    void save(binio::Writer& w) const;
    static Mlp load(binio::Reader& r);

    MlpSpec spec;
    std::vector<Layer> layers;
};

/// The learner theta: encoder followed by projector. Alignment and SSL
/// losses act on projector outputs z; probing reads encoder outputs.
struct LearnerNet {
    Mlp encoder;
    Mlp projector;

    ad::Var encode(ad::Graph& g, ad::Var x, bool training, bool frozen = false) {
        return encoder.forward(g, x, training, frozen);
    }
    ad::Var project(ad::Graph& g, ad::Var x, bool training, bool frozen = false) {
        return projector.forward(g, encode(g, x, training, frozen), training, frozen);
    }

    Tensor infer_features(const Tensor& x) const { return encoder.infer(x); }
    Tensor infer_projected(const Tensor& x) const { return projector.infer(encoder.infer(x)); }

    std::size_t feature_width() const { return projector.output_width(); }

    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
    std::vector<std::vector<double>*> state_buffers();

    void save(binio::Writer& w) const;
    static LearnerNet load(binio::Reader& r);
};

/// Construction recipe for the full network set.
struct NetworkArch {
    MlpSpec encoder;
    MlpSpec projector;
    MlpSpec predictor;
    MlpSpec align_proj;

    /// Desk-scale default: encoder [d,128,128] (relu+BN hidden),
    /// projector [128,64], predictor [64,32,64] (BN hidden), a_phi
    /// [64,64,64] (relu, no BN).
    static NetworkArch desk_default(std::size_t input_dim);

    void validate() const;
    void save(binio::Writer& w) const;
    static NetworkArch load(binio::Reader& r);
};

struct NetworkSet {
    LearnerNet theta;
    Mlp predictor;   // SimSiam head h
    Mlp align_proj;  // a_phi : Z -> Z
    std::optional<LearnerNet> ema_theta;
    std::optional<LearnerNet> frozen_theta;

    static NetworkSet make(const NetworkArch& arch, Rng& rng);

    void save(binio::Writer& w) const;
    static NetworkSet load(binio::Reader& r);
};

/// theta' <- tau * theta' + (1 - tau) * theta, elementwise over all
/// parameters and running statistics. tau in [0,1].
void ema_update(const LearnerNet& theta, LearnerNet& ema, double tau);

/// Deep copy whose parameters are permanently constant.
LearnerNet snapshot_frozen(const LearnerNet& theta);

struct SgdState {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::vector<std::vector<double>> velocity;  // aligned with the param list

    SgdState() = default;
    SgdState(double lr, double mom, double wd);

    void save(binio::Writer& w) const;
    static SgdState load(binio::Reader& r);
};

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
/// Consumes (clears) parameter gradients.
void sgd_step(const std::vector<Tensor*>& params, SgdState& st);

/// Bitwise-lossless persistence of networks plus optimizer state.
void save_checkpoint(const NetworkSet& nets, const SgdState& opt, const std::string& path);
struct Checkpoint {
    NetworkSet nets;
    SgdState opt;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cla::nets
