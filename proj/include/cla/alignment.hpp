#pragma once

#include "cla/networks.hpp"
#include "cla/ssl_objectives.hpp"

namespace cla::align {

enum class Variant { none, cla_b, cla_e, cla_r, cassle, cassle_r };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& s);

enum class AlignLoss { neg_cosine, ssl_loss };

struct AlignmentConfig {
    Variant variant = Variant::none;
    double omega = 0.0;  // fixed to 1 for CaSSLe variants

    bool is_cassle() const { return variant == Variant::cassle || variant == Variant::cassle_r; }
    bool needs_ema() const { return variant == Variant::cla_b || variant == Variant::cla_e; }
    bool needs_feature_buffer() const { return variant == Variant::cla_r; }
    bool replay_only_targets() const {
        return variant == Variant::cla_e || variant == Variant::cla_r || variant == Variant::cassle_r;
    }
    double effective_omega() const { return is_cassle() ? 1.0 : omega; }
};

/// Generalized alignment regularizer:
///   L_reg = 0.5*L_alg(a_phi(z1), t1) + 0.5*L_alg(a_phi(z2), t2),
/// with constant targets. `predictor`/`temperature` only matter when
/// align_loss is the SSL objective itself (predictor may be null otherwise).
ad::Var reg_generalized(ad::Graph& g, ad::Var z1, ad::Var z2, nets::Mlp& a_phi,
                        ad::Var target1, ad::Var target2, AlignLoss align_loss,
                        ssl::Objective obj, nets::Mlp* predictor, bool training,
                        double temperature);

/// Alignment to EMA targets on the stream views:
///   0.5*(-S_C(a_phi(z1), theta'(x1))) + 0.5*(-S_C(a_phi(z2), theta'(x2))).
/// Targets are computed under stop-gradient in eval mode.
ad::Var cla_b_reg(ad::Graph& g, ad::Var z1, ad::Var z2, nets::Mlp& a_phi,
                  nets::LearnerNet& ema_theta, const Tensor& x1, const Tensor& x2,
                  bool training);

/// Alignment to EMA targets on replay views only. Empty replay (cold
/// start) yields a constant zero.
ad::Var cla_e_reg(ad::Graph& g, ad::Var z_r1, ad::Var z_r2, nets::Mlp& a_phi,
                  nets::LearnerNet& ema_theta, const Tensor& x_r1, const Tensor& x_r2,
                  bool training);

/// Alignment of replay features to stored buffer features z*.
ad::Var cla_r_reg(ad::Graph& g, ad::Var z_r1, ad::Var z_r2, nets::Mlp& a_phi, ad::Var z_star,
                  bool training);

/// L = ssl + omega * reg.
ad::Var total_loss(ad::Var ssl, ad::Var reg, double omega);

/// CaSSLe regularizer: L_alg is the SSL loss itself, targets from the
/// frozen boundary snapshot on the given views, omega fixed to 1 by the
/// caller. Used for both CaSSLe (stream views) and CaSSLe-R (replay views).
ad::Var cassle_reg(ad::Graph& g, ad::Var z1, ad::Var z2, nets::Mlp& a_phi,
                   nets::LearnerNet& frozen_theta, const Tensor& x1, const Tensor& x2,
                   ssl::Objective obj, nets::Mlp* predictor, bool training, double temperature);

}  // namespace cla::align
