#include "cla/alignment.hpp"

namespace cla::align {

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::none: return "none";
        case Variant::cla_b: return "cla_b";
        case Variant::cla_e: return "cla_e";
        case Variant::cla_r: return "cla_r";
        case Variant::cassle: return "cassle";
        case Variant::cassle_r: return "cassle_r";
    }
    return "none";
}

Variant variant_from_name(const std::string& s) {
    if (s == "none") return Variant::none;
    if (s == "cla_b") return Variant::cla_b;
    if (s == "cla_e") return Variant::cla_e;
    if (s == "cla_r") return Variant::cla_r;
    if (s == "cassle") return Variant::cassle;
    if (s == "cassle_r") return Variant::cassle_r;
    throw UsageError("unknown alignment variant: " + s);
}

namespace {

ad::Var apply_align_loss(ad::Graph& g, ad::Var current, ad::Var target, AlignLoss loss,
                         ssl::Objective obj, nets::Mlp* predictor, bool training,
                         double temperature) {
    if (loss == AlignLoss::neg_cosine) return ssl::neg_cosine(current, target);
    if (predictor == nullptr && obj == ssl::Objective::simsiam)
        throw ProtocolError("alignment: SSL-loss alignment with SimSiam needs the predictor");
    return ssl::ssl_pair_loss(g, obj, current, target, *predictor, training, temperature);
}

void check_constant_target(ad::Graph& g, ad::Var t, const char* who) {
    if (g.node(t.id).requires_grad)
        throw ProtocolError(std::string(who) + ": alignment target must be constant (stop-gradient)");
}

}  // namespace

ad::Var reg_generalized(ad::Graph& g, ad::Var z1, ad::Var z2, nets::Mlp& a_phi,
                        ad::Var target1, ad::Var target2, AlignLoss align_loss,
                        ssl::Objective obj, nets::Mlp* predictor, bool training,
                        double temperature) {
    check_constant_target(g, target1, "reg_generalized");
    check_constant_target(g, target2, "reg_generalized");
    ad::Var a1 = a_phi.forward(g, z1, training);
    ad::Var a2 = a_phi.forward(g, z2, training);
    ad::Var l1 = apply_align_loss(g, a1, target1, align_loss, obj, predictor, training, temperature);
    ad::Var l2 = apply_align_loss(g, a2, target2, align_loss, obj, predictor, training, temperature);
    return ad::add(ad::scale(l1, 0.5), ad::scale(l2, 0.5));
}

ad::Var cla_b_reg(ad::Graph& g, ad::Var z1, ad::Var z2, nets::Mlp& a_phi,
                  nets::LearnerNet& ema_theta, const Tensor& x1, const Tensor& x2,
                  bool training) {
    ad::Var t1 = ema_theta.project(g, g.constant(x1), false, true);
    ad::Var t2 = ema_theta.project(g, g.constant(x2), false, true);
    return reg_generalized(g, z1, z2, a_phi, t1, t2, AlignLoss::neg_cosine,
                           ssl::Objective::simsiam, nullptr, training, 1.0);
}

ad::Var cla_e_reg(ad::Graph& g, ad::Var z_r1, ad::Var z_r2, nets::Mlp& a_phi,
                  nets::LearnerNet& ema_theta, const Tensor& x_r1, const Tensor& x_r2,
                  bool training) {
    if (!z_r1.valid() || g.value(z_r1).rows() == 0) return g.constant(Tensor::scalar(0.0));
    return cla_b_reg(g, z_r1, z_r2, a_phi, ema_theta, x_r1, x_r2, training);
}

ad::Var cla_r_reg(ad::Graph& g, ad::Var z_r1, ad::Var z_r2, nets::Mlp& a_phi, ad::Var z_star,
                  bool training) {
    if (!z_r1.valid() || g.value(z_r1).rows() == 0) return g.constant(Tensor::scalar(0.0));
    check_constant_target(g, z_star, "cla_r_reg");
    if (g.value(z_star).rows() != g.value(z_r1).rows())
        throw DimensionError("cla_r_reg: stored features must be row-aligned with replay samples");
    ad::Var a1 = a_phi.forward(g, z_r1, training);
    ad::Var a2 = a_phi.forward(g, z_r2, training);
    ad::Var l1 = ssl::neg_cosine(a1, z_star);
    ad::Var l2 = ssl::neg_cosine(a2, z_star);
    return ad::add(ad::scale(l1, 0.5), ad::scale(l2, 0.5));
}

ad::Var total_loss(ad::Var ssl, ad::Var reg, double omega) {
    return ad::add(ssl, ad::scale(reg, omega));
}

ad::Var cassle_reg(ad::Graph& g, ad::Var z1, ad::Var z2, nets::Mlp& a_phi,
                   nets::LearnerNet& frozen_theta, const Tensor& x1, const Tensor& x2,
                   ssl::Objective obj, nets::Mlp* predictor, bool training, double temperature) {
    if (!z1.valid() || g.value(z1).rows() == 0) return g.constant(Tensor::scalar(0.0));
    ad::Var t1 = frozen_theta.project(g, g.constant(x1), false, true);
    ad::Var t2 = frozen_theta.project(g, g.constant(x2), false, true);
    return reg_generalized(g, z1, z2, a_phi, t1, t2, AlignLoss::ssl_loss, obj, predictor,
                           training, temperature);
}

}  // namespace cla::align
