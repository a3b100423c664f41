#include "cla/ssl_objectives.hpp"

namespace cla::ssl {

const char* objective_name(Objective o) { return o == Objective::simsiam ? "simsiam" : "simclr"; }

Objective objective_from_name(const std::string& s) {
    if (s == "simsiam") return Objective::simsiam;
    if (s == "simclr") return Objective::simclr;
    throw UsageError("unknown ssl objective: " + s);
}

ad::Var neg_cosine(ad::Var a, ad::Var b) {
    ad::Graph& g = *a.g;
    const Tensor& A = g.value(a);
    const Tensor& B = g.value(b);
    if (!A.same_shape(B))
        throw DimensionError("neg_cosine: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    const double r = static_cast<double>(A.rows());
    ad::Var an = ad::l2_normalize(a);
    ad::Var bn = ad::l2_normalize(b);
    return ad::scale(ad::sum_all(ad::mul(an, bn)), -1.0 / r);
}

ad::Var simsiam_loss(ad::Graph& g, ad::Var z1, ad::Var z2, nets::Mlp& predictor, bool training) {
    if (g.value(z1).cols() != predictor.output_width())
        throw DimensionError("simsiam_loss: predictor output width must equal feature width");
    ad::Var p1 = predictor.forward(g, z1, training);
    ad::Var p2 = predictor.forward(g, z2, training);
    ad::Var l1 = neg_cosine(p1, ad::detach(z2));
    ad::Var l2 = neg_cosine(p2, ad::detach(z1));
    return ad::add(ad::scale(l1, 0.5), ad::scale(l2, 0.5));
}

ad::Var nt_xent(ad::Var z1, ad::Var z2, double temperature) {
    ad::Graph& g = *z1.g;
    const Tensor& A = g.value(z1);
    const Tensor& B = g.value(z2);
    if (!A.same_shape(B))
        throw DimensionError("nt_xent: view shapes differ");
    if (!(temperature > 0.0)) throw DimensionError("nt_xent: temperature must be positive");
    const std::size_t b = A.rows();
    if (b < 2) throw DimensionError("nt_xent: batch of 1 has no negatives");

    ad::Var u = ad::l2_normalize(ad::concat_rows(z1, z2));
    ad::Var sim = ad::scale(ad::matmul(u, ad::transpose(u)), 1.0 / temperature);

    const std::size_t n = 2 * b;
    Tensor mask = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) mask.at(i, i) = -1e9;
    sim = ad::add(sim, g.constant(std::move(mask)));

    std::vector<int> targets(n);
    for (std::size_t i = 0; i < b; ++i) {
        targets[i] = static_cast<int>(i + b);
        targets[i + b] = static_cast<int>(i);
    }
    return ad::softmax_cross_entropy_rows(sim, std::move(targets));
}

ad::Var ssl_loss(ad::Graph& g, Objective obj, ad::Var z1, ad::Var z2, nets::Mlp& predictor,
                 bool training, double temperature) {
    if (obj == Objective::simsiam) return simsiam_loss(g, z1, z2, predictor, training);
    return nt_xent(z1, z2, temperature);
}

ad::Var ssl_pair_loss(ad::Graph& g, Objective obj, ad::Var current, ad::Var target,
                      nets::Mlp& predictor, bool training, double temperature) {
    ad::Var t = ad::detach(target);
    if (obj == Objective::simsiam) return neg_cosine(predictor.forward(g, current, training), t);
    return nt_xent(current, t, temperature);
}

}  // namespace cla::ssl
